import type { EngineClient } from "./api.js";
import type { EngineEvent, TaskDetail, TaskSummary } from "./types.js";
import { BOARD_COLUMNS } from "./types.js";

// The console holds no authoritative state: this store is a cache of API
// responses kept current by stream events, and a hard refresh rebuilds it
// identically from the API alone.

export interface PendingAction {
  task_id: string;
  kind: "admin_approval" | "user_reply" | "manager_reply";
  actor_id: string;
  since: string | null;
}

export type Listener = () => void;

export class ConsoleStore {
  tasks = new Map<string, TaskSummary>();
  detail: TaskDetail | null = null;
  detailEvents: EngineEvent[] = [];
  streamStatus: "connected" | "reconnecting" | "stopped" = "stopped";
  metrics: Record<string, unknown> | null = null;
  pendingDecisions = new Set<string>(); // optimistic UI while a POST is in flight
  private appliedSeq = new Map<string, number>();
  private listeners: Listener[] = [];

  constructor(private api: EngineClient) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  // ---- loading -------------------------------------------------------

  async loadBoard(): Promise<void> {
    const items = await this.api.listTasks();
    this.tasks = new Map(items.map((t) => [t.task_id, t]));
    this.notify();
  }

  async openDetail(taskId: string): Promise<void> {
    this.detail = await this.api.getTask(taskId);
    this.detailEvents = await this.api.getEvents(taskId);
    for (const event of this.detailEvents) {
      const seen = this.appliedSeq.get(taskId) ?? 0;
      if (event.seq > seen) this.appliedSeq.set(taskId, event.seq);
    }
    this.notify();
  }

  async loadMetrics(): Promise<void> {
    this.metrics = await this.api.getMetrics();
    this.notify();
  }

  // ---- stream application ---------------------------------------------

  /** Apply one live event; duplicates (same task seq) are ignored. */
  applyEvent(event: EngineEvent): boolean {
    const seen = this.appliedSeq.get(event.task_id) ?? 0;
    if (event.seq <= seen) return false;
    this.appliedSeq.set(event.task_id, event.seq);

    const summary = this.tasks.get(event.task_id);
    if (summary) {
      summary.updated_at = event.at;
      if (event.kind === "state_changed") summary.state = String(event.payload["to"]);
      if (event.kind === "verdict_set") {
        const verdict = event.payload["verdict"] as { label?: string } | undefined;
        summary.verdict = verdict?.label ?? summary.verdict;
      }
    } else {
      // a task we have not seen yet: resync the board lazily
      void this.loadBoard();
    }

    if (this.detail && this.detail.task_id === event.task_id) {
      this.detailEvents.push(event);
      void this.openDetail(event.task_id); // pull the authoritative snapshot
    }
    if (event.kind === "state_changed" || event.kind === "message_in") {
      this.pendingDecisions.delete(event.task_id);
    }
    this.notify();
    return true;
  }

  setStreamStatus(status: "connected" | "reconnecting" | "stopped"): void {
    this.streamStatus = status;
    if (status === "connected") void this.loadBoard(); // resync after any gap
    this.notify();
  }

  // ---- derived views ---------------------------------------------------

  board(): Array<{ column: string; cards: TaskSummary[] }> {
    const byState = new Map<string, TaskSummary[]>();
    for (const task of this.tasks.values()) {
      const bucket = byState.get(task.state) ?? [];
      bucket.push(task);
      byState.set(task.state, bucket);
    }
    return BOARD_COLUMNS.map((column) => ({
      column,
      cards: (byState.get(column) ?? []).sort((a, b) => (b.updated_at ?? "").localeCompare(a.updated_at ?? "")),
    }));
  }

  inbox(): PendingAction[] {
    const pending: PendingAction[] = [];
    for (const task of this.tasks.values()) {
      if (task.state === "AWAITING_ADMIN_AUTH") {
        pending.push({ task_id: task.task_id, kind: "admin_approval", actor_id: task.actor_id, since: task.updated_at });
      } else if (task.state === "AWAITING_USER_REPLY") {
        pending.push({ task_id: task.task_id, kind: "user_reply", actor_id: task.actor_id, since: task.updated_at });
      } else if (task.state === "AWAITING_MANAGER_REPLY") {
        pending.push({ task_id: task.task_id, kind: "manager_reply", actor_id: task.actor_id, since: task.updated_at });
      }
    }
    return pending.sort((a, b) => (a.since ?? "").localeCompare(b.since ?? ""));
  }

  // ---- writes (1:1 with engine endpoints) -------------------------------

  async approve(taskId: string, decision: "approve" | "deny"): Promise<string> {
    this.pendingDecisions.add(taskId);
    this.notify();
    try {
      const outcome = await this.api.submitAdminDecision(taskId, decision);
      return outcome.outcome;
    } catch (error) {
      this.pendingDecisions.delete(taskId);
      await this.loadBoard(); // 409 and friends: refresh to server truth
      if (this.detail?.task_id === taskId) await this.openDetail(taskId);
      this.notify();
      throw error;
    }
  }

  async reply(taskId: string, role: string, text: string): Promise<string> {
    const outcome = await this.api.submitReply(taskId, role, text);
    return outcome.outcome;
  }
}
