import type { ConsoleStore } from "./store.js";
import type { Exchange, PlanItem } from "./types.js";

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

const STATUS_MARK: Record<string, string> = {
  pending: "○",
  in_progress: "◔",
  done: "●",
  skipped: "⊘",
};

export function renderBoard(store: ConsoleStore, root: HTMLElement, onOpen: (taskId: string) => void): void {
  root.replaceChildren();
  for (const { column, cards } of store.board()) {
    if (!cards.length && column !== "AWAITING_ADMIN_AUTH") continue;
    const col = el("div", "column");
    col.append(el("h3", "column-title", `${column} (${cards.length})`));
    for (const card of cards) {
      const node = el("div", `card sev-${card.severity}`);
      node.append(el("div", "card-id", card.task_id.slice(0, 10)));
      node.append(el("div", "card-line", `${card.category} - ${card.actor_id}`));
      if (card.verdict) node.append(el("div", `verdict verdict-${card.verdict}`, card.verdict));
      if (store.pendingDecisions.has(card.task_id)) node.append(el("div", "pending", "decision pending..."));
      node.addEventListener("click", () => onOpen(card.task_id));
      col.append(node);
    }
    root.append(col);
  }
}

export function renderInbox(store: ConsoleStore, root: HTMLElement, onOpen: (taskId: string) => void): void {
  root.replaceChildren();
  const items = store.inbox();
  root.append(el("h3", "panel-title", `Pending actions (${items.length})`));
  for (const item of items) {
    const row = el("div", "inbox-row");
    row.append(el("span", "inbox-kind", item.kind.replace("_", " ")));
    row.append(el("span", "inbox-actor", item.actor_id));
    row.addEventListener("click", () => onOpen(item.task_id));
    root.append(row);
  }
}

function renderPlanSection(items: PlanItem[], title: string, parent: HTMLElement): void {
  if (!items.length) return;
  parent.append(el("h4", "plan-section", title));
  for (const item of items) {
    parent.append(
      el("div", `plan-item plan-${item.status}`, `${STATUS_MARK[item.status] ?? "?"} ${item.description}`),
    );
  }
}

function renderExchange(exchange: Exchange): HTMLElement {
  const row = el("div", `msg msg-${exchange.role}`);
  const who = exchange.role === "agent" ? `agent → ${exchange.respondent}` : exchange.role;
  row.append(el("div", "msg-who", who));
  row.append(el("div", "msg-text", exchange.text));
  if (exchange.flags.length) row.append(el("div", "msg-flags", exchange.flags.join(", ")));
  return row;
}

export function renderDetail(store: ConsoleStore, root: HTMLElement): void {
  root.replaceChildren();
  const detail = store.detail;
  if (!detail) {
    root.append(el("p", "placeholder", "Select a task to inspect it."));
    return;
  }
  root.append(el("h3", "panel-title", `${detail.task_id} - ${detail.state}`));
  root.append(
    el(
      "div",
      "alert-line",
      `${detail.alert.category} / ${detail.alert.severity} - actor ${detail.alert.actor_id}, ` +
        `supervisor ${detail.alert.supervisor_id}`,
    ),
  );

  if (detail.state === "AWAITING_ADMIN_AUTH") {
    const actions = el("div", "decision-actions");
    for (const decision of ["approve", "deny"] as const) {
      const button = el("button", `btn btn-${decision}`, decision) as HTMLButtonElement;
      button.disabled = store.pendingDecisions.has(detail.task_id);
      button.addEventListener("click", () => void store.approve(detail.task_id, decision).catch(() => undefined));
      actions.append(button);
    }
    root.append(actions);
  }

  if (detail.plan) {
    const plan = el("div", "plan");
    renderPlanSection(detail.plan.pre_steps, "PRE", plan);
    renderPlanSection(detail.plan.dynamic_steps, "PLAN", plan);
    renderPlanSection(detail.plan.post_steps, "POST", plan);
    root.append(plan);
  }

  const transcript = el("div", "transcript");
  for (const exchange of detail.transcript.exchanges) transcript.append(renderExchange(exchange));
  root.append(transcript);

  if (detail.verdict) {
    root.append(
      el(
        "div",
        `verdict-box verdict-${detail.verdict.label}`,
        `${detail.verdict.label} (${Math.round(detail.verdict.confidence * 100)}%) - ${detail.verdict.rationale}`,
      ),
    );
  }
  if (detail.disposal) {
    const box = el("div", "disposal");
    for (const action of detail.disposal.actions) {
      box.append(el("div", "disposal-action", `${action.action} → ${action.target} [${action.status}]`));
    }
    root.append(box);
  }

  const awaiting = detail.state.startsWith("AWAITING_") && detail.state !== "AWAITING_ADMIN_AUTH";
  if (awaiting || detail.state === "AWAITING_ADMIN_AUTH") {
    const role = detail.state === "AWAITING_USER_REPLY" ? "user" : detail.state === "AWAITING_MANAGER_REPLY" ? "manager" : "admin";
    const form = el("div", "reply-form");
    const input = el("input", "reply-input") as HTMLInputElement;
    input.placeholder = `reply as ${role}...`;
    const send = el("button", "btn", "send") as HTMLButtonElement;
    send.addEventListener("click", () => {
      if (input.value.trim()) void store.reply(detail.task_id, role, input.value.trim());
      input.value = "";
    });
    form.append(input, send);
    root.append(form);
  }
}

export function renderMetrics(store: ConsoleStore, root: HTMLElement): void {
  root.replaceChildren();
  root.append(el("h3", "panel-title", "Metrics"));
  const metrics = store.metrics;
  if (!metrics || metrics["empty"]) {
    root.append(el("p", "placeholder", "No batch data yet."));
    return;
  }
  const weighted = metrics["weighted"] as { osr?: number; fsr?: number } | undefined;
  const perf = metrics["performance"] as Record<string, number> | undefined;
  if (weighted) root.append(el("div", "metric", `OSR ${weighted.osr?.toFixed(1)}% / FSR ${weighted.fsr?.toFixed(1)}%`));
  if (perf) {
    root.append(el("div", "metric", `mean step ${(perf["mean_step_ms"] / 1000).toFixed(1)}s`));
    root.append(el("div", "metric", `closed ${perf["closed_tasks"]} / ${perf["total_tasks"]}`));
  }
}

export function renderStreamStatus(store: ConsoleStore, root: HTMLElement): void {
  root.textContent = store.streamStatus === "connected" ? "live" : store.streamStatus;
  root.className = `stream-status stream-${store.streamStatus}`;
}
