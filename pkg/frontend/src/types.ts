// Shapes mirrored from the engine's HTTP API. The console never invents
// state of its own: everything rendered comes from these documents.

export interface TaskSummary {
  task_id: string;
  state: string;
  category: string;
  actor_id: string;
  severity: string;
  updated_at: string | null;
  verdict: string | null;
}

export interface Exchange {
  role: string;
  text: string;
  at: string | null;
  round_index: number;
  respondent: string | null;
  correlation_id: string | null;
  flags: string[];
  solicited: boolean;
}

export interface PlanItem {
  item_id: string;
  description: string;
  status: string;
  tool_hint: string | null;
  fixed: boolean;
  note: string | null;
}

export interface TaskDetail {
  task_id: string;
  state: string;
  alert: {
    alert_id: string;
    category: string;
    severity: string;
    actor_id: string;
    supervisor_id: string;
    admin_id: string;
    dimensions: Record<string, unknown>;
  };
  transcript: { exchanges: Exchange[]; rounds: Record<string, number>; flags: string[] };
  plan: { pre_steps: PlanItem[]; dynamic_steps: PlanItem[]; post_steps: PlanItem[]; revision: number } | null;
  evidence: { human_feedback: Array<Record<string, unknown>> };
  verdict: { label: string; confidence: number; rationale: string; consistency_flags: string[] } | null;
  disposal: { actions: Array<{ action: string; target: string; status: string }> } | null;
  admin_decision: string | null;
  wait_deadline: string | null;
}

export interface EngineEvent {
  seq: number;
  task_id: string;
  kind: string;
  payload: Record<string, unknown>;
  at: string;
}

export const BOARD_COLUMNS = [
  "AWAITING_ADMIN_AUTH",
  "PLANNING",
  "INVESTIGATING",
  "AWAITING_USER_REPLY",
  "AWAITING_MANAGER_REPLY",
  "JUDGING",
  "DISPOSING",
  "SUSPENDED",
  "CLOSED",
  "FAILED",
] as const;
