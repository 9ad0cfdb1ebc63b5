import { describe, expect, it } from "vitest";

import type { EngineClient } from "../src/api.js";
import { ConsoleStore } from "../src/store.js";
import type { EngineEvent, TaskSummary } from "../src/types.js";

function summary(overrides: Partial<TaskSummary>): TaskSummary {
  return {
    task_id: "t1",
    state: "INVESTIGATING",
    category: "large_file_download",
    actor_id: "emp-1",
    severity: "medium",
    updated_at: "2026-01-01T00:00:00Z",
    verdict: null,
    ...overrides,
  };
}

function event(overrides: Partial<EngineEvent>): EngineEvent {
  return { seq: 1, task_id: "t1", kind: "state_changed", payload: {}, at: "2026-01-01T00:00:01Z", ...overrides };
}

function storeWith(tasks: TaskSummary[]): ConsoleStore {
  const api = { listTasks: async () => tasks } as unknown as EngineClient;
  const store = new ConsoleStore(api);
  store.tasks = new Map(tasks.map((t) => [t.task_id, t]));
  return store;
}

describe("board grouping", () => {
  it("groups cards by state column", () => {
    const store = storeWith([
      summary({ task_id: "a", state: "CLOSED" }),
      summary({ task_id: "b", state: "CLOSED" }),
      summary({ task_id: "c", state: "AWAITING_ADMIN_AUTH" }),
    ]);
    const board = store.board();
    const closed = board.find((c) => c.column === "CLOSED");
    expect(closed?.cards.map((c) => c.task_id).sort()).toEqual(["a", "b"]);
    expect(board.find((c) => c.column === "AWAITING_ADMIN_AUTH")?.cards).toHaveLength(1);
  });
});

describe("pending inbox", () => {
  it("derives pending actions from awaiting states", () => {
    const store = storeWith([
      summary({ task_id: "a", state: "AWAITING_ADMIN_AUTH" }),
      summary({ task_id: "b", state: "AWAITING_USER_REPLY" }),
      summary({ task_id: "c", state: "CLOSED" }),
    ]);
    const kinds = store.inbox().map((p) => p.kind);
    expect(kinds).toContain("admin_approval");
    expect(kinds).toContain("user_reply");
    expect(kinds).toHaveLength(2);
  });
});

describe("event application", () => {
  it("moves a card when state_changed arrives", () => {
    const store = storeWith([summary({ state: "AWAITING_ADMIN_AUTH" })]);
    const applied = store.applyEvent(event({ seq: 5, kind: "state_changed", payload: { to: "PLANNING" } }));
    expect(applied).toBe(true);
    expect(store.tasks.get("t1")?.state).toBe("PLANNING");
  });

  it("ignores duplicate sequence numbers (reconnect overlap)", () => {
    const store = storeWith([summary({})]);
    expect(store.applyEvent(event({ seq: 7, payload: { to: "JUDGING" } }))).toBe(true);
    expect(store.applyEvent(event({ seq: 7, payload: { to: "FAILED" } }))).toBe(false);
    expect(store.applyEvent(event({ seq: 6, payload: { to: "FAILED" } }))).toBe(false);
    expect(store.tasks.get("t1")?.state).toBe("JUDGING");
  });

  it("records verdicts onto the card", () => {
    const store = storeWith([summary({})]);
    store.applyEvent(event({ seq: 2, kind: "verdict_set", payload: { verdict: { label: "benign_violation" } } }));
    expect(store.tasks.get("t1")?.verdict).toBe("benign_violation");
  });

  it("clears the optimistic pending mark once the engine reacts", () => {
    const store = storeWith([summary({ state: "AWAITING_ADMIN_AUTH" })]);
    store.pendingDecisions.add("t1");
    store.applyEvent(event({ seq: 3, kind: "message_in", payload: { role: "admin" } }));
    expect(store.pendingDecisions.has("t1")).toBe(false);
  });
});
