// Integration against a live engine (spawned by engine.setup.ts):
// the console approval loop, hard-refresh statelessness, and stream
// reconnection with seq dedupe.

import { beforeAll, describe, expect, it } from "vitest";

import { EngineClient } from "../src/api.js";
import { ConsoleStore } from "../src/store.js";
import { EventStream } from "../src/stream.js";
import type { EngineEvent } from "../src/types.js";

let base: string;
let api: EngineClient;

beforeAll(() => {
  base = process.env.RISKDESK_URL!;
  api = new EngineClient(base);
});

async function awaitingAdminTask(): Promise<string> {
  const parked = await api.listTasks("AWAITING_ADMIN_AUTH");
  expect(parked.length).toBeGreaterThan(0);
  return parked[0].task_id;
}

function until<T>(probe: () => T | null, timeoutMs: number): Promise<T> {
  return new Promise((resolve, reject) => {
    const started = Date.now();
    const tick = () => {
      const value = probe();
      if (value !== null) return resolve(value);
      if (Date.now() - started > timeoutMs) return reject(new Error("timed out"));
      setTimeout(tick, 20);
    };
    tick();
  });
}

describe("console approval loop", () => {
  it("approving a parked task reaches PLANNING in the console within 1s of the engine event", async () => {
    const taskId = await awaitingAdminTask();
    const store = new ConsoleStore(api);
    await store.loadBoard();
    expect(store.tasks.get(taskId)?.state).toBe("AWAITING_ADMIN_AUTH");

    let planningEvent: EngineEvent | null = null;
    let seenByConsoleAt = 0;
    const stream = new EventStream(`${base}/v1/stream`, {
      onEvent: (event) => {
        store.applyEvent(event);
        if (
          planningEvent === null &&
          event.task_id === taskId &&
          event.kind === "state_changed" &&
          event.payload["to"] === "PLANNING"
        ) {
          planningEvent = event;
          seenByConsoleAt = Date.now();
        }
      },
    });
    stream.start();
    await new Promise((resolve) => setTimeout(resolve, 300)); // stream up

    const outcome = await store.approve(taskId, "approve");
    expect(outcome).toBe("delivered");
    const decidedAt = Date.now();

    await until(() => planningEvent, 5_000);
    expect(store.tasks.get(taskId)?.state).not.toBe("AWAITING_ADMIN_AUTH");
    expect(seenByConsoleAt - decidedAt).toBeLessThan(1_000);
    stream.stop();
  });

  it("double-deciding is surfaced as server truth, not a console mutation", async () => {
    const taskId = await awaitingAdminTask();
    const store = new ConsoleStore(api);
    await store.loadBoard();
    await store.approve(taskId, "approve");
    // same decision again: engine reports it unchanged
    const again = await store.approve(taskId, "approve");
    expect(again).toBe("unchanged");
    // conflicting decision: 409 and the store refreshes to the server state
    await expect(store.approve(taskId, "deny")).rejects.toMatchObject({ status: 409 });
    expect(store.pendingDecisions.has(taskId)).toBe(false);
    expect(store.tasks.get(taskId)?.state).not.toBe("AWAITING_ADMIN_AUTH");
  });
});

describe("console statelessness", () => {
  it("a hard refresh rebuilds the identical task detail from the API alone", async () => {
    // wait for a demo investigation to finish so the detail view is rich
    const pickClosed = async () => {
      const tasks = await api.listTasks("CLOSED");
      return tasks.length ? tasks[0].task_id : null;
    };
    let taskId: string | null = null;
    const deadline = Date.now() + 20_000;
    while (taskId === null && Date.now() < deadline) {
      taskId = await pickClosed();
      if (taskId === null) await new Promise((resolve) => setTimeout(resolve, 250));
    }
    expect(taskId).not.toBeNull();

    const first = new ConsoleStore(api);
    await first.loadBoard();
    await first.openDetail(taskId!);

    const second = new ConsoleStore(api); // fresh store = hard refresh
    await second.loadBoard();
    await second.openDetail(taskId!);

    expect(JSON.stringify(second.detail)).toBe(JSON.stringify(first.detail));
    expect(JSON.stringify(second.detailEvents)).toBe(JSON.stringify(first.detailEvents));
    expect(second.detail?.verdict).not.toBeNull();
    expect(second.detail?.transcript.exchanges.length).toBeGreaterThan(0);
  });
});

describe("stream reconnection", () => {
  it("drop and reconnect never applies a duplicate (task, seq) pair", async () => {
    const taskId = await awaitingAdminTask().catch(async () => {
      const tasks = await api.listTasks();
      return tasks[0].task_id;
    });
    const applied: Array<[string, number]> = [];
    const store = new ConsoleStore(api);
    await store.loadBoard();
    const stream = new EventStream(`${base}/v1/stream`, {
      onEvent: (event) => {
        if (store.applyEvent(event)) applied.push([event.task_id, event.seq]);
      },
    });
    stream.start();
    await new Promise((resolve) => setTimeout(resolve, 300));

    await api.submitReply(taskId, "user", "unsolicited note one");
    await new Promise((resolve) => setTimeout(resolve, 300));
    stream.bounce(); // forced drop; client reconnects with backoff
    await new Promise((resolve) => setTimeout(resolve, 900));
    await api.submitReply(taskId, "user", "unsolicited note two");

    await until(() => (applied.some(([t]) => t === taskId) ? true : null), 5_000);
    await new Promise((resolve) => setTimeout(resolve, 500));
    stream.stop();

    const keys = applied.map(([t, s]) => `${t}:${s}`);
    expect(new Set(keys).size).toBe(keys.length);
  });
});

describe("reply routing", () => {
  it("a reply for a role nobody asked is stored as buffered", async () => {
    const tasks = await api.listTasks();
    const target = tasks.find((t) => t.state !== "CLOSED" && t.state !== "FAILED") ?? tasks[0];
    const outcome = await api.submitReply(target.task_id, "manager", "out-of-band note");
    expect(["buffered", "delivered"]).toContain(outcome.outcome);
    const detail = await api.getTask(target.task_id);
    const found = detail.transcript.exchanges.some((e) => e.text === "out-of-band note");
    expect(found).toBe(true);
  });
});
