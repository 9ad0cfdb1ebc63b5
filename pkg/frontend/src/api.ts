import type { EngineEvent, TaskDetail, TaskSummary } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: unknown,
  ) {
    super(`engine responded ${status}`);
  }
}

async function expectJson(response: Response): Promise<unknown> {
  const body = await response.json().catch(() => null);
  if (!response.ok) throw new ApiError(response.status, body);
  return body;
}

/** Thin typed client over the engine's documented endpoints. */
export class EngineClient {
  constructor(private base: string) {}

  async listTasks(state?: string): Promise<TaskSummary[]> {
    const items: TaskSummary[] = [];
    let cursor: string | null = null;
    do {
      const params = new URLSearchParams({ limit: "200" });
      if (state) params.set("state", state);
      if (cursor) params.set("cursor", cursor);
      const body = (await expectJson(await fetch(`${this.base}/v1/tasks?${params}`))) as {
        items: TaskSummary[];
        next_cursor: string | null;
      };
      items.push(...body.items);
      cursor = body.next_cursor;
    } while (cursor);
    return items;
  }

  async getTask(taskId: string): Promise<TaskDetail> {
    return (await expectJson(await fetch(`${this.base}/v1/tasks/${taskId}`))) as TaskDetail;
  }

  async getEvents(taskId: string): Promise<EngineEvent[]> {
    const body = (await expectJson(await fetch(`${this.base}/v1/tasks/${taskId}/events`))) as {
      events: EngineEvent[];
    };
    return body.events;
  }

  async submitReply(taskId: string, role: string, text: string): Promise<{ outcome: string }> {
    const response = await fetch(`${this.base}/v1/tasks/${taskId}/messages`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ role, text }),
    });
    return (await expectJson(response)) as { outcome: string };
  }

  async submitAdminDecision(taskId: string, decision: "approve" | "deny"): Promise<{ outcome: string }> {
    const response = await fetch(`${this.base}/v1/tasks/${taskId}/admin/decision`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ decision }),
    });
    return (await expectJson(response)) as { outcome: string };
  }

  async getMetrics(): Promise<Record<string, unknown>> {
    return (await expectJson(await fetch(`${this.base}/v1/metrics`))) as Record<string, unknown>;
  }
}
