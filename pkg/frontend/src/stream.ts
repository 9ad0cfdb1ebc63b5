import type { EngineEvent } from "./types.js";

// SSE over fetch so the same client runs in the browser and under node tests.
// The engine stream only carries live events; after a reconnect the store
// resyncs from the API and per-task seq dedupe absorbs any overlap.

export interface StreamHandlers {
  onEvent: (event: EngineEvent) => void;
  onStatus?: (status: "connected" | "reconnecting" | "stopped") => void;
}

const BACKOFF_BASE_MS = 500;
const BACKOFF_MAX_MS = 10_000;

export class EventStream {
  private controller: AbortController | null = null;
  private stopped = false;
  private attempts = 0;
  lastSeen = new Map<string, number>(); // task_id -> highest seq observed

  constructor(
    private url: string,
    private handlers: StreamHandlers,
  ) {}

  start(): void {
    this.stopped = false;
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
    this.handlers.onStatus?.("stopped");
  }

  /** Force a reconnect (used by tests to exercise the resume path). */
  bounce(): void {
    this.controller?.abort();
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      this.controller = new AbortController();
      try {
        const response = await fetch(this.url, {
          signal: this.controller.signal,
          headers: { accept: "text/event-stream" },
        });
        if (!response.ok || !response.body) throw new Error(`stream status ${response.status}`);
        this.attempts = 0;
        this.handlers.onStatus?.("connected");
        await this.consume(response.body);
      } catch {
        // fall through to the backoff below
      }
      if (this.stopped) return;
      this.handlers.onStatus?.("reconnecting");
      const delay = Math.min(BACKOFF_BASE_MS * 2 ** this.attempts, BACKOFF_MAX_MS);
      this.attempts += 1;
      await new Promise((resolve) => setTimeout(resolve, delay));
    }
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let boundary: number;
      while ((boundary = buffer.indexOf("\n\n")) >= 0) {
        const frame = buffer.slice(0, boundary);
        buffer = buffer.slice(boundary + 2);
        this.handleFrame(frame);
      }
    }
  }

  private handleFrame(frame: string): void {
    let data = "";
    for (const line of frame.split("\n")) {
      if (line.startsWith("data: ")) data += line.slice(6);
    }
    if (!data) return; // comment/heartbeat frame
    let event: EngineEvent;
    try {
      event = JSON.parse(data) as EngineEvent;
    } catch {
      return;
    }
    const seen = this.lastSeen.get(event.task_id) ?? 0;
    if (event.seq <= seen) return; // duplicate after reconnect
    this.lastSeen.set(event.task_id, event.seq);
    this.handlers.onEvent(event);
  }
}
