import { EngineClient } from "./api.js";
import { renderBoard, renderDetail, renderInbox, renderMetrics, renderStreamStatus } from "./render.js";
import { ConsoleStore } from "./store.js";
import { EventStream } from "./stream.js";

const base = window.location.origin;
const api = new EngineClient(base);
const store = new ConsoleStore(api);

const boardRoot = document.getElementById("board")!;
const detailRoot = document.getElementById("detail")!;
const inboxRoot = document.getElementById("inbox")!;
const metricsRoot = document.getElementById("metrics")!;
const statusRoot = document.getElementById("stream-status")!;

function openTask(taskId: string): void {
  history.replaceState(null, "", `#${taskId}`);
  void store.openDetail(taskId);
}

store.subscribe(() => {
  renderBoard(store, boardRoot, openTask);
  renderInbox(store, inboxRoot, openTask);
  renderDetail(store, detailRoot);
  renderMetrics(store, metricsRoot);
  renderStreamStatus(store, statusRoot);
});

const stream = new EventStream(`${base}/v1/stream`, {
  onEvent: (event) => store.applyEvent(event),
  onStatus: (status) => store.setStreamStatus(status),
});

void (async () => {
  await store.loadBoard();
  await store.loadMetrics().catch(() => undefined);
  // a hard refresh reconstructs the open task purely from the API
  const fromHash = window.location.hash.slice(1);
  if (fromHash) await store.openDetail(fromHash).catch(() => undefined);
  stream.start();
})();
