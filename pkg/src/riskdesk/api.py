"""HTTP surface: alert intake, task inspection, human replies, event stream.

The app wraps a live engine (wall-clock, background workers). Respondent
channels come from config; the demo wiring answers user/manager inquiries
from scripted personas while admin decisions stay with the console.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .backend import RemoteBackend, ScriptedBackend
from .config import EngineConfig, build_prompts, build_registry
from .coordinator import Coordinator
from .evaluate import compute_metrics, outcome_row, synth_alerts, expand_dataset
from .gateway import AlertGateway
from .messaging import ConsoleChannel, MessagingGateway, SimulatedChannel, WebhookChannel
from .model import TaskEvent
from .store import EventLogStore
from .util import stable_hash, task_id_for_alert

logger = logging.getLogger(__name__)

STREAM_HEARTBEAT_S = 10.0


class StreamBroker:
    """Fan-out of committed task events to SSE subscribers."""

    STOP = object()

    def __init__(self):
        self._subs: list[queue.Queue] = []
        self._lock = threading.Lock()

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=1000)
        with self._lock:
            self._subs.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subs:
                self._subs.remove(q)

    def publish(self, event: TaskEvent) -> None:
        doc = event.to_dict()
        with self._lock:
            subs = list(self._subs)
        for q in subs:
            try:
                q.put_nowait(doc)
            except queue.Full:
                pass  # slow consumer: it will resync from the API

    def close(self) -> None:
        with self._lock:
            subs = list(self._subs)
        for q in subs:
            try:
                q.put_nowait(self.STOP)
            except queue.Full:
                pass


class EngineRuntime:
    """Live engine wiring behind the API: store, coordinator, workers, stream."""

    def __init__(self, config: EngineConfig, demo_tasks: int = 0, demo_seed: int = 42):
        self.config = config
        self.store = EventLogStore(config.data_dir)
        self.registry = build_registry(config)
        self.prompts = build_prompts(config)
        self.broker = StreamBroker()
        self.store.subscribe(self.broker.publish)
        self.max_backlog = int(config.limits.get("max_backlog", 10_000))

        self.sim_channel = SimulatedChannel()
        channels: dict[str, Any] = {}
        for role in ("user", "manager", "admin"):
            kind = config.channels.get(role, "console")
            if kind == "simulated":
                channels[role] = self.sim_channel
            elif kind == "webhook" and config.channels.get("webhook_url"):
                channels[role] = WebhookChannel(config.channels["webhook_url"])
            else:
                channels[role] = ConsoleChannel()
        self.gateway = MessagingGateway(channels)

        if config.backend.get("kind") == "remote":
            self.backend = RemoteBackend(
                endpoint=config.backend["endpoint"],
                model_name=config.backend.get("model_name", ""),
                temperature=config.backend.get("temperature", 0.2),
                max_tokens=config.backend.get("max_tokens", 1024),
                timeout_ms=config.backend.get("timeout_ms", 30000),
                retries=config.backend.get("retries", 2),
            )
            sim_time = False
        else:
            self.backend = ScriptedBackend(latency_ms=config.backend.get("simulated_latency_ms", 2000.0))
            sim_time = True

        self.coordinator = Coordinator(
            self.store, self.registry, self.gateway, self.backend, self.prompts, config, sim_time=sim_time
        )
        self.alert_gateway = AlertGateway(self.coordinator)
        self.demo_tasks = demo_tasks
        self.demo_seed = demo_seed

    def start(self) -> None:
        rehydrated = self.coordinator.resume_all()
        logger.info("rehydrated %d task(s)", rehydrated)
        if self.demo_tasks and isinstance(self.backend, ScriptedBackend):
            self._seed_demo()
        self.coordinator.start_workers(self.config.limits["max_concurrency"])

    def stop(self) -> None:
        self.broker.close()
        self.coordinator.stop_workers()

    def _seed_demo(self) -> None:
        """Demo corpus: scripted users/managers, console-driven admin approvals."""
        alerts = synth_alerts(self.demo_tasks, seed=self.demo_seed)
        fixtures = expand_dataset(alerts, seed=self.demo_seed)
        picked = [fixtures[stable_hash("demo", self.demo_seed, i) % len(fixtures)] for i in range(self.demo_tasks)]
        seen = set()
        for fixture in picked:
            if fixture.fixture_id in seen:
                continue
            seen.add(fixture.fixture_id)
            task_id = task_id_for_alert(fixture.alert.alert_id)
            self.backend.add_scenario(fixture.scenario())
            self.sim_channel.register(task_id, fixture)
            self.coordinator.bind_scenario(task_id, fixture.fixture_id)
            self.coordinator.create_task(fixture.alert)
            task = self.store.get(task_id)
            if task is not None and task.is_runnable():
                self.coordinator.enqueue(task_id)

    def saturated(self) -> bool:
        live = sum(1 for t in self.store.all_tasks() if not t.is_terminal())
        return live >= self.max_backlog


class MessageBody(BaseModel):
    role: str
    text: str
    correlation_id: str | None = None


class DecisionBody(BaseModel):
    decision: str


def create_app(runtime: EngineRuntime, console_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="riskdesk", version="0.1.0")
    app.state.runtime = runtime

    @app.on_event("startup")
    def _startup() -> None:
        runtime.start()

    @app.on_event("shutdown")
    def _shutdown() -> None:
        runtime.stop()

    # ---- intake ------------------------------------------------------

    @app.post("/v1/alerts")
    async def ingest_alert(request: Request):
        if runtime.saturated():
            return JSONResponse({"error": "saturated", "retry_after_s": 30}, status_code=429)
        status, doc = runtime.alert_gateway.ingest_http(await request.body())
        if status == 202 and doc.get("task_id"):
            task = runtime.store.get(doc["task_id"])
            if task is not None and task.is_runnable():
                runtime.coordinator.enqueue(doc["task_id"])
            doc["state"] = task.state.value if task else None
        return JSONResponse(doc, status_code=status)

    # ---- task inspection ---------------------------------------------

    @app.get("/v1/tasks")
    def list_tasks(state: str | None = None, category: str | None = None, cursor: str | None = None, limit: int = 50):
        page = runtime.store.list_tasks(state=state, category=category, cursor=cursor, limit=min(limit, 200))
        return {"items": page.items, "next_cursor": page.next_cursor}

    @app.get("/v1/tasks/{task_id}")
    def get_task(task_id: str):
        task = runtime.store.get(task_id)
        if task is None:
            return JSONResponse({"error": "not_found"}, status_code=404)
        return task.to_dict()

    @app.get("/v1/tasks/{task_id}/events")
    def get_events(task_id: str):
        task = runtime.store.get(task_id)
        if task is None:
            return JSONResponse({"error": "not_found"}, status_code=404)
        return {"events": [e.to_dict() for e in runtime.store.read_events(task_id)]}

    # ---- human input --------------------------------------------------

    @app.post("/v1/tasks/{task_id}/messages")
    def post_message(task_id: str, body: MessageBody):
        if body.role not in ("user", "manager", "admin"):
            return JSONResponse({"error": "bad_role"}, status_code=400)
        outcome = runtime.coordinator.deliver_message(task_id, body.role, body.text, body.correlation_id)
        if outcome == "not_found":
            return JSONResponse({"error": "not_found"}, status_code=404)
        if outcome == "rejected_terminal":
            return JSONResponse({"error": "rejected_terminal"}, status_code=409)
        return {"outcome": outcome}

    @app.post("/v1/tasks/{task_id}/admin/decision")
    def admin_decision(task_id: str, body: DecisionBody):
        if body.decision not in ("approve", "deny"):
            return JSONResponse({"error": "bad_decision"}, status_code=400)
        task = runtime.store.get(task_id)
        if task is None:
            return JSONResponse({"error": "not_found"}, status_code=404)
        if task.admin_decision is not None:
            if task.admin_decision == body.decision:
                return {"outcome": "unchanged", "decision": task.admin_decision}
            return JSONResponse({"error": "already_decided", "decision": task.admin_decision}, status_code=409)
        outcome = runtime.coordinator.deliver_message(task_id, "admin", json.dumps({"decision": body.decision}))
        if outcome == "rejected_terminal":
            return JSONResponse({"error": "rejected_terminal"}, status_code=409)
        return {"outcome": outcome, "decision": body.decision}

    @app.post("/v1/webhooks/im")
    async def im_webhook(request: Request):
        try:
            payload = MessagingGateway.parse_inbound(json.loads(await request.body()))
        except (json.JSONDecodeError, ValueError) as exc:
            return JSONResponse({"error": "parse_error", "detail": str(exc)}, status_code=400)
        outcome = runtime.coordinator.deliver_message(
            payload["task_id"], payload["role"], payload["text"], payload["correlation_id"]
        )
        if outcome == "not_found":
            return JSONResponse({"error": "not_found"}, status_code=404)
        if outcome == "rejected_terminal":
            return JSONResponse({"error": "rejected_terminal"}, status_code=409)
        return {"outcome": outcome}

    # ---- metrics and stream -------------------------------------------

    @app.get("/v1/metrics")
    def metrics():
        rows = []
        for task in runtime.store.all_tasks():
            events = runtime.store.read_events(task.task_id)
            row = outcome_row(_StubFixture(task.task_id), task, events)
            row["ground_truth"] = None
            rows.append(row)
        if not rows:
            return {"empty": True}
        report = compute_metrics(rows, runtime.config, runtime.config.run_metadata())
        return report.to_dict()

    @app.get("/v1/stream")
    def stream():
        q = runtime.broker.subscribe()

        def generate():
            try:
                yield ": connected\n\n"
                while True:
                    try:
                        doc = q.get(timeout=STREAM_HEARTBEAT_S)
                    except queue.Empty:
                        yield ": ping\n\n"
                        continue
                    if doc is StreamBroker.STOP:
                        return
                    yield f"id: {doc['task_id']}:{doc['seq']}\ndata: {json.dumps(doc)}\n\n"
            finally:
                runtime.broker.unsubscribe(q)

        return StreamingResponse(generate(), media_type="text/event-stream")

    if console_dir is not None and Path(console_dir).is_dir():
        app.mount("/console", StaticFiles(directory=str(console_dir), html=True), name="console")

    return app


class _StubFixture:
    """Minimal stand-in so server-mode metrics reuse the batch outcome shape."""

    def __init__(self, task_id: str):
        self.fixture_id = task_id
        self.overlay = None
        self.ground_truth = None
