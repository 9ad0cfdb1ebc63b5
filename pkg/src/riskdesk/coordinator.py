"""Task coordinator: durable state machine, step executor, and scheduler.

Every mutation is an event applied to a working copy of the task snapshot
and committed atomically at step end, so a crash can only lose whole steps
(which re-execute identically against the deterministic backend). Distinct
tasks run in parallel up to the configured concurrency; a single task's
steps are strictly serial.
"""

from __future__ import annotations

import copy
import json
import logging
import queue
import threading
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Any

from . import blocks, hci
from .backend import BackendError, ChatRequest, ChatMessage
from .disposal import DisposalExecutor, select_disposal
from .judgment import EvidenceError, adjudicate, assemble_evidence
from .messaging import GatewayError, MessagingGateway, OutboundMessage
from .model import (
    Alert,
    EventKind,
    FeedbackRecord,
    InvestigationTask,
    ReplyFlag,
    Respondent,
    Severity,
    TaskEvent,
    TaskState,
    apply_event,
)
from .planner import (
    PlanItem,
    PlanLedger,
    StepStatus,
    apply_reflection,
    build_ledger,
    fixed_item,
    next_action,
    render_ledger,
    set_status,
)
from .store import EventLogStore
from .tools import ResolvedCall, SideEffect, ToolCall, ToolRegistry, check_sequence
from .util import Clock, SimClock, correlation_id, stable_unit, task_id_for_alert, to_iso

logger = logging.getLogger(__name__)

TOOL_COST_MS = 100.0  # logical cost of a turn-less fixed step in scripted mode
STEP_HARD_CAP = 200

ASK_RESPONDENT = {
    "invest_ask_admin": Respondent.ADMIN.value,
    "invest_ask_user": Respondent.USER.value,
    "invest_ask_manager": Respondent.MANAGER.value,
}
NOTIFY_RESPONDENT = {
    "invest_notify_admin": Respondent.ADMIN.value,
    "invest_notify_user": Respondent.USER.value,
}
PARK_STATE = {
    Respondent.USER.value: TaskState.AWAITING_USER_REPLY,
    Respondent.MANAGER.value: TaskState.AWAITING_MANAGER_REPLY,
}


class PreconditionError(Exception):
    pass


@dataclass
class StepOutcome:
    kind: str  # advanced | parked | terminal
    state: TaskState
    detail: str = ""


@dataclass
class _StepCtx:
    """Working copy of a task plus the step's event buffer."""

    task: InvestigationTask
    clock: Clock
    events: list[TaskEvent] = field(default_factory=list)
    step_ms: float = 0.0
    calls_made: int = 0
    turn: int | None = None  # model turn to stamp on subsequent events

    def emit(self, kind: EventKind, payload: dict[str, Any]) -> TaskEvent:
        if self.turn is not None and "turn" not in payload:
            payload = {**payload, "turn": self.turn}
        event = TaskEvent(
            seq=self.task.last_seq + 1,
            task_id=self.task.task_id,
            kind=kind,
            payload=payload,
            at=self.clock.now(),
        )
        self.task = apply_event(self.task, event)
        self.events.append(event)
        return event

    def change_state(self, target: TaskState, reason: str = "", wait_deadline=None) -> None:
        self.emit(
            EventKind.STATE_CHANGED,
            {
                "from": self.task.state.value,
                "to": target.value,
                "reason": reason,
                "wait_deadline": to_iso(wait_deadline),
            },
        )


class Coordinator:
    def __init__(
        self,
        store: EventLogStore,
        registry: ToolRegistry,
        gateway: MessagingGateway,
        backend,
        prompts,
        config,
        sim_time: bool = True,
    ):
        self.store = store
        self.registry = registry
        self.gateway = gateway
        self.backend = backend
        self.prompts = prompts
        self.config = config
        self.sim_time = sim_time

        self._clocks: dict[str, Clock] = {}
        self._wall = Clock()
        self._bindings: dict[str, str] = {}  # task_id -> scenario key
        self._task_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

        # scheduler state
        self._queue: queue.Queue = queue.Queue()
        self._pending: set[str] = set()
        self._outstanding = 0
        self._sched_lock = threading.Lock()
        self._idle = threading.Condition(self._sched_lock)
        self._running_steps = 0
        self.peak_concurrency = 0
        self._workers: list[threading.Thread] = []
        self._stop = object()

    # ------------------------------------------------------------------
    # plumbing
    # ------------------------------------------------------------------

    def clock_for(self, task_id: str) -> Clock:
        if not self.sim_time:
            return self._wall
        clock = self._clocks.get(task_id)
        if clock is None:
            clock = SimClock()
            self._clocks[task_id] = clock
        return clock

    def _lock_for(self, task_id: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._task_locks.get(task_id)
            if lock is None:
                lock = threading.Lock()
                self._task_locks[task_id] = lock
            return lock

    def bind_scenario(self, task_id: str, scenario_key: str) -> None:
        self._bindings[task_id] = scenario_key

    def _ctx(self, task: InvestigationTask) -> _StepCtx:
        return _StepCtx(task=copy.deepcopy(task), clock=self.clock_for(task.task_id))

    def _commit(self, ctx: _StepCtx) -> InvestigationTask:
        self.store.commit(ctx.task, ctx.events)
        return ctx.task

    # ------------------------------------------------------------------
    # task creation
    # ------------------------------------------------------------------

    def create_task(self, alert: Alert) -> tuple[str, bool]:
        """Create (or return the existing) task for an alert. Returns (task_id, created)."""
        existing = self.store.task_for_alert(alert.alert_id)
        if existing is not None:
            return existing, False

        task_id = task_id_for_alert(alert.alert_id)
        clock = self.clock_for(task_id)
        seed_event = TaskEvent(
            seq=1,
            task_id=task_id,
            kind=EventKind.CREATED,
            payload={"alert": alert.to_dict()},
            at=clock.now(),
        )
        task = apply_event(None, seed_event)
        ctx = _StepCtx(task=task, clock=clock, events=[seed_event])

        deadline = clock.now() + timedelta(hours=self.config.limits["wait_deadline_hours"])
        ctx.change_state(TaskState.AWAITING_ADMIN_AUTH, reason="admin authorization pre-step", wait_deadline=deadline)

        # authorization pre-step: humans answer high-severity asks, policy answers the rest
        reason = f"Behavioral alert {alert.category.value} ({alert.severity.value}) requires investigation."
        call = ToolCall(name="invest_ask_admin", args={"reason": reason}, raw_text="")
        ctx.emit(
            EventKind.TOOL_CALLED,
            {
                "name": call.name,
                "args": call.args,
                "category": alert.category.value,
                "validation": {"status": "valid", "repairs": [], "reason": ""},
                "synthetic": True,
                "fixed_step": True,
            },
        )
        if alert.severity in (Severity.HIGH, Severity.CRITICAL):
            receipt = self._send_outbound(ctx, Respondent.ADMIN.value, reason + " Please approve or deny.", expects_reply=True)
            ctx.emit(EventKind.TOOL_RESULT, {"name": call.name, "ok": True, "detail": "authorization requested"})
            if receipt.reply is not None:
                self._deliver_inline(ctx, receipt.reply.role, receipt.reply.text, receipt.reply.correlation_id)
        else:
            ctx.emit(EventKind.TOOL_RESULT, {"name": call.name, "ok": True, "detail": "auto-approved by policy"})
            ctx.emit(
                EventKind.MESSAGE_IN,
                {
                    "role": Respondent.ADMIN.value,
                    "text": json.dumps({"decision": "approve", "auto": True}),
                    "flags": [],
                    "solicited": False,
                    "decision": "approve",
                    "round_index": 0,
                },
            )
            ctx.change_state(TaskState.PLANNING, reason="auto-approved: severity below high")

        self._commit(ctx)
        return task_id, True

    # ------------------------------------------------------------------
    # message delivery
    # ------------------------------------------------------------------

    def deliver_message(self, task_id: str, role: str, text: str, correlation: str | None = None) -> str:
        with self._lock_for(task_id):
            task = self.store.get(task_id)
            if task is None:
                return "not_found"
            if task.is_terminal():
                return "rejected_terminal"
            ctx = self._ctx(task)
            delivered = self._deliver_inline(ctx, role, text, correlation)
            self._commit(ctx)
        if ctx.task.is_runnable():
            self.enqueue(task_id)
        return delivered

    def _deliver_inline(self, ctx: _StepCtx, role: str, text: str, correlation: str | None) -> str:
        task = ctx.task
        awaited = task.awaited_respondent()
        pending_corr = next((c for c, r in task.pending_outbound.items() if r == role), None)
        if correlation is None:
            correlation = pending_corr
        solicited = (awaited == role and pending_corr is not None and correlation == pending_corr) or (
            correlation is not None and task.pending_outbound.get(correlation) == role
        )

        flags = hci.classify_reply(text)
        decision = None
        if role == Respondent.ADMIN.value:
            try:
                doc = json.loads(text)
                if isinstance(doc, dict) and doc.get("decision") in ("approve", "deny"):
                    decision = doc["decision"]
            except json.JSONDecodeError:
                decision = None

        payload: dict[str, Any] = {
            "role": role,
            "text": text,
            "flags": flags,
            "solicited": solicited,
            "correlation_id": correlation,
            "round_index": task.transcript.rounds_for(role) + (1 if solicited else 0),
        }
        if decision:
            payload["decision"] = decision
        ctx.emit(EventKind.MESSAGE_IN, payload)

        state = ctx.task.state
        if solicited and state is TaskState.AWAITING_ADMIN_AUTH and role == Respondent.ADMIN.value and decision:
            if decision == "approve":
                ctx.change_state(TaskState.PLANNING, reason="admin approved")
            else:
                ctx.change_state(TaskState.CLOSED, reason="admin denied authorization")
        elif solicited and state is TaskState.AWAITING_USER_REPLY and role == Respondent.USER.value:
            ctx.change_state(TaskState.INVESTIGATING, reason="user replied")
        elif solicited and state is TaskState.AWAITING_MANAGER_REPLY and role == Respondent.MANAGER.value:
            ctx.change_state(TaskState.INVESTIGATING, reason="manager replied")
        return "delivered" if solicited else "buffered"

    # ------------------------------------------------------------------
    # stepping
    # ------------------------------------------------------------------

    def step_task(self, task_id: str) -> StepOutcome:
        with self._lock_for(task_id):
            task = self.store.get(task_id)
            if task is None:
                raise PreconditionError(f"unknown task {task_id}")
            if task.is_terminal():
                raise PreconditionError(f"task {task_id} is terminal ({task.state.value})")
            if not task.is_runnable():
                raise PreconditionError(f"task {task_id} is parked ({task.state.value})")
            if task.step_count >= STEP_HARD_CAP:
                return self._fail(task, "step hard cap reached")

            ctx = self._ctx(task)
            try:
                if ctx.task.state is TaskState.PLANNING:
                    self._step_planning(ctx)
                else:
                    self._step_plan_action(ctx)
            except BackendError as exc:
                if exc.retryable:
                    return self._retry(task, str(exc))
                return self._fail(task, f"backend: {exc}")
            except GatewayError as exc:
                return self._retry(task, f"gateway: {exc}")
            except Exception:
                logger.exception("step failed for %s", task_id)
                return self._fail(task, "internal step error")

            if ctx.events:
                last = ctx.events[-1]
                last.payload["step_ms"] = round(ctx.step_ms + TOOL_COST_MS, 3)
                ctx.task.active_ms += last.payload["step_ms"]
                ctx.task.step_count += 1
            committed = self._commit(ctx)

        if committed.is_terminal():
            return StepOutcome("terminal", committed.state)
        if not committed.is_runnable():
            return StepOutcome("parked", committed.state)
        return StepOutcome("advanced", committed.state)

    def _retry(self, task: InvestigationTask, error: str) -> StepOutcome:
        """Retry-on-failure policy: exponential backoff, bounded attempts."""
        ctx = self._ctx(task)
        max_retries = self.config.limits["max_retries"]
        if task.retry_count >= max_retries:
            ctx.emit(EventKind.ERROR, {"kind": "retries_exhausted", "reason": error})
            ctx.change_state(TaskState.FAILED, reason=f"retries exhausted: {error}")
            self._commit(ctx)
            return StepOutcome("terminal", TaskState.FAILED, detail=error)
        count = task.retry_count + 1
        backoff_ms = 1000.0 * (4 ** (count - 1)) * (0.5 + stable_unit("backoff", task.task_id, count))
        ctx.emit(EventKind.RETRIED, {"retry_count": count, "backoff_ms": round(backoff_ms, 3), "error": error})
        self._commit(ctx)
        ctx.clock.sleep(backoff_ms / 1000.0)
        return StepOutcome("advanced", ctx.task.state, detail=f"retried ({count})")

    def _fail(self, task: InvestigationTask, reason: str) -> StepOutcome:
        ctx = self._ctx(task)
        ctx.emit(EventKind.ERROR, {"kind": "fatal", "reason": reason})
        ctx.change_state(TaskState.FAILED, reason=reason)
        self._commit(ctx)
        return StepOutcome("terminal", TaskState.FAILED, detail=reason)

    # ------------------------------------------------------------------
    # planning step
    # ------------------------------------------------------------------

    def _workflow(self, category: str) -> dict[str, Any]:
        workflow = self.config.workflow.get(category) or self.config.workflow["other"]
        return workflow

    def _fixed_steps(self, spec_list: list[dict[str, Any]]) -> list[PlanItem]:
        return [fixed_item(f"s{i}", s["description"], s["tool"], s.get("args")) for i, s in enumerate(spec_list)]

    def _step_planning(self, ctx: _StepCtx) -> None:
        alert = ctx.task.alert
        workflow = self._workflow(alert.category.value)

        items = None
        for attempt in range(2):
            text = self._model_turn(ctx, purpose="plan", reminder=attempt > 0)
            items = blocks.parse_todo(text)
            if items is not None:
                break
            ctx.emit(
                EventKind.ERROR,
                {"kind": "plan_parse_failed", "reason": "no parseable checklist", "attempt": attempt + 1},
            )
        if items is None:
            items = [
                PlanItem(item_id=f"d{i + 1}", description=s["description"], tool_hint=s.get("tool"))
                for i, s in enumerate(workflow["fallback_plan"])
            ]
            ctx.emit(EventKind.ERROR, {"kind": "planner_fallback", "reason": "static category plan substituted"})

        pre = self._fixed_steps(workflow["pre_steps"])
        post = self._fixed_steps(workflow["post_steps"])
        ledger = build_ledger(pre, items, post)
        # admin authorization was satisfied at intake; reflect that in the ledger
        for item in ledger.pre_steps:
            if item.tool_hint == "invest_ask_admin" and ctx.task.admin_decision == "approve":
                ledger = set_status(ledger, item.item_id, StepStatus.DONE, note="satisfied at intake")
        ctx.turn = None
        ctx.emit(EventKind.PLAN_UPDATED, {"ledger": ledger.to_dict(), "reason": "initial plan"})
        ctx.change_state(TaskState.INVESTIGATING, reason="plan built")

    # ------------------------------------------------------------------
    # plan-driven step
    # ------------------------------------------------------------------

    def _step_plan_action(self, ctx: _StepCtx) -> None:
        if ctx.task.plan is None:
            raise PreconditionError("task has no plan")
        action = next_action(ctx.task.plan)
        if action is None:
            self._plan_complete(ctx)
            return
        if action.fixed:
            self._execute_fixed(ctx, action)
        else:
            self._execute_dynamic(ctx, action)

    def _plan_complete(self, ctx: _StepCtx) -> None:
        if ctx.task.state is TaskState.DISPOSING:
            ctx.change_state(TaskState.CLOSED, reason="plan complete")
            return
        # defensive self-heal: a plan that ran dry without a verdict gets a judge item
        ledger, _ = self._insert_missing(ctx.task.plan, "Record the final risk qualification", "invest_judge")
        ctx.emit(EventKind.ERROR, {"kind": "plan_incomplete", "reason": "no verdict at plan end; judge step inserted"})
        ctx.emit(EventKind.PLAN_UPDATED, {"ledger": ledger.to_dict(), "reason": "judge step inserted"})

    @staticmethod
    def _insert_missing(ledger: PlanLedger, description: str, tool: str) -> tuple[PlanLedger, str]:
        """Insert a pending dynamic item with the given tool before the judge item."""
        seq = 1
        existing = {i.item_id for i in ledger.all_items()}
        while f"d{seq}" in existing:
            seq += 1
        item = PlanItem(item_id=f"d{seq}", description=description, tool_hint=tool)
        dyn = list(ledger.dynamic_steps)
        judge_pos = next(
            (i for i, it in enumerate(dyn) if it.tool_hint == "invest_judge" and it.status is not StepStatus.DONE),
            len(dyn),
        )
        dyn.insert(judge_pos, item)
        return (
            PlanLedger(pre_steps=ledger.pre_steps, dynamic_steps=dyn, post_steps=ledger.post_steps, revision=ledger.revision + 1),
            item.item_id,
        )

    # ---- fixed steps -------------------------------------------------

    def _execute_fixed(self, ctx: _StepCtx, item: PlanItem) -> None:
        call = ToolCall(name=item.tool_hint or "", args=dict(item.fixed_args), raw_text="")
        schema = self.registry.get(call.name)
        if schema is None:
            self._mark_item(ctx, item.item_id, StepStatus.SKIPPED, note="unknown tool in workflow config")
            return
        decision = check_sequence(self.registry, call, ctx.task)
        if not decision.allowed:
            self._handle_block(ctx, item, call, decision.reason)
            return
        ctx.emit(
            EventKind.TOOL_CALLED,
            {
                "name": call.name,
                "args": call.args,
                "category": ctx.task.alert.category.value,
                "validation": {"status": "valid", "repairs": [], "reason": ""},
                "synthetic": True,
                "fixed_step": True,
            },
        )
        self._dispatch(ctx, call, schema, item)

    # ---- dynamic steps -----------------------------------------------

    def _execute_dynamic(self, ctx: _StepCtx, item: PlanItem) -> None:
        text = self._model_turn(ctx, purpose="act")

        reflection = blocks.parse_reflection(text)
        if reflection is not None:
            ledger, ignored = apply_reflection(ctx.task.plan, reflection)
            ctx.emit(EventKind.REFLECTION, {"reflection": reflection.to_dict(), "ignored_updates": ignored})
            ctx.emit(EventKind.PLAN_UPDATED, {"ledger": ledger.to_dict(), "reason": "reflection"})
            refreshed = next_action(ledger)
            if refreshed is not None and refreshed.item_id != item.item_id:
                item = refreshed

        summary_doc = blocks.parse_feedback(text)
        if summary_doc is not None:
            self._conclude_dialogue(ctx, item, summary_doc)
            return

        resolved = self.registry.repair_call(text, context=self._recent_calls(ctx))
        if resolved.call is None:
            self._handle_unparseable(ctx, item, reason=resolved.outcome.reason)
            return
        self._record_call(ctx, resolved)
        if resolved.duplicate_noop:
            ctx.emit(
                EventKind.TOOL_RESULT,
                {"name": resolved.call.name, "ok": True, "noop": True, "detail": "duplicate notification dropped"},
            )
            return

        schema = self.registry.get(resolved.call.name)
        decision = check_sequence(self.registry, resolved.call, ctx.task)
        if not decision.allowed:
            self._handle_block(ctx, item, resolved.call, decision.reason)
            return
        self._dispatch(ctx, resolved.call, schema, item)

    def _recent_calls(self, ctx: _StepCtx) -> list[ToolCall]:
        """Executed calls from this step and the previous one (dup-notify window)."""
        calls: list[ToolCall] = []
        committed = self.store.read_events(ctx.task.task_id)
        boundary = 0
        markers = [i for i, e in enumerate(committed) if "step_ms" in e.payload]
        if markers:
            boundary = (markers[-2] + 1) if len(markers) > 1 else 0
        for event in committed[boundary:]:
            if event.kind is EventKind.TOOL_CALLED and not event.payload.get("synthetic"):
                calls.append(ToolCall(name=event.payload["name"], args=event.payload["args"], raw_text=""))
        for event in ctx.events:
            if event.kind is EventKind.TOOL_CALLED and not event.payload.get("synthetic"):
                calls.append(ToolCall(name=event.payload["name"], args=event.payload["args"], raw_text=""))
        return calls

    def _record_call(self, ctx: _StepCtx, resolved: ResolvedCall) -> None:
        assert resolved.call is not None
        ctx.emit(
            EventKind.TOOL_CALLED,
            {
                "name": resolved.call.name,
                "args": resolved.call.args,
                "raw_text": resolved.call.raw_text[:500],
                "category": ctx.task.alert.category.value,
                "validation": resolved.outcome.to_dict(),
                "first_pass_valid": resolved.first_pass_valid,
                "final_valid": resolved.final_valid,
            },
        )

    def _handle_unparseable(self, ctx: _StepCtx, item: PlanItem, reason: str) -> None:
        """Reprompt once; then fall back to a deterministic substitute action."""
        ctx.emit(EventKind.ERROR, {"kind": "unparseable_turn", "reason": reason, "item": item.item_id})
        text = self._model_turn(ctx, purpose="act", reminder=True)
        resolved = self.registry.repair_call(text, context=self._recent_calls(ctx))
        if resolved.call is not None:
            self._record_call(ctx, resolved)
            if resolved.duplicate_noop:
                ctx.emit(
                    EventKind.TOOL_RESULT,
                    {"name": resolved.call.name, "ok": True, "noop": True, "detail": "duplicate notification dropped"},
                )
                return
            schema = self.registry.get(resolved.call.name)
            decision = check_sequence(self.registry, resolved.call, ctx.task)
            if not decision.allowed:
                self._handle_block(ctx, item, resolved.call, decision.reason)
                return
            self._dispatch(ctx, resolved.call, schema, item)
            return

        summary_doc = blocks.parse_feedback(text)
        if summary_doc is not None:
            self._conclude_dialogue(ctx, item, summary_doc)
            return

        ctx.emit(EventKind.ERROR, {"kind": "unparseable_turn", "reason": "reprompt failed", "item": item.item_id})
        self._fallback_action(ctx, item)

    def _fallback_action(self, ctx: _StepCtx, item: PlanItem) -> None:
        """Deterministic floor when the model cannot produce a usable turn."""
        alert = ctx.task.alert
        tool = item.tool_hint or ""
        if tool in ("invest_ask_user", "invest_ask_manager"):
            respondent = ASK_RESPONDENT[tool]
            question = self.config.fallback_questions.get(
                respondent, hci.opening_question(alert, respondent if respondent == "manager" else "user")
            )
            target = alert.actor_id if respondent == "user" else alert.supervisor_id
            args = {"question": question, ("user_id" if respondent == "user" else "manager_id"): target}
            call = ToolCall(name=tool, args=args, raw_text="")
            decision = check_sequence(self.registry, call, ctx.task)
            if decision.allowed:
                self._emit_synthetic_call(ctx, call)
                self._dispatch(ctx, call, self.registry.get(tool), item)
            else:
                self._handle_block(ctx, item, call, decision.reason)
        elif tool == "invest_judge":
            self._judge(ctx, item, proposed=None)
        else:
            self._mark_item(ctx, item.item_id, StepStatus.SKIPPED, note="no usable model output")

    def _emit_synthetic_call(self, ctx: _StepCtx, call: ToolCall) -> None:
        ctx.emit(
            EventKind.TOOL_CALLED,
            {
                "name": call.name,
                "args": call.args,
                "category": ctx.task.alert.category.value,
                "validation": {"status": "valid", "repairs": [], "reason": ""},
                "synthetic": True,
            },
        )

    def _handle_block(self, ctx: _StepCtx, item: PlanItem | None, call: ToolCall, reason: str) -> None:
        """Sequence-guard refusal: record it and make the plan satisfy the prerequisite."""
        ctx.emit(EventKind.ERROR, {"kind": "sequence_blocked", "tool": call.name, "reason": reason})
        ledger = ctx.task.plan
        if item is not None and not item.fixed and item.status is StepStatus.IN_PROGRESS:
            ledger = set_status(ledger, item.item_id, StepStatus.PENDING, note=f"blocked: {reason}")
        inserted = None
        if reason == "missing_manager_exchange" and not self._has_pending(ledger, "invest_ask_manager"):
            ledger, inserted = self._insert_missing(
                ledger, "Verify business legitimacy with the supervisor (required before judging)", "invest_ask_manager"
            )
        elif reason == "feedback_incomplete" and not self._has_pending(ledger, "invest_ask_user"):
            ledger, inserted = self._insert_missing(ledger, "Question the user about the flagged activity", "invest_ask_user")
        elif reason == "verdict_missing" and not self._has_pending(ledger, "invest_judge"):
            ledger, inserted = self._insert_missing(ledger, "Record the final risk qualification", "invest_judge")
        ctx.emit(
            EventKind.PLAN_UPDATED,
            {"ledger": ledger.to_dict(), "reason": f"guard block ({reason})" + (f"; inserted {inserted}" if inserted else "")},
        )

    @staticmethod
    def _has_pending(ledger: PlanLedger, tool: str) -> bool:
        return any(
            i.tool_hint == tool and i.status in (StepStatus.PENDING, StepStatus.IN_PROGRESS)
            for i in ledger.dynamic_steps
        )

    def _mark_item(self, ctx: _StepCtx, item_id: str, status: StepStatus, note: str | None = None) -> None:
        ledger = set_status(ctx.task.plan, item_id, status, note=note)
        ctx.emit(EventKind.PLAN_UPDATED, {"ledger": ledger.to_dict(), "reason": f"{item_id} -> {status.value}"})

    # ---- dialogue conclusion ------------------------------------------

    def _conclude_dialogue(self, ctx: _StepCtx, item: PlanItem | None, summary_doc: dict[str, Any]) -> None:
        task = ctx.task
        respondent = summary_doc.get("respondent", "user")
        min_rounds = self.config.limits["dialogue_rounds"]["min"]
        rounds = task.transcript.rounds_for(respondent)

        if respondent == Respondent.USER.value and rounds < min_rounds:
            # below the round floor: issue a confirmation round instead of concluding
            ctx.emit(
                EventKind.ERROR,
                {"kind": "early_conclusion_deferred", "reason": f"rounds={rounds} < min {min_rounds}"},
            )
            call = ToolCall(
                name="invest_ask_user",
                args={"user_id": task.alert.actor_id, "question": hci.CONFIRMATION_QUESTION},
                raw_text="",
            )
            decision = check_sequence(self.registry, call, ctx.task)
            if decision.allowed:
                self._emit_synthetic_call(ctx, call)
                self._dispatch(ctx, call, self.registry.get(call.name), item)
            return

        base = FeedbackRecord.from_dict({**summary_doc, "respondent": respondent})
        analysis = hci.analyze_conclusion(task.transcript, task.alert, respondent, base)
        merged = hci.merge_summary(base, analysis)

        transcript_flags = list(merged.flags)
        if analysis.suspicious and ReplyFlag.SUSPICIOUS.value not in transcript_flags:
            transcript_flags.append(ReplyFlag.SUSPICIOUS.value)

        ctx.emit(
            EventKind.REFLECTION,
            {
                "reflection": {
                    "assessment": f"{respondent} dialogue concluded",
                    "step_succeeded": True,
                    "sufficient_evidence": False,
                    "updates": [],
                },
                "feedback_summary": merged.to_dict(),
                "dialogue_concluded": respondent,
                "transcript_flags": transcript_flags,
            },
        )

        # close out the inquiry item mechanically
        ledger = ctx.task.plan
        wanted_tool = "invest_ask_manager" if respondent == "manager" else "invest_ask_user"
        target = item if item is not None and item.tool_hint == wanted_tool else None
        if target is None:
            for candidate in ledger.dynamic_steps:
                if candidate.tool_hint == wanted_tool and candidate.status in (
                    StepStatus.IN_PROGRESS,
                    StepStatus.PENDING,
                ):
                    target = candidate
                    break
        if target is not None:
            ledger = set_status(ledger, target.item_id, StepStatus.DONE)
            ctx.emit(EventKind.PLAN_UPDATED, {"ledger": ledger.to_dict(), "reason": f"{respondent} inquiry concluded"})

    # ---- execution dispatch -------------------------------------------

    def _dispatch(self, ctx: _StepCtx, call: ToolCall, schema, item: PlanItem | None) -> None:
        effect = schema.side_effect_class
        if effect is SideEffect.OUTBOUND_MESSAGE:
            self._run_messaging_tool(ctx, call, schema, item)
        elif effect is SideEffect.ADJUDICATION:
            self._judge(ctx, item, proposed=call.args)
        elif effect is SideEffect.STATE_CONTROL:
            self._terminate(ctx, call)
        elif effect is SideEffect.DISPOSAL:
            self._run_disposal(ctx, call, item)
        else:  # pragma: no cover - enum closed
            raise RuntimeError(f"unknown side effect {effect}")

    def _send_outbound(self, ctx: _StepCtx, respondent: str, text: str, expects_reply: bool):
        task = ctx.task
        alert = task.alert
        identity = {"user": alert.actor_id, "manager": alert.supervisor_id, "admin": alert.admin_id}[respondent]
        ordinal = sum(1 for e in task.transcript.exchanges if e.role == "agent")
        corr = correlation_id(task.task_id, ordinal)
        ctx.emit(
            EventKind.MESSAGE_OUT,
            {
                "respondent": respondent,
                "text": text,
                "correlation_id": corr,
                "identity": identity,
                "round_index": task.transcript.rounds_for(respondent) + 1,
                "expects_reply": expects_reply,
            },
        )
        message = OutboundMessage(
            task_id=task.task_id,
            role=respondent,
            identity=identity,
            text=text,
            correlation_id=corr,
            expects_reply=expects_reply,
        )
        return self.gateway.send(message, ctx.task)

    def _run_messaging_tool(self, ctx: _StepCtx, call: ToolCall, schema, item: PlanItem | None) -> None:
        name = call.name
        if name in ASK_RESPONDENT:
            respondent = ASK_RESPONDENT[name]
            question = str(call.args.get("question") or call.args.get("reason") or "")
            max_rounds = self.config.limits["dialogue_rounds"]["max"]
            if respondent in ("user", "manager") and ctx.task.transcript.rounds_for(respondent) >= max_rounds:
                # round ceiling: force-conclude instead of asking again
                ctx.emit(
                    EventKind.ERROR,
                    {"kind": "round_cap_reached", "reason": f"{respondent} dialogue at {max_rounds} rounds"},
                )
                mechanical = hci.mechanical_summary(ctx.task.transcript, respondent, status="inconclusive")
                self._conclude_dialogue(ctx, item, mechanical.to_dict())
                return
            if item is not None and item.status is StepStatus.PENDING:
                self._mark_item(ctx, item.item_id, StepStatus.IN_PROGRESS)
            receipt = self._send_outbound(ctx, respondent, question, expects_reply=True)
            ctx.emit(EventKind.TOOL_RESULT, {"name": name, "ok": True, "detail": f"question sent to {respondent}"})
            if respondent in PARK_STATE:
                deadline = ctx.clock.now() + timedelta(hours=self.config.limits["wait_deadline_hours"])
                ctx.change_state(PARK_STATE[respondent], reason="awaiting reply", wait_deadline=deadline)
            if receipt.reply is not None:
                self._deliver_inline(ctx, receipt.reply.role, receipt.reply.text, receipt.reply.correlation_id)
        else:
            respondent = NOTIFY_RESPONDENT[name]
            message = str(call.args.get("message", ""))
            self._send_outbound(ctx, respondent, message, expects_reply=False)
            ctx.emit(EventKind.TOOL_RESULT, {"name": name, "ok": True, "detail": f"notification sent to {respondent}"})
            if item is not None:
                self._mark_item(ctx, item.item_id, StepStatus.DONE)

    def _judge(self, ctx: _StepCtx, item: PlanItem | None, proposed: dict[str, Any] | None) -> None:
        try:
            bundle = assemble_evidence(ctx.task)
        except EvidenceError as exc:
            reason = {
                "missing_user_feedback": "feedback_incomplete",
                "missing_manager_feedback": "missing_manager_exchange",
            }.get(exc.code, exc.code)
            self._handle_block(ctx, item, ToolCall("invest_judge", {}, ""), reason)
            return

        label = conf = rationale = None
        if proposed is not None:
            label = proposed.get("label")
            pct = proposed.get("confidence_pct")
            conf = (pct / 100.0) if isinstance(pct, (int, float)) else None
            rationale = proposed.get("rationale")
        verdict, overridden = adjudicate(bundle, label, conf, rationale)

        ctx.change_state(TaskState.JUDGING, reason="adjudication")
        ctx.emit(
            EventKind.VERDICT_SET,
            {
                "verdict": verdict.to_dict(),
                "overridden": overridden,
                "consistency_flags": verdict.consistency_flags,
                "evidence_records": len(bundle.human_feedback),
            },
        )
        if proposed is None:
            ctx.emit(EventKind.ERROR, {"kind": "verdict_fallback", "reason": "rule-derived verdict after unusable turns"})
        ctx.emit(EventKind.TOOL_RESULT, {"name": "invest_judge", "ok": True, "detail": f"verdict {verdict.label.value}"})
        ctx.change_state(TaskState.DISPOSING, reason="verdict recorded")
        if item is not None:
            self._mark_item(ctx, item.item_id, StepStatus.DONE)

    def _terminate(self, ctx: _StepCtx, call: ToolCall) -> None:
        mode = call.args.get("mode", "suspend")
        ctx.emit(EventKind.TOOL_RESULT, {"name": "terminate", "ok": True, "detail": f"mode {mode}"})
        if mode == "end":
            ctx.change_state(TaskState.FAILED, reason=f"ended by terminate: {call.args.get('reason', '')}")
        else:
            ctx.change_state(TaskState.SUSPENDED, reason=str(call.args.get("reason", "suspended")))

    def _run_disposal(self, ctx: _StepCtx, call: ToolCall, item: PlanItem | None) -> None:
        task = ctx.task
        assert task.verdict is not None  # guarded by check_sequence

        def notify(role: str, text: str) -> None:
            tool = "invest_notify_user" if role == "user" else "invest_notify_admin"
            target_key = "user_id" if role == "user" else "admin_id"
            target = task.alert.actor_id if role == "user" else task.alert.admin_id
            self._emit_synthetic_call(ctx, ToolCall(tool, {target_key: target, "message": text}, ""))
            self._send_outbound(ctx, role, text, expects_reply=False)
            ctx.emit(EventKind.TOOL_RESULT, {"name": tool, "ok": True, "detail": "disposal notification"})

        executor = DisposalExecutor(
            data_dir=self.config.data_dir,
            notify=notify,
            webhook_url=self.config.containment_webhook,
        )
        plan = select_disposal(task.verdict, task.alert, self.config.disposal)
        result = executor.execute(plan, task.task_id, task.alert, task.verdict)
        ctx.emit(
            EventKind.DISPOSAL_EXECUTED,
            {"plan": result.plan.to_dict(), "escalated_on_failure": result.escalated_on_failure},
        )
        ctx.emit(EventKind.TOOL_RESULT, {"name": call.name, "ok": True, "detail": "disposal complete"})
        if item is not None:
            self._mark_item(ctx, item.item_id, StepStatus.DONE)

    # ------------------------------------------------------------------
    # model turns
    # ------------------------------------------------------------------

    def _model_turn(self, ctx: _StepCtx, purpose: str, reminder: bool = False) -> str:
        task = ctx.task
        alert = task.alert
        system = self.prompts.render(
            "investigator_system",
            {"category": alert.category.value, "actor_id": alert.actor_id, "anomaly": hci.anomaly_summary(alert)},
        )
        instruction_name = {"plan": "plan_request", "act": "act_request"}[purpose]
        instruction = self.prompts.render(
            instruction_name,
            {
                "anomaly": hci.anomaly_summary(alert),
                "ledger": render_ledger(task.plan) if task.plan else "(no plan yet)",
                "reminder": " Reply with the required fenced block exactly." if reminder else "",
            },
        )
        messages: list[ChatMessage] = []
        for exchange in task.transcript.exchanges[-12:]:
            role = "agent_thought" if exchange.role == "agent" else "respondent"
            messages.append(ChatMessage(role=role, text=f"[{exchange.role}] {exchange.text}"))
        messages.append(ChatMessage(role="system", text=instruction))

        turn_index = task.model_turns
        request = ChatRequest(
            system_prompt=system,
            messages=messages,
            tool_schemas=self.registry.render_schema_doc(),
            params=dict(self.config.backend_params),
            scenario_key=self._bindings.get(task.task_id),
            turn_index=turn_index,
        )
        reply = self.backend.complete(request)
        ctx.step_ms += reply.latency_ms
        ctx.calls_made += 1
        ctx.turn = turn_index
        return reply.content

    # ------------------------------------------------------------------
    # recovery and scheduling
    # ------------------------------------------------------------------

    def resume_all(self) -> int:
        """Rehydrate every non-terminal task from its event log; queue runnables."""
        tasks, corrupt = self.store.load_all()
        for bad in corrupt:
            if bad.partial is not None and not bad.partial.is_terminal():
                ctx = _StepCtx(task=copy.deepcopy(bad.partial), clock=self.clock_for(bad.task_id))
                ctx.emit(EventKind.ERROR, {"kind": "corrupt_log", "reason": bad.reason})
                ctx.change_state(TaskState.FAILED, reason="corrupt event log")
                self._commit(ctx)
        count = 0
        for task in tasks:
            if task.is_terminal():
                continue
            count += 1
            if task.is_runnable():
                self.enqueue(task.task_id)
        return count

    def check_deadlines(self) -> int:
        """Escalate and suspend parked tasks whose wait deadline has passed."""
        flipped = 0
        for task in self.store.all_tasks():
            if task.is_terminal() or task.wait_deadline is None:
                continue
            if task.state not in PARK_STATE.values() and task.state is not TaskState.AWAITING_ADMIN_AUTH:
                continue
            now = self.clock_for(task.task_id).now()
            if now < task.wait_deadline:
                continue
            with self._lock_for(task.task_id):
                ctx = self._ctx(task)
                ctx.emit(EventKind.ERROR, {"kind": "wait_deadline", "reason": "no reply within deadline"})
                self._send_outbound(
                    ctx, Respondent.ADMIN.value, f"Task {task.task_id} exceeded its reply deadline; suspended.", False
                )
                ctx.change_state(TaskState.SUSPENDED, reason="wait deadline exceeded")
                self._commit(ctx)
                flipped += 1
        return flipped

    def resume_task(self, task_id: str) -> None:
        """SUSPENDED -> prior state."""
        with self._lock_for(task_id):
            task = self.store.get(task_id)
            if task is None or task.state is not TaskState.SUSPENDED or task.prior_state is None:
                raise PreconditionError("task not suspended")
            ctx = self._ctx(task)
            ctx.change_state(task.prior_state, reason="resumed")
            self._commit(ctx)
        if ctx.task.is_runnable():
            self.enqueue(task_id)

    def enqueue(self, task_id: str) -> None:
        with self._sched_lock:
            if task_id in self._pending:
                return
            self._pending.add(task_id)
            self._outstanding += 1
        self._queue.put(task_id)

    def _work_one(self, task_id: str) -> None:
        with self._sched_lock:
            self._pending.discard(task_id)
            self._running_steps += 1
            self.peak_concurrency = max(self.peak_concurrency, self._running_steps)
        requeue = False
        try:
            task = self.store.get(task_id)
            if task is not None and not task.is_terminal() and task.is_runnable():
                self.step_task(task_id)
                after = self.store.get(task_id)
                requeue = after is not None and after.is_runnable() and not after.is_terminal()
        except PreconditionError:
            pass
        except Exception:
            logger.exception("worker error on %s", task_id)
        finally:
            if requeue:
                self.enqueue(task_id)
            with self._idle:
                self._running_steps -= 1
                self._outstanding -= 1
                if self._outstanding == 0:
                    self._idle.notify_all()

    def _worker_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is self._stop:
                break
            self._work_one(item)

    def start_workers(self, concurrency: int | None = None) -> None:
        n = concurrency or self.config.limits["max_concurrency"]
        for _ in range(n):
            t = threading.Thread(target=self._worker_loop, daemon=True)
            t.start()
            self._workers.append(t)

    def stop_workers(self) -> None:
        for _ in self._workers:
            self._queue.put(self._stop)
        for t in self._workers:
            t.join(timeout=10)
        self._workers.clear()

    def run_until_idle(self, concurrency: int | None = None) -> None:
        """Batch mode: drive every queued task to park or terminal, then return."""
        started = not self._workers
        if started:
            self.start_workers(concurrency)
        with self._idle:
            while self._outstanding > 0:
                self._idle.wait(timeout=0.5)
        if started:
            self.stop_workers()
