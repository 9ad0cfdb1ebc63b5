"""Domain types: alerts, tasks, events, transcripts, evidence, verdicts, disposal.

The investigation task is event-sourced: every mutation is expressed as a
TaskEvent, and :func:`apply_event` / :func:`fold_events` rebuild the snapshot.
Coordinator code never mutates a task directly, which is what makes the
fold-equals-snapshot invariant hold by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any

from .planner import PlanLedger
from .util import from_iso, to_iso


class AlertCategory(str, Enum):
    LARGE_FILE_DOWNLOAD = "large_file_download"
    ACCOUNT_BORROWING = "account_borrowing"
    IP_SCANNING = "ip_scanning"
    SUSPICIOUS_LOGON = "suspicious_logon"
    PROHIBITED_SOFTWARE = "prohibited_software"
    CRAWLER_ACCESS = "crawler_access"
    OTHER = "other"


class Severity(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class AlertOrigin(str, Enum):
    HTTP = "http"
    QUEUE = "queue"


@dataclass
class Alert:
    alert_id: str
    category: AlertCategory
    severity: Severity
    actor_id: str
    supervisor_id: str
    admin_id: str
    dimensions: dict[str, Any]
    observed_at: datetime
    origin: AlertOrigin

    def to_dict(self) -> dict[str, Any]:
        return {
            "alert_id": self.alert_id,
            "category": self.category.value,
            "severity": self.severity.value,
            "actor_id": self.actor_id,
            "supervisor_id": self.supervisor_id,
            "admin_id": self.admin_id,
            "dimensions": dict(self.dimensions),
            "observed_at": to_iso(self.observed_at),
            "origin": self.origin.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Alert":
        return cls(
            alert_id=data["alert_id"],
            category=AlertCategory(data["category"]),
            severity=Severity(data["severity"]),
            actor_id=data["actor_id"],
            supervisor_id=data["supervisor_id"],
            admin_id=data["admin_id"],
            dimensions=dict(data["dimensions"]),
            observed_at=from_iso(data["observed_at"]),
            origin=AlertOrigin(data["origin"]),
        )


class TaskState(str, Enum):
    CREATED = "CREATED"
    AWAITING_ADMIN_AUTH = "AWAITING_ADMIN_AUTH"
    PLANNING = "PLANNING"
    INVESTIGATING = "INVESTIGATING"
    AWAITING_USER_REPLY = "AWAITING_USER_REPLY"
    AWAITING_MANAGER_REPLY = "AWAITING_MANAGER_REPLY"
    JUDGING = "JUDGING"
    DISPOSING = "DISPOSING"
    CLOSED = "CLOSED"
    SUSPENDED = "SUSPENDED"
    FAILED = "FAILED"


TERMINAL_STATES = {TaskState.CLOSED, TaskState.FAILED}
PARKED_STATES = {
    TaskState.AWAITING_ADMIN_AUTH,
    TaskState.AWAITING_USER_REPLY,
    TaskState.AWAITING_MANAGER_REPLY,
    TaskState.SUSPENDED,
}
RUNNABLE_STATES = {TaskState.PLANNING, TaskState.INVESTIGATING, TaskState.JUDGING, TaskState.DISPOSING}

# allowed transitions, before the blanket non-terminal -> {SUSPENDED, FAILED} rule
_TRANSITIONS: dict[TaskState, set[TaskState]] = {
    TaskState.CREATED: {TaskState.AWAITING_ADMIN_AUTH},
    TaskState.AWAITING_ADMIN_AUTH: {TaskState.PLANNING, TaskState.CLOSED},
    TaskState.PLANNING: {TaskState.INVESTIGATING},
    TaskState.INVESTIGATING: {
        TaskState.AWAITING_USER_REPLY,
        TaskState.AWAITING_MANAGER_REPLY,
        TaskState.JUDGING,
    },
    TaskState.AWAITING_USER_REPLY: {TaskState.INVESTIGATING},
    TaskState.AWAITING_MANAGER_REPLY: {TaskState.INVESTIGATING},
    TaskState.JUDGING: {TaskState.DISPOSING},
    TaskState.DISPOSING: {TaskState.CLOSED},
    TaskState.SUSPENDED: set(),  # resume target checked against prior state
    TaskState.CLOSED: set(),
    TaskState.FAILED: set(),
}


def transition_allowed(current: TaskState, target: TaskState, prior: TaskState | None = None) -> bool:
    if current in TERMINAL_STATES:
        return False
    if target in (TaskState.SUSPENDED, TaskState.FAILED):
        return True
    if current is TaskState.SUSPENDED:
        return prior is not None and target is prior
    return target in _TRANSITIONS[current]


class EventKind(str, Enum):
    CREATED = "created"
    STATE_CHANGED = "state_changed"
    TOOL_CALLED = "tool_called"
    TOOL_RESULT = "tool_result"
    MESSAGE_IN = "message_in"
    MESSAGE_OUT = "message_out"
    PLAN_UPDATED = "plan_updated"
    REFLECTION = "reflection"
    VERDICT_SET = "verdict_set"
    DISPOSAL_EXECUTED = "disposal_executed"
    ERROR = "error"
    RETRIED = "retried"


@dataclass
class TaskEvent:
    seq: int
    task_id: str
    kind: EventKind
    payload: dict[str, Any]
    at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "task_id": self.task_id,
            "kind": self.kind.value,
            "payload": self.payload,
            "at": to_iso(self.at),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TaskEvent":
        return cls(
            seq=int(data["seq"]),
            task_id=data["task_id"],
            kind=EventKind(data["kind"]),
            payload=data["payload"],
            at=from_iso(data["at"]),
        )


class Respondent(str, Enum):
    USER = "user"
    MANAGER = "manager"
    ADMIN = "admin"


class ReplyFlag(str, Enum):
    COOPERATIVE = "cooperative"
    EVASIVE = "evasive"
    OFF_TOPIC = "off_topic"
    GIBBERISH = "gibberish"
    EMOTIONAL = "emotional"
    INJECTION_SUSPECTED = "injection_suspected"
    SPOOF_SUSPECTED = "spoof_suspected"
    SUSPICIOUS = "suspicious"


@dataclass
class Exchange:
    role: str  # agent | user | manager | admin
    text: str
    at: datetime
    round_index: int
    respondent: str | None = None  # set on agent messages: who it addresses
    correlation_id: str | None = None
    flags: list[str] = field(default_factory=list)
    solicited: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "text": self.text,
            "at": to_iso(self.at),
            "round_index": self.round_index,
            "respondent": self.respondent,
            "correlation_id": self.correlation_id,
            "flags": list(self.flags),
            "solicited": self.solicited,
        }


@dataclass
class DialogueTranscript:
    exchanges: list[Exchange] = field(default_factory=list)
    rounds: dict[str, int] = field(default_factory=dict)  # respondent -> completed rounds
    flags: list[str] = field(default_factory=list)
    concluded: dict[str, bool] = field(default_factory=dict)

    def rounds_for(self, respondent: str) -> int:
        return self.rounds.get(respondent, 0)

    def is_concluded(self, respondent: str) -> bool:
        return self.concluded.get(respondent, False)

    def add_flags(self, flags: list[str]) -> None:
        for f in flags:
            if f not in self.flags:
                self.flags.append(f)

    def to_dict(self) -> dict[str, Any]:
        return {
            "exchanges": [e.to_dict() for e in self.exchanges],
            "rounds": dict(self.rounds),
            "flags": list(self.flags),
            "concluded": dict(self.concluded),
        }


@dataclass
class FeedbackRecord:
    respondent: str
    justification: str
    authorization_claimed: bool
    authorizer: str | None = None
    consistency_notes: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    status: str = "concluded"  # concluded | inconclusive

    def to_dict(self) -> dict[str, Any]:
        return {
            "respondent": self.respondent,
            "justification": self.justification,
            "authorization_claimed": self.authorization_claimed,
            "authorizer": self.authorizer,
            "consistency_notes": list(self.consistency_notes),
            "flags": list(self.flags),
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FeedbackRecord":
        return cls(
            respondent=data["respondent"],
            justification=data.get("justification", ""),
            authorization_claimed=bool(data.get("authorization_claimed", False)),
            authorizer=data.get("authorizer"),
            consistency_notes=list(data.get("consistency_notes", [])),
            flags=list(data.get("flags", [])),
            status=data.get("status", "concluded"),
        )


@dataclass
class EvidenceBundle:
    technical_metadata: dict[str, Any] = field(default_factory=dict)
    behavioral_analysis: dict[str, Any] = field(default_factory=dict)
    human_feedback: list[FeedbackRecord] = field(default_factory=list)

    def feedback_for(self, respondent: str) -> FeedbackRecord | None:
        for rec in self.human_feedback:
            if rec.respondent == respondent:
                return rec
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "technical_metadata": self.technical_metadata,
            "behavioral_analysis": self.behavioral_analysis,
            "human_feedback": [r.to_dict() for r in self.human_feedback],
        }


class VerdictLabel(str, Enum):
    NO_RISK = "no_risk"
    BENIGN_VIOLATION = "benign_violation"
    CONFIRMED_THREAT = "confirmed_threat"
    INCONCLUSIVE = "inconclusive"


BENIGN_LABELS = {VerdictLabel.NO_RISK, VerdictLabel.BENIGN_VIOLATION}


class ConsistencyFlag(str, Enum):
    STREAMS_AGREE = "streams_agree"
    USER_MANAGER_CONFLICT = "user_manager_conflict"
    FEEDBACK_CONTRADICTS_TELEMETRY = "feedback_contradicts_telemetry"


@dataclass
class RiskVerdict:
    label: VerdictLabel
    confidence: float
    rationale: str
    consistency_flags: list[str] = field(default_factory=list)
    source: str = "model"  # model | rule_override

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label.value,
            "confidence": self.confidence,
            "rationale": self.rationale,
            "consistency_flags": list(self.consistency_flags),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RiskVerdict":
        return cls(
            label=VerdictLabel(data["label"]),
            confidence=float(data["confidence"]),
            rationale=data.get("rationale", ""),
            consistency_flags=list(data.get("consistency_flags", [])),
            source=data.get("source", "model"),
        )


class DisposalAction(str, Enum):
    CLOSE_WITH_NOTIFICATION = "close_with_notification"
    SEND_AWARENESS_TRAINING = "send_awareness_training"
    ESCALATE_TO_HUMAN = "escalate_to_human"
    ENFORCE_TWO_FACTOR = "enforce_two_factor"
    TERMINATE_SESSION = "terminate_session"
    BLACKLIST_IP = "blacklist_ip"
    ISOLATE_NETWORK = "isolate_network"


CONTAINMENT_ACTIONS = {
    DisposalAction.ENFORCE_TWO_FACTOR,
    DisposalAction.TERMINATE_SESSION,
    DisposalAction.BLACKLIST_IP,
    DisposalAction.ISOLATE_NETWORK,
}


@dataclass
class PlannedAction:
    action: DisposalAction
    target: str
    status: str = "pending"  # pending | done | failed
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action.value,
            "target": self.target,
            "status": self.status,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PlannedAction":
        return cls(
            action=DisposalAction(data["action"]),
            target=data["target"],
            status=data.get("status", "pending"),
            detail=data.get("detail", ""),
        )


@dataclass
class DisposalPlan:
    actions: list[PlannedAction] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"actions": [a.to_dict() for a in self.actions]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DisposalPlan":
        return cls(actions=[PlannedAction.from_dict(a) for a in data.get("actions", [])])


@dataclass
class InvestigationTask:
    """Event-sourced snapshot of one investigation."""

    task_id: str
    alert: Alert
    state: TaskState = TaskState.CREATED
    prior_state: TaskState | None = None
    plan: PlanLedger | None = None
    transcript: DialogueTranscript = field(default_factory=DialogueTranscript)
    evidence: EvidenceBundle = field(default_factory=EvidenceBundle)
    verdict: RiskVerdict | None = None
    disposal: DisposalPlan | None = None
    retry_count: int = 0
    created_at: datetime | None = None
    updated_at: datetime | None = None
    wait_deadline: datetime | None = None
    admin_decision: str | None = None  # approve | deny
    model_turns: int = 0
    step_count: int = 0
    active_ms: float = 0.0  # sum of step durations, parked time excluded
    pending_outbound: dict[str, str] = field(default_factory=dict)  # correlation -> respondent
    last_error: str | None = None
    last_seq: int = 0

    def is_terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    def is_runnable(self) -> bool:
        return self.state in RUNNABLE_STATES or self.state is TaskState.CREATED

    def awaited_respondent(self) -> str | None:
        if self.state is TaskState.AWAITING_ADMIN_AUTH:
            return Respondent.ADMIN.value
        if self.state is TaskState.AWAITING_USER_REPLY:
            return Respondent.USER.value
        if self.state is TaskState.AWAITING_MANAGER_REPLY:
            return Respondent.MANAGER.value
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "alert": self.alert.to_dict(),
            "state": self.state.value,
            "prior_state": self.prior_state.value if self.prior_state else None,
            "plan": self.plan.to_dict() if self.plan else None,
            "transcript": self.transcript.to_dict(),
            "evidence": self.evidence.to_dict(),
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "disposal": self.disposal.to_dict() if self.disposal else None,
            "retry_count": self.retry_count,
            "created_at": to_iso(self.created_at),
            "updated_at": to_iso(self.updated_at),
            "wait_deadline": to_iso(self.wait_deadline),
            "admin_decision": self.admin_decision,
            "model_turns": self.model_turns,
            "step_count": self.step_count,
            "active_ms": self.active_ms,
            "pending_outbound": dict(self.pending_outbound),
            "last_error": self.last_error,
            "last_seq": self.last_seq,
        }


class EventApplyError(ValueError):
    """An event could not be applied to the snapshot (corrupt or out-of-order log)."""


def apply_event(task: InvestigationTask | None, event: TaskEvent) -> InvestigationTask:
    """Apply one event; the only mutation path for task snapshots."""
    if task is None:
        if event.kind is not EventKind.CREATED:
            raise EventApplyError(f"first event must be 'created', got {event.kind.value}")
        if event.seq != 1:
            raise EventApplyError(f"created event must have seq 1, got {event.seq}")
        payload = event.payload
        task = InvestigationTask(
            task_id=event.task_id,
            alert=Alert.from_dict(payload["alert"]),
            created_at=event.at,
        )
    else:
        if event.seq != task.last_seq + 1:
            raise EventApplyError(f"event seq {event.seq} does not follow {task.last_seq}")
        _apply_known(task, event)

    task.last_seq = event.seq
    task.updated_at = event.at
    turn = event.payload.get("turn")
    if isinstance(turn, int):
        task.model_turns = max(task.model_turns, turn + 1)
    step_ms = event.payload.get("step_ms")
    if step_ms is not None:
        task.active_ms += float(step_ms)
        task.step_count += 1
    return task


def _apply_known(task: InvestigationTask, event: TaskEvent) -> None:
    p = event.payload
    kind = event.kind

    if kind is EventKind.CREATED:
        raise EventApplyError("duplicate 'created' event")

    elif kind is EventKind.STATE_CHANGED:
        src = TaskState(p["from"])
        dst = TaskState(p["to"])
        if src is not task.state:
            raise EventApplyError(f"state_changed from {src.value} but snapshot is {task.state.value}")
        if not transition_allowed(src, dst, task.prior_state):
            raise EventApplyError(f"illegal transition {src.value} -> {dst.value}")
        task.prior_state = src
        task.state = dst
        deadline = p.get("wait_deadline")
        task.wait_deadline = from_iso(deadline) if deadline else None

    elif kind is EventKind.MESSAGE_OUT:
        respondent = p["respondent"]
        corr = p["correlation_id"]
        task.transcript.exchanges.append(
            Exchange(
                role="agent",
                text=p["text"],
                at=event.at,
                round_index=p.get("round_index", task.transcript.rounds_for(respondent) + 1),
                respondent=respondent,
                correlation_id=corr,
            )
        )
        if p.get("expects_reply", True):
            task.pending_outbound[corr] = respondent

    elif kind is EventKind.MESSAGE_IN:
        role = p["role"]
        solicited = bool(p.get("solicited", True))
        flags = list(p.get("flags", []))
        round_index = p.get("round_index", task.transcript.rounds_for(role) + (1 if solicited else 0))
        task.transcript.exchanges.append(
            Exchange(
                role=role,
                text=p["text"],
                at=event.at,
                round_index=round_index,
                correlation_id=p.get("correlation_id"),
                flags=flags,
                solicited=solicited,
            )
        )
        if solicited:
            task.transcript.rounds[role] = round_index
            corr = p.get("correlation_id")
            if corr and corr in task.pending_outbound:
                del task.pending_outbound[corr]
        task.transcript.add_flags(flags)
        if role == Respondent.ADMIN.value and p.get("decision") in ("approve", "deny"):
            task.admin_decision = p["decision"]

    elif kind is EventKind.PLAN_UPDATED:
        task.plan = PlanLedger.from_dict(p["ledger"])

    elif kind is EventKind.REFLECTION:
        summary = p.get("feedback_summary")
        if summary:
            task.evidence.human_feedback.append(FeedbackRecord.from_dict(summary))
        concluded = p.get("dialogue_concluded")
        if concluded:
            task.transcript.concluded[concluded] = True
        extra_flags = p.get("transcript_flags")
        if extra_flags:
            task.transcript.add_flags(list(extra_flags))

    elif kind is EventKind.VERDICT_SET:
        if task.verdict is not None:
            raise EventApplyError("verdict set twice")
        task.verdict = RiskVerdict.from_dict(p["verdict"])

    elif kind is EventKind.DISPOSAL_EXECUTED:
        task.disposal = DisposalPlan.from_dict(p["plan"])

    elif kind is EventKind.ERROR:
        task.last_error = p.get("reason", "error")

    elif kind is EventKind.RETRIED:
        task.retry_count = int(p["retry_count"])

    elif kind in (EventKind.TOOL_CALLED, EventKind.TOOL_RESULT):
        pass  # audit trail; turn/step bookkeeping handled by apply_event

    else:  # pragma: no cover - enum is closed
        raise EventApplyError(f"unknown event kind {kind}")


def fold_events(events: list[TaskEvent]) -> InvestigationTask:
    """Rebuild a task snapshot from its full event history."""
    if not events:
        raise EventApplyError("empty event history")
    task: InvestigationTask | None = None
    for event in events:
        task = apply_event(task, event)
    assert task is not None
    return task
