"""Tool library: schemas, call parsing, validation, repair, and the sequence guard.

The engineering layer around model-emitted tool calls does three jobs:

* strict parse + schema validation (first-pass success feeds the OSR metric);
* a deterministic repair ladder (fence stripping / JSON cleanup, parameter
  normalization, duplicate-notification suppression) whose recoveries feed
  the FSR metric;
* a non-overridable call-sequence guard that refuses calls whose recorded
  prerequisites are missing, regardless of what the model claims in text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .model import InvestigationTask, ReplyFlag

# tools that must exist in every registry
CORE_TOOLS = (
    "invest_ask_admin",
    "invest_notify_admin",
    "invest_ask_user",
    "invest_ask_manager",
    "invest_judge",
    "invest_notify_user",
    "terminate",
    "closed_loop_Processing",
)

NOTIFICATION_TOOLS = {"invest_notify_admin", "invest_notify_user"}


class ParamKind(str, Enum):
    STRING = "string"
    INTEGER = "integer"
    BOOLEAN = "boolean"
    ENUM = "enum"
    LIST_OF_STRING = "list_of_string"


class SideEffect(str, Enum):
    OUTBOUND_MESSAGE = "outbound_message"
    STATE_CONTROL = "state_control"
    ADJUDICATION = "adjudication"
    DISPOSAL = "disposal"


@dataclass
class ToolParam:
    name: str
    kind: ParamKind
    required: bool = True
    values: tuple[str, ...] = ()  # enum members when kind == ENUM
    aliases: tuple[str, ...] = ()  # intake key aliases folded by repair


@dataclass
class ToolSchema:
    name: str
    description: str
    params: list[ToolParam]
    trigger_note: str
    side_effect_class: SideEffect
    prerequisites: tuple[str, ...] = ()  # named predicates checked by the guard
    parks: bool = False

    def param(self, name: str) -> ToolParam | None:
        for p in self.params:
            if p.name == name:
                return p
        return None


@dataclass
class ToolCall:
    name: str
    args: dict[str, Any]
    raw_text: str

    def identity(self) -> tuple[str, str]:
        return (self.name, json.dumps(self.args, sort_keys=True))


class RepairKind(str, Enum):
    JSON_REPAIR = "json_repair"
    PARAM_NORMALIZATION = "param_normalization"
    DUPLICATE_NOTIFICATION_DROPPED = "duplicate_notification_dropped"


@dataclass
class ValidationOutcome:
    status: str  # valid | repaired | rejected
    repairs: list[str] = field(default_factory=list)
    reason: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"status": self.status, "repairs": list(self.repairs), "reason": self.reason}


@dataclass
class ResolvedCall:
    """Outcome of the full parse -> validate -> repair pipeline for one turn."""

    call: ToolCall | None
    outcome: ValidationOutcome
    duplicate_noop: bool = False

    @property
    def first_pass_valid(self) -> bool:
        return self.outcome.status == "valid"

    @property
    def final_valid(self) -> bool:
        return self.outcome.status in ("valid", "repaired")


class ToolCallParseError(ValueError):
    def __init__(self, code: str, span: str = ""):
        super().__init__(code)
        self.code = code  # no_block | invalid_json
        self.span = span


_FENCE_RE = re.compile(r"```(?:tool|json)?\s*\n(.*?)```", re.DOTALL)
_BARE_RE = re.compile(r"\{\s*\"tool\"\s*:", re.DOTALL)
_OBJ_START_RE = re.compile(r"\{\s*\"")

_decoder = json.JSONDecoder()


def _broken_span(model_output: str) -> str | None:
    """Best-effort span of a tool-call attempt that did not parse, for repair."""
    for m in _FENCE_RE.finditer(model_output):
        body = m.group(1).strip()
        if '"tool"' in body:
            return body
    m = _BARE_RE.search(model_output)
    if m:
        depth = 0
        for i in range(m.start(), len(model_output)):
            ch = model_output[i]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return model_output[m.start() : i + 1]
        return model_output[m.start() :]
    return None


def parse_tool_call(model_output: str) -> ToolCall:
    """Strict first-pass parse of one assistant turn into a ToolCall.

    No cleanup is attempted here: malformed JSON fails so that the repair
    layer (and the OSR/FSR split) can observe it. Well-formed calls are
    located with a real JSON decode at each object start, so string values
    containing braces or fence markers cannot derail extraction.
    """
    for m in _OBJ_START_RE.finditer(model_output):
        try:
            doc, end = _decoder.raw_decode(model_output, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict) and "tool" in doc:
            args = doc.get("args", {})
            span = model_output[m.start() : end]
            if not isinstance(args, dict):
                raise ToolCallParseError("invalid_json", span)
            return ToolCall(name=str(doc["tool"]), args=args, raw_text=span)
    span = _broken_span(model_output)
    if span is not None:
        raise ToolCallParseError("invalid_json", span)
    raise ToolCallParseError("no_block")


def _strip_json_noise(span: str) -> str:
    """Best-effort JSON cleanup: fences, trailing commas, unbalanced brackets/quotes."""
    text = span.strip()
    text = re.sub(r"^```(?:tool|json)?\s*", "", text)
    text = re.sub(r"```$", "", text).strip()
    text = re.sub(r",(\s*[}\]])", r"\1", text)
    if text.count('"') % 2 == 1:
        text += '"'
    opens, closes = text.count("{"), text.count("}")
    if opens > closes:
        text += "}" * (opens - closes)
    elif closes > opens:
        while text.endswith("}") and text.count("}") > text.count("{"):
            text = text[:-1].rstrip()
    return text


_TRUTHY = {"true", "yes", "1"}
_FALSY = {"false", "no", "0"}


class ToolRegistry:
    """Immutable-after-startup schema registry plus the validation pipeline."""

    def __init__(self, schemas: list[ToolSchema]):
        self._schemas: dict[str, ToolSchema] = {}
        for schema in schemas:
            if schema.name in self._schemas:
                raise ValueError(f"duplicate tool schema {schema.name!r}")
            self._schemas[schema.name] = schema
        missing = [name for name in CORE_TOOLS if name not in self._schemas]
        if missing:
            raise ValueError(f"registry missing core tools: {missing}")

    def get(self, name: str) -> ToolSchema | None:
        return self._schemas.get(name)

    def names(self) -> list[str]:
        return list(self._schemas)

    def render_schema_doc(self) -> str:
        """Plain-text rendering of the schemas for inclusion in prompts."""
        lines = []
        for schema in self._schemas.values():
            params = ", ".join(
                f"{p.name}: {p.kind.value}{'' if p.required else '?'}"
                + (f" one of {list(p.values)}" if p.values else "")
                for p in schema.params
            )
            lines.append(f"- {schema.name}({params}) -- {schema.description} [{schema.trigger_note}]")
        return "\n".join(lines)

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------

    def validate_call(self, call: ToolCall) -> ValidationOutcome:
        schema = self._schemas.get(call.name)
        if schema is None:
            return ValidationOutcome("rejected", reason=f"unknown_tool:{call.name}")
        for param in schema.params:
            if param.name not in call.args:
                if param.required:
                    return ValidationOutcome("rejected", reason=f"missing_param:{param.name}")
                continue
            value = call.args[param.name]
            if not _kind_matches(param, value):
                return ValidationOutcome("rejected", reason=f"type_mismatch:{param.name}")
        return ValidationOutcome("valid")

    # ------------------------------------------------------------------
    # repair ladder
    # ------------------------------------------------------------------

    def repair_call(self, model_output: str, context: list[ToolCall] | None = None) -> ResolvedCall:
        """Parse with repairs enabled; identity on already-valid turns.

        `context` carries the calls executed in this step and the previous
        one, which is the suppression window for duplicate notifications.
        """
        repairs: list[str] = []

        call: ToolCall | None = None
        try:
            call = parse_tool_call(model_output)
        except ToolCallParseError as exc:
            if exc.code == "no_block":
                return ResolvedCall(None, ValidationOutcome("rejected", reason="no_block"))
            cleaned = _strip_json_noise(exc.span)
            try:
                doc = json.loads(cleaned)
            except json.JSONDecodeError:
                return ResolvedCall(None, ValidationOutcome("rejected", reason="unparseable_json"))
            if not isinstance(doc, dict) or "tool" not in doc or not isinstance(doc.get("args", {}), dict):
                return ResolvedCall(None, ValidationOutcome("rejected", reason="not_a_tool_call"))
            call = ToolCall(name=str(doc["tool"]), args=dict(doc.get("args", {})), raw_text=exc.span)
            repairs.append(RepairKind.JSON_REPAIR.value)

        outcome = self.validate_call(call)
        if outcome.status == "rejected":
            normalized, changed = self._normalize_params(call)
            if changed:
                retry = self.validate_call(normalized)
                if retry.status == "valid":
                    call = normalized
                    repairs.append(RepairKind.PARAM_NORMALIZATION.value)
                    outcome = retry
            if outcome.status == "rejected":
                return ResolvedCall(None, outcome)

        if call.name in NOTIFICATION_TOOLS and context:
            if any(prev.identity() == call.identity() for prev in context):
                repairs.append(RepairKind.DUPLICATE_NOTIFICATION_DROPPED.value)
                return ResolvedCall(call, ValidationOutcome("repaired", repairs=repairs), duplicate_noop=True)

        if repairs:
            return ResolvedCall(call, ValidationOutcome("repaired", repairs=repairs))
        return ResolvedCall(call, ValidationOutcome("valid"))

    def _normalize_params(self, call: ToolCall) -> tuple[ToolCall, bool]:
        schema = self._schemas.get(call.name)
        if schema is None:
            return call, False
        args = dict(call.args)
        changed = False

        # fold known alias keys onto their declared names
        for param in schema.params:
            if param.name in args:
                continue
            for alias in param.aliases:
                if alias in args:
                    args[param.name] = args.pop(alias)
                    changed = True
                    break

        for param in schema.params:
            if param.name not in args:
                continue
            value = args[param.name]
            coerced, did = _coerce(param, value)
            if did:
                args[param.name] = coerced
                changed = True

        return ToolCall(name=call.name, args=args, raw_text=call.raw_text), changed


def _kind_matches(param: ToolParam, value: Any) -> bool:
    kind = param.kind
    if kind is ParamKind.STRING:
        return isinstance(value, str)
    if kind is ParamKind.INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind is ParamKind.BOOLEAN:
        return isinstance(value, bool)
    if kind is ParamKind.ENUM:
        return isinstance(value, str) and value in param.values
    if kind is ParamKind.LIST_OF_STRING:
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    return False  # pragma: no cover


def _coerce(param: ToolParam, value: Any) -> tuple[Any, bool]:
    kind = param.kind
    if kind is ParamKind.INTEGER and isinstance(value, str):
        try:
            return int(value.strip()), True
        except ValueError:
            return value, False
    if kind is ParamKind.BOOLEAN and isinstance(value, str):
        low = value.strip().lower()
        if low in _TRUTHY:
            return True, True
        if low in _FALSY:
            return False, True
        return value, False
    if kind is ParamKind.ENUM and isinstance(value, str) and value not in param.values:
        folded = value.strip().lower().replace(" ", "_")
        for member in param.values:
            if member.lower() == folded:
                return member, True
        return value, False
    if kind is ParamKind.LIST_OF_STRING and isinstance(value, str):
        return [value], True
    if kind is ParamKind.STRING and isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value), True
    return value, False


# ----------------------------------------------------------------------
# sequence guard
# ----------------------------------------------------------------------

SUSPICION_FLAGS = {
    ReplyFlag.SUSPICIOUS.value,
    ReplyFlag.INJECTION_SUSPECTED.value,
    ReplyFlag.SPOOF_SUSPECTED.value,
}


@dataclass
class GuardDecision:
    allowed: bool
    reason: str = ""


def check_sequence(registry: ToolRegistry, call: ToolCall, task: InvestigationTask) -> GuardDecision:
    """Engineering-layer precedence check; never overridable by model output.

    Prerequisites are recorded facts on the task snapshot (events already
    committed), so text claims of approval, completed exchanges, or verdicts
    carry no weight here. Verdicts can only enter the task via an allowed
    invest_judge execution; inbound human messages have no verdict path.
    """
    schema = registry.get(call.name)
    if schema is None:
        return GuardDecision(False, "unknown_tool")
    for predicate in schema.prerequisites:
        if predicate == "admin_approval":
            if task.admin_decision != "approve":
                return GuardDecision(False, "missing_admin_approval")
        elif predicate == "user_dialogue_concluded":
            if not task.transcript.is_concluded("user") or task.evidence.feedback_for("user") is None:
                return GuardDecision(False, "feedback_incomplete")
        elif predicate == "manager_exchange_if_suspicious":
            suspicious = any(f in SUSPICION_FLAGS for f in task.transcript.flags)
            if suspicious and task.evidence.feedback_for("manager") is None:
                return GuardDecision(False, "missing_manager_exchange")
        elif predicate == "verdict_recorded":
            if task.verdict is None:
                return GuardDecision(False, "verdict_missing")
        else:
            return GuardDecision(False, f"unknown_prerequisite:{predicate}")
    return GuardDecision(True)


# ----------------------------------------------------------------------
# OSR / FSR metrics
# ----------------------------------------------------------------------


@dataclass
class CallRecord:
    category: str
    first_pass_valid: bool
    final_valid: bool
    repairs: list[str] = field(default_factory=list)


class UndefinedMetricError(ValueError):
    pass


def compute_osr_fsr(records: list[CallRecord]) -> dict[str, dict[str, float]]:
    """Per-category and weighted OSR/FSR from call records."""
    if not records:
        raise UndefinedMetricError("no call records")
    by_cat: dict[str, list[CallRecord]] = {}
    for rec in records:
        by_cat.setdefault(rec.category, []).append(rec)
    table: dict[str, dict[str, float]] = {}
    rows = []
    for cat in sorted(by_cat):
        recs = by_cat[cat]
        n = len(recs)
        osr = 100.0 * sum(r.first_pass_valid for r in recs) / n
        fsr = 100.0 * sum(r.final_valid for r in recs) / n
        table[cat] = {"samples": n, "osr": osr, "fsr": fsr}
        rows.append({"samples": n, "osr": osr, "fsr": fsr})
    table["weighted"] = weighted_rates(rows)
    return table


def weighted_rates(rows: list[dict[str, float]]) -> dict[str, float]:
    """Sample-count-weighted mean of per-category osr/fsr rows."""
    total = sum(int(r["samples"]) for r in rows)
    if total == 0:
        raise UndefinedMetricError("zero samples")
    osr = sum(r["osr"] * r["samples"] for r in rows) / total
    fsr = sum(r["fsr"] * r["samples"] for r in rows) / total
    return {"samples": total, "osr": osr, "fsr": fsr}


def default_schemas() -> list[ToolSchema]:
    """Built-in library covering the eight core tools."""
    return [
        ToolSchema(
            name="invest_ask_admin",
            description="Ask the security admin to authorize an investigation.",
            params=[ToolParam("reason", ParamKind.STRING, aliases=("justification",))],
            trigger_note="Routed to a human admin for high-severity alerts; auto-answered by policy below that.",
            side_effect_class=SideEffect.OUTBOUND_MESSAGE,
            parks=True,
        ),
        ToolSchema(
            name="invest_notify_admin",
            description="Push a one-way status update to the admin channel.",
            params=[ToolParam("message", ParamKind.STRING, aliases=("text", "msg"))],
            trigger_note="Status logging and final reporting; no reply expected.",
            side_effect_class=SideEffect.OUTBOUND_MESSAGE,
        ),
        ToolSchema(
            name="invest_ask_user",
            description="Put an investigation question to the involved user.",
            params=[
                ToolParam("user_id", ParamKind.STRING, aliases=("user", "target_user")),
                ToolParam("question", ParamKind.STRING, aliases=("text", "message")),
            ],
            trigger_note="Requires a recorded admin approval on the task.",
            side_effect_class=SideEffect.OUTBOUND_MESSAGE,
            prerequisites=("admin_approval",),
            parks=True,
        ),
        ToolSchema(
            name="invest_ask_manager",
            description="Ask the user's supervisor to confirm business legitimacy.",
            params=[
                ToolParam("manager_id", ParamKind.STRING, aliases=("manager", "supervisor_id")),
                ToolParam("question", ParamKind.STRING, aliases=("text", "message")),
            ],
            trigger_note="Used when user feedback needs supervisor verification.",
            side_effect_class=SideEffect.OUTBOUND_MESSAGE,
            prerequisites=("admin_approval",),
            parks=True,
        ),
        ToolSchema(
            name="invest_judge",
            description="Record the final risk qualification for the task.",
            params=[
                ToolParam(
                    "label",
                    ParamKind.ENUM,
                    values=("no_risk", "benign_violation", "confirmed_threat", "inconclusive"),
                    aliases=("risk", "risk_level"),
                ),
                ToolParam("confidence_pct", ParamKind.INTEGER, aliases=("confidence",)),
                ToolParam("rationale", ParamKind.STRING, aliases=("reason", "justification")),
            ],
            trigger_note="Only path that can set a verdict; requires concluded feedback, plus a manager exchange when anything was flagged suspicious.",
            side_effect_class=SideEffect.ADJUDICATION,
            prerequisites=("user_dialogue_concluded", "manager_exchange_if_suspicious"),
        ),
        ToolSchema(
            name="invest_notify_user",
            description="Send the user a final status or security notification.",
            params=[
                ToolParam("user_id", ParamKind.STRING, aliases=("user", "target_user")),
                ToolParam("message", ParamKind.STRING, aliases=("text", "msg")),
            ],
            trigger_note="Runs after the task has a recorded verdict.",
            side_effect_class=SideEffect.OUTBOUND_MESSAGE,
            prerequisites=("verdict_recorded",),
        ),
        ToolSchema(
            name="terminate",
            description="Suspend or end the investigation thread.",
            params=[
                ToolParam("reason", ParamKind.STRING),
                ToolParam("mode", ParamKind.ENUM, values=("suspend", "end"), required=False),
            ],
            trigger_note="State control; suspended tasks resume to their prior state.",
            side_effect_class=SideEffect.STATE_CONTROL,
        ),
        ToolSchema(
            name="closed_loop_Processing",
            description="Run the disposal plan mapped from the recorded verdict.",
            params=[ToolParam("summary", ParamKind.STRING, aliases=("message", "text"))],
            trigger_note="Terminal phase; requires the recorded verdict.",
            side_effect_class=SideEffect.DISPOSAL,
            prerequisites=("verdict_recorded",),
        ),
    ]
