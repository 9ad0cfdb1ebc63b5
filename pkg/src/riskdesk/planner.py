"""Hybrid plan ledger: fixed pre/post steps around a model-written dynamic checklist.

The ledger renders to a markdown todo checklist and parses back losslessly, so
the plan can ride along in prompts and event payloads as plain text. Fixed
steps come from workflow config and are immutable after build; only the
dynamic section may be reshaped by reflection.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any


class StepStatus(str, Enum):
    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    DONE = "done"
    SKIPPED = "skipped"


# status transitions are monotone; anything else is rejected
_STATUS_ORDER = {
    StepStatus.PENDING: 0,
    StepStatus.IN_PROGRESS: 1,
    StepStatus.DONE: 2,
    StepStatus.SKIPPED: 2,
}

_MARKS = {
    StepStatus.PENDING: " ",
    StepStatus.IN_PROGRESS: "~",
    StepStatus.DONE: "x",
    StepStatus.SKIPPED: "-",
}
_MARK_TO_STATUS = {v: k for k, v in _MARKS.items()}

_LINE_RE = re.compile(r"^- \[(?P<mark>[ ~x-])\] (?P<desc>.*?)(?: \(tool: (?P<tool>[A-Za-z_][A-Za-z0-9_]*)\))?$")


@dataclass
class PlanItem:
    """One checklist entry; fixed steps carry frozen args alongside."""

    item_id: str
    description: str
    status: StepStatus = StepStatus.PENDING
    tool_hint: str | None = None
    fixed: bool = False
    fixed_args: dict[str, Any] = field(default_factory=dict)
    note: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "description": self.description,
            "status": self.status.value,
            "tool_hint": self.tool_hint,
            "fixed": self.fixed,
            "fixed_args": dict(self.fixed_args),
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PlanItem":
        return cls(
            item_id=data["item_id"],
            description=data["description"],
            status=StepStatus(data["status"]),
            tool_hint=data.get("tool_hint"),
            fixed=bool(data.get("fixed", False)),
            fixed_args=dict(data.get("fixed_args") or {}),
            note=data.get("note"),
        )


@dataclass
class PlanLedger:
    pre_steps: list[PlanItem] = field(default_factory=list)
    dynamic_steps: list[PlanItem] = field(default_factory=list)
    post_steps: list[PlanItem] = field(default_factory=list)
    revision: int = 0

    def all_items(self) -> list[PlanItem]:
        return [*self.pre_steps, *self.dynamic_steps, *self.post_steps]

    def find(self, item_id: str) -> PlanItem | None:
        for item in self.all_items():
            if item.item_id == item_id:
                return item
        return None

    def in_progress(self) -> PlanItem | None:
        for item in self.all_items():
            if item.status is StepStatus.IN_PROGRESS:
                return item
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "pre_steps": [i.to_dict() for i in self.pre_steps],
            "dynamic_steps": [i.to_dict() for i in self.dynamic_steps],
            "post_steps": [i.to_dict() for i in self.post_steps],
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PlanLedger":
        return cls(
            pre_steps=[PlanItem.from_dict(d) for d in data.get("pre_steps", [])],
            dynamic_steps=[PlanItem.from_dict(d) for d in data.get("dynamic_steps", [])],
            post_steps=[PlanItem.from_dict(d) for d in data.get("post_steps", [])],
            revision=int(data.get("revision", 0)),
        )


@dataclass
class ReflectionResult:
    """Parsed reflection block from a model turn."""

    assessment: str = ""
    step_succeeded: bool = True
    sufficient_evidence: bool = False
    updates: list[dict[str, Any]] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ReflectionResult":
        return cls(
            assessment=str(data.get("assessment", "")),
            step_succeeded=bool(data.get("step_succeeded", True)),
            sufficient_evidence=bool(data.get("sufficient_evidence", False)),
            updates=list(data.get("updates", [])),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "assessment": self.assessment,
            "step_succeeded": self.step_succeeded,
            "sufficient_evidence": self.sufficient_evidence,
            "updates": list(self.updates),
        }


class PlanParseError(ValueError):
    """Checklist text did not match the expected grammar."""


def fixed_item(item_id: str, description: str, tool: str, args: dict[str, Any] | None = None) -> PlanItem:
    return PlanItem(
        item_id=item_id,
        description=description,
        tool_hint=tool,
        fixed=True,
        fixed_args=dict(args or {}),
    )


def render_ledger(ledger: PlanLedger) -> str:
    """Render the ledger to checklist text. Inverse of :func:`parse_ledger`."""
    lines: list[str] = []
    for title, items in (("PRE", ledger.pre_steps), ("PLAN", ledger.dynamic_steps), ("POST", ledger.post_steps)):
        if title == "PLAN" and not items:
            continue
        lines.append(f"## {title}")
        for item in items:
            suffix = f" (tool: {item.tool_hint})" if item.tool_hint else ""
            lines.append(f"- [{_MARKS[item.status]}] {item.description}{suffix}")
    return "\n".join(lines) + "\n"


def parse_checklist_lines(text: str) -> list[PlanItem]:
    """Parse bare `- [ ]` lines (no section headers) into pending-or-marked items.

    Used both for ledger round-trips and for the model's dynamic plan output.
    Raises PlanParseError when no checklist line is present.
    """
    items: list[PlanItem] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line.startswith("- ["):
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise PlanParseError(f"bad checklist line: {line!r}")
        desc = m.group("desc").strip()
        if not desc:
            raise PlanParseError(f"empty checklist description: {line!r}")
        items.append(
            PlanItem(
                item_id=f"d{len(items) + 1}",
                description=desc,
                status=_MARK_TO_STATUS[m.group("mark")],
                tool_hint=m.group("tool"),
            )
        )
    if not items:
        raise PlanParseError("no checklist lines found")
    return items


def parse_ledger(text: str) -> PlanLedger:
    """Parse sectioned checklist text back into a ledger.

    Round-trips the semantic content of :func:`render_ledger`; fixed-step args
    and the revision counter are not part of the text surface.
    """
    sections: dict[str, list[PlanItem]] = {"PRE": [], "PLAN": [], "POST": []}
    current: str | None = None
    counters = {"PRE": 0, "PLAN": 0, "POST": 0}
    prefixes = {"PRE": "pre", "PLAN": "d", "POST": "post"}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("## "):
            name = line[3:].strip()
            if name not in sections:
                raise PlanParseError(f"unknown section {name!r}")
            current = name
            continue
        if current is None:
            raise PlanParseError(f"checklist line outside any section: {line!r}")
        m = _LINE_RE.match(line)
        if not m:
            raise PlanParseError(f"bad checklist line: {line!r}")
        counters[current] += 1
        sections[current].append(
            PlanItem(
                item_id=f"{prefixes[current]}{counters[current]}",
                description=m.group("desc").strip(),
                status=_MARK_TO_STATUS[m.group("mark")],
                tool_hint=m.group("tool"),
                fixed=current != "PLAN",
            )
        )
    return PlanLedger(pre_steps=sections["PRE"], dynamic_steps=sections["PLAN"], post_steps=sections["POST"])


def build_ledger(pre_steps: list[PlanItem], dynamic_steps: list[PlanItem], post_steps: list[PlanItem]) -> PlanLedger:
    """Assemble a fresh ledger at revision 1; item ids are normalized per section."""
    pre = [replace(s, item_id=f"pre{i + 1}", fixed=True) for i, s in enumerate(pre_steps)]
    dyn = [replace(s, item_id=f"d{i + 1}", fixed=False) for i, s in enumerate(dynamic_steps)]
    post = [replace(s, item_id=f"post{i + 1}", fixed=True) for i, s in enumerate(post_steps)]
    return PlanLedger(pre_steps=pre, dynamic_steps=dyn, post_steps=post, revision=1)


def set_status(ledger: PlanLedger, item_id: str, status: StepStatus, note: str | None = None) -> PlanLedger:
    """Return a new ledger with one item's status changed (monotone) and revision bumped.

    A regression (e.g. in_progress back to pending after a failed step) is the
    one sanctioned exception and must carry a note explaining the retry.
    """
    item = ledger.find(item_id)
    if item is None:
        raise KeyError(item_id)
    if _STATUS_ORDER[status] < _STATUS_ORDER[item.status] and note is None:
        raise ValueError(f"status regression for {item_id} without a retry note")
    new = replace(item, status=status, note=note if note is not None else item.note)
    return _swap(ledger, new)


def _swap(ledger: PlanLedger, new_item: PlanItem) -> PlanLedger:
    def sub(items: list[PlanItem]) -> list[PlanItem]:
        return [new_item if i.item_id == new_item.item_id else i for i in items]

    return PlanLedger(
        pre_steps=sub(ledger.pre_steps),
        dynamic_steps=sub(ledger.dynamic_steps),
        post_steps=sub(ledger.post_steps),
        revision=ledger.revision + 1,
    )


def insert_dynamic(ledger: PlanLedger, description: str, tool_hint: str | None = None, *, front: bool = False) -> PlanLedger:
    """Append (or prepend) a new pending dynamic item; revision bumped."""
    seq = 1
    existing = {i.item_id for i in ledger.dynamic_steps}
    while f"d{seq}" in existing or f"d{seq}a" in existing:
        seq += 1
    item = PlanItem(item_id=f"d{seq}", description=description, tool_hint=tool_hint)
    dyn = [item, *ledger.dynamic_steps] if front else [*ledger.dynamic_steps, item]
    return PlanLedger(
        pre_steps=ledger.pre_steps,
        dynamic_steps=dyn,
        post_steps=ledger.post_steps,
        revision=ledger.revision + 1,
    )


def apply_reflection(ledger: PlanLedger, reflection: ReflectionResult) -> tuple[PlanLedger, list[str]]:
    """Apply a reflection's updates; returns (new ledger, ignored-update reasons).

    Unknown item ids are ignored with a reason rather than failing the task.
    Updates may only touch dynamic items; fixed steps are immutable by policy
    and any attempt is reported back.
    """
    ignored: list[str] = []
    out = ledger
    before = ledger.revision

    if not reflection.step_succeeded:
        current = out.in_progress()
        if current is not None and not current.fixed:
            out = set_status(out, current.item_id, StepStatus.PENDING, note="retry after failed step")

    for upd in reflection.updates:
        if "new_item" in upd:
            out = insert_dynamic(out, str(upd["new_item"]), upd.get("tool_hint"))
            continue
        item_id = upd.get("item_id")
        item = out.find(item_id) if item_id else None
        if item is None:
            ignored.append(f"unknown item_id {item_id!r}")
            continue
        if item.fixed:
            ignored.append(f"attempt to modify fixed step {item_id!r}")
            continue
        try:
            status = StepStatus(upd.get("status", item.status.value))
        except ValueError:
            ignored.append(f"bad status for {item_id!r}: {upd.get('status')!r}")
            continue
        try:
            out = set_status(out, item.item_id, status, note=upd.get("note"))
        except ValueError as exc:
            ignored.append(str(exc))

    if reflection.sufficient_evidence:
        # evidence complete: remaining inquiry items are moot, jump toward judging
        for item in out.dynamic_steps:
            if item.status in (StepStatus.PENDING, StepStatus.IN_PROGRESS) and item.tool_hint in (
                "invest_ask_user",
                "invest_ask_manager",
            ):
                out = set_status(out, item.item_id, StepStatus.SKIPPED, note="evidence already sufficient")

    if out.revision == before:
        out = PlanLedger(out.pre_steps, out.dynamic_steps, out.post_steps, out.revision + 1)
    return out, ignored


def next_action(ledger: PlanLedger) -> PlanItem | None:
    """First actionable item in pre -> dynamic -> post order; None when complete."""
    for item in ledger.all_items():
        if item.status in (StepStatus.PENDING, StepStatus.IN_PROGRESS):
            return item
    return None
