"""Fenced-block parsing for model turns (reflection, feedback, todo sections).

Turns carry structured payloads in fenced blocks; parsing is lenient in the
sense that the first block that parses wins, but the payload itself must be
well-formed JSON (tool-call blocks get their own strict-then-repair path in
the tools module).
"""

from __future__ import annotations

import json
import re
from typing import Any

from .planner import PlanItem, PlanParseError, ReflectionResult, parse_checklist_lines

_BLOCK_RES: dict[str, re.Pattern[str]] = {}


def _fence_re(kind: str) -> re.Pattern[str]:
    if kind not in _BLOCK_RES:
        _BLOCK_RES[kind] = re.compile(rf"```{kind}\s*\n(.*?)```", re.DOTALL)
    return _BLOCK_RES[kind]


def extract_blocks(text: str, kind: str) -> list[str]:
    return [m.group(1).strip() for m in _fence_re(kind).finditer(text)]


def parse_reflection(text: str) -> ReflectionResult | None:
    """First parseable reflection block in the turn, or None."""
    for body in extract_blocks(text, "reflection"):
        try:
            doc = json.loads(body)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return ReflectionResult.from_dict(doc)
    return None


def parse_feedback(text: str) -> dict[str, Any] | None:
    """First parseable feedback-summary block, or None."""
    for body in extract_blocks(text, "feedback"):
        try:
            doc = json.loads(body)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
    return None


def parse_todo(text: str) -> list[PlanItem] | None:
    """Checklist items from the first todo block; None when absent or malformed."""
    for body in extract_blocks(text, "todo"):
        try:
            return parse_checklist_lines(body)
        except PlanParseError:
            continue
    return None


def reflection_block(reflection: ReflectionResult) -> str:
    return "```reflection\n" + json.dumps(reflection.to_dict()) + "\n```"


def feedback_block(summary: dict[str, Any]) -> str:
    return "```feedback\n" + json.dumps(summary) + "\n```"


def todo_block(items: list[PlanItem]) -> str:
    lines = []
    for item in items:
        suffix = f" (tool: {item.tool_hint})" if item.tool_hint else ""
        lines.append(f"- [ ] {item.description}{suffix}")
    return "```todo\n" + "\n".join(lines) + "\n```"


def tool_block(name: str, args: dict[str, Any]) -> str:
    return "```tool\n" + json.dumps({"tool": name, "args": args}) + "\n```"
