"""One versioned configuration surface: workflows, tools, prompts, limits, channels.

The loaded snapshot is immutable at runtime; cross-references (workflow steps
to tool names, prompt template names) are validated up front with every
violation reported, not just the first.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .backend import PromptLibrary
from .model import DisposalAction
from .tools import CORE_TOOLS, ParamKind, SideEffect, ToolParam, ToolRegistry, ToolSchema

REQUIRED_TEMPLATES = ("investigator_system", "plan_request", "act_request")
CHANNEL_KINDS = ("simulated", "console", "webhook")


class ConfigError(Exception):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class EngineConfig:
    limits: dict[str, Any]
    backend: dict[str, Any]
    channels: dict[str, Any]
    workflow: dict[str, dict[str, Any]]
    tools: list[dict[str, Any]]
    disposal: dict[str, Any]
    fallback_questions: dict[str, str]
    eval_params: dict[str, Any]
    templates: dict[str, str]
    containment_webhook: str | None = None
    data_dir: Path = field(default_factory=lambda: Path("riskdesk-data"))
    source: str = "defaults"

    @property
    def backend_params(self) -> dict[str, Any]:
        return {
            "model_name": self.backend.get("model_name", ""),
            "temperature": self.backend.get("temperature", 0.2),
            "max_tokens": self.backend.get("max_tokens", 1024),
        }

    def run_metadata(self) -> dict[str, Any]:
        return {
            "backend_kind": self.backend.get("kind", "scripted"),
            "max_concurrency": self.limits["max_concurrency"],
            "config_source": self.source,
        }


def tool_schemas_from_config(specs: list[dict[str, Any]]) -> list[ToolSchema]:
    schemas = []
    for spec in specs:
        params = [
            ToolParam(
                name=p["name"],
                kind=ParamKind(p["kind"]),
                required=bool(p.get("required", True)),
                values=tuple(p.get("values", [])),
                aliases=tuple(p.get("aliases", [])),
            )
            for p in spec.get("params", [])
        ]
        schemas.append(
            ToolSchema(
                name=spec["name"],
                description=spec.get("description", ""),
                params=params,
                trigger_note=spec.get("trigger_note", ""),
                side_effect_class=SideEffect(spec["side_effect_class"]),
                prerequisites=tuple(spec.get("prerequisites", [])),
                parks=bool(spec.get("parks", False)),
            )
        )
    return schemas


def build_registry(config: EngineConfig) -> ToolRegistry:
    return ToolRegistry(tool_schemas_from_config(config.tools))


def build_prompts(config: EngineConfig) -> PromptLibrary:
    return PromptLibrary(config.templates)


def _validate(doc: dict[str, Any], templates: dict[str, str]) -> list[str]:
    problems: list[str] = []

    limits = doc.get("limits", {})
    for key in ("max_concurrency", "max_retries", "wait_deadline_hours"):
        value = limits.get(key)
        if not isinstance(value, int) or value <= 0:
            problems.append(f"limits.{key} must be a positive integer")
    rounds = limits.get("dialogue_rounds", {})
    lo, hi = rounds.get("min"), rounds.get("max")
    if not isinstance(lo, int) or not isinstance(hi, int) or lo <= 0 or hi <= 0:
        problems.append("limits.dialogue_rounds min/max must be positive integers")
    elif lo > hi:
        problems.append(f"limits.dialogue_rounds min {lo} exceeds max {hi}")

    tool_names = {t.get("name") for t in doc.get("tools", [])}
    for core in CORE_TOOLS:
        if core not in tool_names:
            problems.append(f"tools missing core tool {core}")

    for category, flow in doc.get("workflow", {}).items():
        for section in ("pre_steps", "post_steps", "fallback_plan"):
            for step in flow.get(section, []):
                tool = step.get("tool")
                if tool not in tool_names:
                    problems.append(f"workflow.{category}.{section} references unregistered tool {tool!r}")

    for role, kind in doc.get("channels", {}).items():
        if role == "webhook_url":
            continue
        if kind not in CHANNEL_KINDS:
            problems.append(f"channels.{role} has unknown kind {kind!r}")

    valid_actions = {a.value for a in DisposalAction}
    for label, actions in doc.get("disposal", {}).items():
        if label == "containment_by_category":
            for cat, names in actions.items():
                for name in names:
                    if name not in valid_actions:
                        problems.append(f"disposal.containment_by_category.{cat} unknown action {name!r}")
            continue
        for name in actions:
            if name not in valid_actions:
                problems.append(f"disposal.{label} unknown action {name!r}")

    for name in REQUIRED_TEMPLATES:
        if name not in templates:
            problems.append(f"prompt template {name!r} missing")

    backend = doc.get("backend", {})
    if backend.get("kind") not in ("scripted", "remote"):
        problems.append(f"backend.kind must be scripted|remote, got {backend.get('kind')!r}")
    if backend.get("kind") == "remote" and not (backend.get("endpoint") or os.environ.get("RISKDESK_ENDPOINT")):
        problems.append("backend.kind=remote requires backend.endpoint (or RISKDESK_ENDPOINT)")

    return problems


def _load_templates(base: Path | None, doc: dict[str, Any]) -> dict[str, str]:
    templates: dict[str, str] = {}
    prompts_dir = doc.get("prompts_dir", "prompts")
    if base is not None:
        directory = (base / prompts_dir).resolve()
        if directory.is_dir():
            for path in sorted(directory.glob("*.txt")):
                templates[path.stem] = path.read_text(encoding="utf-8")
    if not templates:
        templates = _default_templates()
    return templates


def _default_templates() -> dict[str, str]:
    templates = {}
    root = resources.files("riskdesk").joinpath("defaults/prompts")
    for entry in root.iterdir():
        if entry.name.endswith(".txt"):
            templates[entry.name[:-4]] = entry.read_text(encoding="utf-8")
    return templates


def _finish(doc: dict[str, Any], templates: dict[str, str], source: str) -> EngineConfig:
    problems = _validate(doc, templates)
    if problems:
        raise ConfigError(problems)
    endpoint_override = os.environ.get("RISKDESK_ENDPOINT")
    backend = dict(doc["backend"])
    if endpoint_override:
        backend["endpoint"] = endpoint_override
    data_dir = Path(os.environ.get("RISKDESK_DATA_DIR", doc.get("data_dir", "riskdesk-data")))
    return EngineConfig(
        limits=doc["limits"],
        backend=backend,
        channels=doc.get("channels", {}),
        workflow=doc["workflow"],
        tools=doc["tools"],
        disposal=doc.get("disposal", {}),
        fallback_questions=doc.get("fallback_questions", {}),
        eval_params=doc.get("eval", {}),
        templates=templates,
        containment_webhook=doc.get("containment_webhook"),
        data_dir=data_dir,
        source=source,
    )


def load_config(path: str | Path) -> EngineConfig:
    """Parse and cross-validate a config file; raises ConfigError listing every violation."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"])
    templates = _load_templates(path.parent, doc)
    return _finish(doc, templates, source=str(path))


def default_config(data_dir: str | Path | None = None) -> EngineConfig:
    """The packaged default configuration."""
    doc = json.loads(resources.files("riskdesk").joinpath("defaults/config.json").read_text(encoding="utf-8"))
    config = _finish(doc, _default_templates(), source="defaults")
    if data_dir is not None:
        config.data_dir = Path(data_dir)
    return config
