"""Model transport: remote chat-completion client and the scripted test backend.

The scripted backend replays per-fixture turn tables and can inject the three
fault classes the repair layer exists for (malformed tool-call JSON, badly
typed parameters, duplicated notifications). All fault draws are stateless
functions of (seed, scenario, turn), so a resumed run replays identically.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from typing import Any

import httpx

from .util import stable_unit


@dataclass
class ChatMessage:
    role: str  # system | agent_thought | respondent | tool_result
    text: str


@dataclass
class ChatRequest:
    system_prompt: str
    messages: list[ChatMessage]
    tool_schemas: str = ""
    params: dict[str, Any] = field(default_factory=dict)
    # scripted-mode routing: which fixture's turn table, and which turn
    scenario_key: str | None = None
    turn_index: int | None = None


@dataclass
class ModelReply:
    kind: str  # text | tool_call_text
    content: str
    latency_ms: float = 0.0


class BackendError(Exception):
    retryable = False


class BackendTimeout(BackendError):
    retryable = True


class BackendTransportError(BackendError):
    retryable = True


class BackendQuotaError(BackendError):
    retryable = False


class ScriptExhaustedError(BackendError):
    retryable = False


@dataclass
class FaultProfile:
    p_malformed_json: float = 0.0
    p_bad_param_type: float = 0.0
    p_duplicate_notify: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {
            "p_malformed_json": self.p_malformed_json,
            "p_bad_param_type": self.p_bad_param_type,
            "p_duplicate_notify": self.p_duplicate_notify,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FaultProfile":
        return cls(
            p_malformed_json=float(data.get("p_malformed_json", 0.0)),
            p_bad_param_type=float(data.get("p_bad_param_type", 0.0)),
            p_duplicate_notify=float(data.get("p_duplicate_notify", 0.0)),
        )


@dataclass
class ScriptedScenario:
    scenario_id: str
    turns: list[str]
    seed: int = 0
    faults: FaultProfile = field(default_factory=FaultProfile)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "turns": list(self.turns),
            "seed": self.seed,
            "faults": self.faults.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScriptedScenario":
        return cls(
            scenario_id=data["scenario_id"],
            turns=list(data["turns"]),
            seed=int(data.get("seed", 0)),
            faults=FaultProfile.from_dict(data.get("faults", {})),
        )


_TOOL_BLOCK_RE = re.compile(r"\{\s*\"tool\".*\}", re.DOTALL)
_NOTIFY_RE = re.compile(r"\"tool\"\s*:\s*\"invest_notify_")


def _corrupt_malformed(turn: str) -> str:
    """Introduce a trailing comma inside the tool-call JSON block."""
    m = _TOOL_BLOCK_RE.search(turn)
    if not m:
        return turn
    block = m.group(0)
    if block.rstrip().endswith("}"):
        broken = block.rstrip()[:-1].rstrip() + ",}"
        return turn[: m.start()] + broken + turn[m.end() :]
    return turn


def _corrupt_param_type(turn: str) -> str:
    """Mistype one argument: stringify an int, or title-case an enum value."""
    m = _TOOL_BLOCK_RE.search(turn)
    if not m:
        return turn
    try:
        doc = json.loads(m.group(0))
    except json.JSONDecodeError:
        return turn
    args = doc.get("args")
    if not isinstance(args, dict) or not args:
        return turn
    for key, value in args.items():
        if isinstance(value, int) and not isinstance(value, bool):
            args[key] = str(value)
            break
        if isinstance(value, str) and "_" in value and value == value.lower():
            args[key] = string.capwords(value.replace("_", " "))
            break
    else:
        # string-only tools: shove the first value through a known alias key
        key = next(iter(args))
        alias = {"question": "text", "message": "msg", "reason": "justification"}.get(key)
        if alias is None:
            return turn
        args[alias] = args.pop(key)
    return turn[: m.start()] + json.dumps(doc) + turn[m.end() :]


class ScriptedBackend:
    """Deterministic replay of per-fixture turn tables with optional faults.

    Duplicate-notification faults insert an extra call (an exact re-emission
    of the notify turn) without consuming a scripted turn, mirroring a model
    that fires the same notification twice.
    """

    def __init__(self, scenarios: dict[str, ScriptedScenario] | None = None, latency_ms: float = 2000.0):
        self.scenarios: dict[str, ScriptedScenario] = dict(scenarios or {})
        self.latency_ms = latency_ms
        # (scenario_id, turn_index) -> error kind, for retry-path tests
        self.fail_plan: dict[tuple[str, int], str] = {}

    def add_scenario(self, scenario: ScriptedScenario) -> None:
        self.scenarios[scenario.scenario_id] = scenario

    def _call_sequence(self, scenario: ScriptedScenario, upto: int) -> list[tuple[str, int]]:
        """Expanded call positions: scripted turns plus injected duplicates."""
        positions: list[tuple[str, int]] = []
        for k, turn in enumerate(scenario.turns):
            positions.append(("turn", k))
            if len(positions) > upto:
                return positions
            if _NOTIFY_RE.search(turn) and scenario.faults.p_duplicate_notify > 0:
                if stable_unit(scenario.seed, scenario.scenario_id, k, "dup") < scenario.faults.p_duplicate_notify:
                    positions.append(("dup", k))
                    if len(positions) > upto:
                        return positions
        return positions

    def corrupted_turn(self, scenario: ScriptedScenario, k: int) -> str:
        turn = scenario.turns[k]
        if '"tool"' not in turn:
            return turn
        f = scenario.faults
        if f.p_malformed_json > 0 and stable_unit(scenario.seed, scenario.scenario_id, k, "json") < f.p_malformed_json:
            return _corrupt_malformed(turn)
        if f.p_bad_param_type > 0 and stable_unit(scenario.seed, scenario.scenario_id, k, "param") < f.p_bad_param_type:
            return _corrupt_param_type(turn)
        return turn

    def _latency(self, scenario: ScriptedScenario, index: int) -> float:
        jitter = 0.8 + 0.4 * stable_unit(scenario.seed, scenario.scenario_id, index, "lat")
        return self.latency_ms * jitter

    def complete(self, request: ChatRequest) -> ModelReply:
        if request.scenario_key is None or request.turn_index is None:
            raise BackendError("scripted backend requires scenario_key and turn_index")
        scenario = self.scenarios.get(request.scenario_key)
        if scenario is None:
            raise BackendError(f"no scenario registered for {request.scenario_key!r}")

        planned = self.fail_plan.pop((request.scenario_key, request.turn_index), None)
        if planned == "timeout":
            raise BackendTimeout(f"injected timeout at turn {request.turn_index}")
        if planned == "transport":
            raise BackendTransportError(f"injected transport error at turn {request.turn_index}")

        positions = self._call_sequence(scenario, request.turn_index)
        if request.turn_index >= len(positions):
            raise ScriptExhaustedError(
                f"scenario {scenario.scenario_id} has no turn {request.turn_index} "
                f"({len(scenario.turns)} scripted)"
            )
        kind, k = positions[request.turn_index]
        text = scenario.turns[k] if kind == "dup" else self.corrupted_turn(scenario, k)
        reply_kind = "tool_call_text" if '"tool"' in text else "text"
        return ModelReply(kind=reply_kind, content=text, latency_ms=self._latency(scenario, request.turn_index))


class RemoteBackend:
    """Chat-completion-style HTTP client with timeout and per-call retries."""

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        temperature: float = 0.2,
        max_tokens: int = 1024,
        timeout_ms: int = 30000,
        retries: int = 2,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model_name = model_name
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout_ms = timeout_ms
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout_ms / 1000.0)

    def complete(self, request: ChatRequest) -> ModelReply:
        role_map = {"system": "system", "agent_thought": "assistant", "respondent": "user", "tool_result": "user"}
        messages = [{"role": "system", "content": request.system_prompt}]
        if request.tool_schemas:
            messages.append({"role": "system", "content": "Available tools:\n" + request.tool_schemas})
        for msg in request.messages:
            messages.append({"role": role_map.get(msg.role, "user"), "content": msg.text})
        body = {
            "model": request.params.get("model_name", self.model_name),
            "messages": messages,
            "temperature": request.params.get("temperature", self.temperature),
            "max_tokens": request.params.get("max_tokens", self.max_tokens),
        }

        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                response = self._client.post(f"{self.endpoint}/chat/completions", json=body)
            except httpx.TimeoutException as exc:
                last_error = BackendTimeout(str(exc))
                continue
            except httpx.HTTPError as exc:
                last_error = BackendTransportError(str(exc))
                continue
            if response.status_code == 429:
                raise BackendQuotaError("quota exhausted")
            if response.status_code >= 500:
                last_error = BackendTransportError(f"server error {response.status_code}")
                continue
            if response.status_code >= 400:
                raise BackendError(f"request rejected: {response.status_code}")
            data = response.json()
            try:
                content = data["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion response: {exc}")
            latency = float(response.elapsed.total_seconds() * 1000.0) if response.elapsed else 0.0
            return ModelReply(kind="text", content=content, latency_ms=latency)
        assert last_error is not None
        raise last_error


class PromptError(Exception):
    pass


class PromptLibrary:
    """Named plain-text templates with strict placeholder binding."""

    def __init__(self, templates: dict[str, str]):
        self._templates = dict(templates)

    def names(self) -> list[str]:
        return sorted(self._templates)

    def has(self, name: str) -> bool:
        return name in self._templates

    def render(self, name: str, variables: dict[str, Any]) -> str:
        template = self._templates.get(name)
        if template is None:
            raise PromptError(f"unknown_template:{name}")
        needed = {f for _, f, _, _ in string.Formatter().parse(template) if f}
        missing = needed - set(variables)
        if missing:
            raise PromptError(f"unbound_placeholder:{sorted(missing)[0]}")
        return template.format(**{k: variables[k] for k in needed})
