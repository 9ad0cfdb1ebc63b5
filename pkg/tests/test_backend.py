from __future__ import annotations

import json

import pytest

from riskdesk.backend import (
    BackendTimeout,
    ChatMessage,
    ChatRequest,
    FaultProfile,
    ModelReply,
    PromptError,
    PromptLibrary,
    ScriptExhaustedError,
    ScriptedBackend,
    ScriptedScenario,
)
from riskdesk.tools import ToolRegistry, default_schemas


def make_request(key: str, turn: int) -> ChatRequest:
    return ChatRequest(system_prompt="s", messages=[ChatMessage("system", "x")], scenario_key=key, turn_index=turn)


def tool_turn(name="invest_notify_admin", args=None):
    return "thought.\n```tool\n" + json.dumps({"tool": name, "args": args or {"message": "update"}}) + "\n```"


def test_scripted_replay_is_byte_stable():
    scenario = ScriptedScenario("fx", turns=["plan text", tool_turn(), "closing text"], seed=9)
    backend = ScriptedBackend({"fx": scenario})
    first = [backend.complete(make_request("fx", i)).content for i in range(3)]
    second = [backend.complete(make_request("fx", i)).content for i in range(3)]
    assert first == second == scenario.turns


def test_scripted_latency_deterministic():
    scenario = ScriptedScenario("fx", turns=["a", "b"], seed=3)
    backend = ScriptedBackend({"fx": scenario}, latency_ms=2000.0)
    l1 = backend.complete(make_request("fx", 0)).latency_ms
    l2 = backend.complete(make_request("fx", 0)).latency_ms
    assert l1 == l2
    assert 1600.0 <= l1 <= 2400.0


def test_script_exhaustion_raises():
    backend = ScriptedBackend({"fx": ScriptedScenario("fx", turns=["only"], seed=1)})
    with pytest.raises(ScriptExhaustedError):
        backend.complete(make_request("fx", 5))


def test_forced_malformed_fault_is_repairable():
    scenario = ScriptedScenario("fx", turns=[tool_turn()], seed=1, faults=FaultProfile(p_malformed_json=1.0))
    backend = ScriptedBackend({"fx": scenario})
    reply = backend.complete(make_request("fx", 0))
    with pytest.raises(Exception):
        json.loads(reply.content.split("```tool\n")[1].rstrip("`\n"))
    registry = ToolRegistry(default_schemas())
    resolved = registry.repair_call(reply.content)
    assert resolved.final_valid and not resolved.first_pass_valid
    assert resolved.call.args == {"message": "update"}


def test_forced_param_fault_is_repairable():
    turn = tool_turn("invest_judge", {"label": "no_risk", "confidence_pct": 88, "rationale": "fine"})
    scenario = ScriptedScenario("fx", turns=[turn], seed=1, faults=FaultProfile(p_bad_param_type=1.0))
    backend = ScriptedBackend({"fx": scenario})
    reply = backend.complete(make_request("fx", 0))
    assert reply.content != turn  # one argument was mistyped
    registry = ToolRegistry(default_schemas())
    resolved = registry.repair_call(reply.content)
    assert resolved.final_valid and not resolved.first_pass_valid
    assert "param_normalization" in resolved.outcome.repairs
    assert resolved.call.args == {"label": "no_risk", "confidence_pct": 88, "rationale": "fine"}


def test_duplicate_fault_inserts_identical_extra_call():
    scenario = ScriptedScenario("fx", turns=[tool_turn(), "after"], seed=1, faults=FaultProfile(p_duplicate_notify=1.0))
    backend = ScriptedBackend({"fx": scenario})
    first = backend.complete(make_request("fx", 0)).content
    second = backend.complete(make_request("fx", 1)).content
    third = backend.complete(make_request("fx", 2)).content
    assert first == second  # duplicate re-emission
    assert third == "after"


def test_text_only_turns_never_corrupted():
    scenario = ScriptedScenario("fx", turns=["pure analysis text"], seed=1, faults=FaultProfile(p_malformed_json=1.0))
    backend = ScriptedBackend({"fx": scenario})
    assert backend.complete(make_request("fx", 0)).content == "pure analysis text"


def test_fault_rate_within_binomial_tolerance():
    """Seeded counting oracle: observed corruption rate over 10,000 distinct
    calls stays within one percentage point of p_malformed_json=0.05."""
    p = 0.05
    turns = [tool_turn(args={"message": f"m{i}"}) for i in range(100)]
    corrupted = 0
    total = 0
    for s in range(100):
        scenario = ScriptedScenario(f"fx{s}", turns=turns, seed=s, faults=FaultProfile(p_malformed_json=p))
        backend = ScriptedBackend({scenario.scenario_id: scenario})
        for k in range(100):
            text = backend.corrupted_turn(scenario, k)
            total += 1
            if text != turns[k]:
                corrupted += 1
    assert total == 10_000
    observed = corrupted / total
    assert abs(observed - p) < 0.01, f"observed {observed:.4f}"


def test_injected_timeout_then_success():
    scenario = ScriptedScenario("fx", turns=["a"], seed=1)
    backend = ScriptedBackend({"fx": scenario})
    backend.fail_plan[("fx", 0)] = "timeout"
    with pytest.raises(BackendTimeout):
        backend.complete(make_request("fx", 0))
    assert backend.complete(make_request("fx", 0)).content == "a"


# ---------------------------------------------------------------------------
# prompt rendering
# ---------------------------------------------------------------------------


def test_render_prompt_substitutes():
    library = PromptLibrary({"greet": "hello {name}, case {case_id}"})
    assert library.render("greet", {"name": "kai", "case_id": "7"}) == "hello kai, case 7"


def test_render_prompt_unbound_placeholder():
    library = PromptLibrary({"greet": "hello {name}"})
    with pytest.raises(PromptError, match="unbound_placeholder:name"):
        library.render("greet", {})


def test_render_prompt_unknown_template():
    library = PromptLibrary({})
    with pytest.raises(PromptError, match="unknown_template"):
        library.render("nope", {})


def test_render_prompt_deterministic():
    library = PromptLibrary({"t": "{a}-{b}"})
    variables = {"a": "x", "b": "y"}
    assert library.render("t", variables) == library.render("t", variables)
