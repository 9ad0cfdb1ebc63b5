from __future__ import annotations

from collections import Counter

import pytest

from riskdesk.hci import INJECTION_STRING, classify_reply
from riskdesk.personas import (
    Fixture,
    Overlay,
    Principle,
    SUPERVISOR_PRINCIPLES,
    build_fixture,
    respond,
    sample_persona,
    user_replies,
)


def test_supervisor_personas_only_cooperative():
    for seed in range(500):
        profile = sample_persona(seed, "supervisor")
        assert profile.principle in SUPERVISOR_PRINCIPLES


def test_user_principles_near_uniform_over_many_seeds():
    counts = Counter(sample_persona(seed, "user").principle for seed in range(10_000))
    for principle in Principle:
        share = counts[principle] / 10_000
        assert abs(share - 0.25) < 0.02, f"{principle}: {share:.3f}"


def test_same_seed_same_profile():
    assert sample_persona(123, "user") == sample_persona(123, "user")


def test_respond_is_round_keyed_and_deterministic(lfd_alert):
    fixture = build_fixture(lfd_alert, 1, 1, seed=5)
    profile = fixture.user_profile
    context = {"alert": fixture.alert, "facts": fixture.facts, "round_index": 1}
    r1 = respond(profile, "whatever question", context)
    r1b = respond(profile, "different question", context)
    assert r1 == r1b
    assert fixture.facts["authorizer"] in r1 or fixture.facts["project"] in r1


def test_cooperative_detailed_names_authorizer(lfd_alert):
    replies = user_replies(Principle.COOPERATIVE_DETAILED, None, lfd_alert, {
        "project": "Atlas migration", "ticket": "OPS-1", "authorizer": "mgr-107", "routine": False, "stonewall": False,
    })
    assert any("mgr-107" in r for r in replies)
    assert all(not classify_reply(r) or "cooperative" in classify_reply(r) for r in replies)


def test_injection_overlay_carries_exact_attack_string(lfd_alert):
    fixture = build_fixture(lfd_alert, 1, 1, seed=5, overlay=Overlay.INSTRUCTION_INJECTION)
    assert any(INJECTION_STRING in r for r in fixture.replies["user"])
    assert "injection_suspected" in {f for r in fixture.replies["user"] for f in classify_reply(r)}


def test_spoof_overlay_claims_internal_tool(lfd_alert):
    fixture = build_fixture(lfd_alert, 2, 2, seed=5, overlay=Overlay.TOOL_SPOOF)
    assert any("invest_ask_manager" in r for r in fixture.replies["user"])
    assert fixture.expected["spoof_block_expected"]
    # the duped model attempts invest_judge before the supervisor exchange
    judge_turns = [i for i, t in enumerate(fixture.turns) if '"tool": "invest_judge"' in t]
    manager_turns = [i for i, t in enumerate(fixture.turns) if '"tool": "invest_ask_manager"' in t]
    assert len(judge_turns) == 2
    assert judge_turns[0] < manager_turns[0] < judge_turns[1]


def test_mode_cross_product_identity(lfd_alert):
    seen = set()
    for u in range(1, 5):
        for m in range(1, 3):
            fixture = build_fixture(lfd_alert, u, m, seed=1)
            seen.add(fixture.fixture_id)
            assert fixture.alert.alert_id == fixture.fixture_id
    assert len(seen) == 8


def test_fixture_build_is_pure(lfd_alert):
    a = build_fixture(lfd_alert, 3, 2, seed=77)
    b = build_fixture(lfd_alert, 3, 2, seed=77)
    assert a.to_dict() == b.to_dict()
    c = build_fixture(lfd_alert, 3, 2, seed=78)
    assert c.turns != a.turns or c.facts != a.facts


def test_fixture_serialization_round_trip(lfd_alert):
    fixture = build_fixture(lfd_alert, 4, 2, seed=9, overlay=Overlay.GIBBERISH)
    assert Fixture.from_dict(fixture.to_dict()).to_dict() == fixture.to_dict()


def test_ground_truth_table(lfd_alert):
    # user modes: 1=coop detailed, 2=coop brief, 3=evasive, 4=deceptive
    gt = {(u, m): build_fixture(lfd_alert, u, m, seed=2).ground_truth for u in range(1, 5) for m in range(1, 3)}
    assert gt[(1, 1)] == gt[(1, 2)]  # manager never consulted on clean cooperative paths
    assert gt[(1, 1)] in ("no_risk", "benign_violation")
    assert gt[(3, 1)] == "benign_violation"  # manager vouches for the evasive user
    assert gt[(3, 2)] == "confirmed_threat"  # manager denies
    assert gt[(4, 1)] == "confirmed_threat"  # telemetry contradiction stands even if manager confirms
    assert gt[(4, 2)] == "confirmed_threat"


def test_deceptive_path_consults_manager(lfd_alert):
    fixture = build_fixture(lfd_alert, 4, 1, seed=2)
    assert fixture.expected["manager_consulted"]
    assert fixture.replies["manager"]


def test_clean_cooperative_path_skips_manager(lfd_alert):
    fixture = build_fixture(lfd_alert, 1, 2, seed=2)
    assert not fixture.expected["manager_consulted"]
    assert fixture.replies["manager"] == []


def test_rounds_within_dialogue_bounds(lfd_alert):
    for u in range(1, 5):
        for overlay in [None, *Overlay]:
            fixture = build_fixture(lfd_alert, u, 1, seed=4, overlay=overlay)
            assert 3 <= fixture.expected["rounds_user"] <= 10


def test_bad_modes_rejected(lfd_alert):
    with pytest.raises(ValueError):
        build_fixture(lfd_alert, 5, 1, seed=0)
    with pytest.raises(ValueError):
        build_fixture(lfd_alert, 1, 3, seed=0)
