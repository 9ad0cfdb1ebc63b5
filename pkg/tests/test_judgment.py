from __future__ import annotations

import pytest

from riskdesk.judgment import (
    EvidenceError,
    adjudicate,
    assemble_evidence,
    behavioral_analysis,
    evaluate_consistency,
    rule_adjudicate,
    technical_metadata,
)
from riskdesk.model import (
    EvidenceBundle,
    FeedbackRecord,
    InvestigationTask,
    VerdictLabel,
)


def bundle_for(alert, user=None, manager=None):
    feedback = []
    if user is not None:
        feedback.append(user)
    if manager is not None:
        feedback.append(manager)
    return EvidenceBundle(
        technical_metadata=technical_metadata(alert),
        behavioral_analysis=behavioral_analysis(alert),
        human_feedback=feedback,
    )


def user_rec(claimed=True, justification="authorized by mgr-107 for Atlas", notes=(), status="concluded"):
    return FeedbackRecord(
        respondent="user",
        justification=justification,
        authorization_claimed=claimed,
        authorizer="mgr-107" if claimed else None,
        consistency_notes=list(notes),
        status=status,
    )


def mgr_rec(confirms=True, status="concluded"):
    return FeedbackRecord(
        respondent="manager",
        justification="confirmed" if confirms else "denies approval",
        authorization_claimed=confirms,
        status=status,
    )


def test_technical_metadata_streams(lfd_alert):
    meta = technical_metadata(lfd_alert)
    assert meta["access_patterns"]["file_count"] == 12000
    assert meta["threat_signatures"] == ["large_file_download:medium"]


def test_behavioral_descriptors(lfd_alert):
    desc = behavioral_analysis(lfd_alert)["descriptors"]
    assert "bulk_transfer" in desc
    assert "off_hours" in desc


def test_assemble_requires_user_feedback(lfd_alert):
    task = InvestigationTask(task_id="t", alert=lfd_alert)
    with pytest.raises(EvidenceError, match="missing_user_feedback"):
        assemble_evidence(task)


def test_assemble_requires_manager_when_suspicious(lfd_alert):
    task = InvestigationTask(task_id="t", alert=lfd_alert)
    task.evidence.human_feedback.append(user_rec())
    task.transcript.concluded["user"] = True
    task.transcript.add_flags(["suspicious"])
    with pytest.raises(EvidenceError, match="missing_manager_feedback"):
        assemble_evidence(task)


def test_assemble_allows_missing_manager_when_clean(lfd_alert):
    task = InvestigationTask(task_id="t", alert=lfd_alert)
    task.evidence.human_feedback.append(user_rec())
    task.transcript.concluded["user"] = True
    bundle = assemble_evidence(task)
    assert len(bundle.human_feedback) == 1


def test_streams_agree_on_confirmation(lfd_alert):
    flags = evaluate_consistency(bundle_for(lfd_alert, user_rec(), mgr_rec(True)))
    assert flags == ["streams_agree"]


def test_manager_denial_is_conflict(lfd_alert):
    flags = evaluate_consistency(bundle_for(lfd_alert, user_rec(), mgr_rec(False)))
    assert "user_manager_conflict" in flags


def test_minimizer_against_volume_is_contradiction(lfd_alert):
    user = user_rec(justification="it was only a few files, nothing sensitive")
    flags = evaluate_consistency(bundle_for(lfd_alert, user))
    assert "feedback_contradicts_telemetry" in flags


def test_contradiction_note_from_conclusion_wins(lfd_alert):
    user = user_rec(notes=["contradicts_telemetry:file_count=12000 while reply minimizes volume"])
    flags = evaluate_consistency(bundle_for(lfd_alert, user))
    assert "feedback_contradicts_telemetry" in flags


# ---------------------------------------------------------------------------
# rule table
# ---------------------------------------------------------------------------


def test_rule_conflict_is_confirmed_threat(lfd_alert):
    rule = rule_adjudicate(bundle_for(lfd_alert, user_rec(), mgr_rec(False)))
    assert rule.label is VerdictLabel.CONFIRMED_THREAT
    assert "denies" in rule.rationale


def test_rule_contradiction_is_confirmed_threat_even_with_confirmation(lfd_alert):
    user = user_rec(justification="only a handful of files, approved verbally")
    rule = rule_adjudicate(bundle_for(lfd_alert, user, mgr_rec(True)))
    assert rule.label is VerdictLabel.CONFIRMED_THREAT


def test_rule_authorized_routine_is_no_risk(lfd_alert):
    user = user_rec(justification="routine part of my regular duties, authorized", notes=["routine_duty"])
    rule = rule_adjudicate(bundle_for(lfd_alert, user))
    assert rule.label is VerdictLabel.NO_RISK


def test_rule_authorized_exception_is_benign_violation(lfd_alert):
    rule = rule_adjudicate(bundle_for(lfd_alert, user_rec()))
    assert rule.label is VerdictLabel.BENIGN_VIOLATION


def test_rule_manager_vouch_covers_evasive_user(lfd_alert):
    user = user_rec(claimed=False, justification="no substantive justification", status="inconclusive")
    rule = rule_adjudicate(bundle_for(lfd_alert, user, mgr_rec(True)))
    assert rule.label is VerdictLabel.BENIGN_VIOLATION


def test_rule_unreachable_manager_is_inconclusive(lfd_alert):
    user = user_rec(claimed=False, justification="nothing given", status="inconclusive")
    manager = mgr_rec(False, status="unreachable")
    rule = rule_adjudicate(bundle_for(lfd_alert, user, manager))
    assert rule.label is VerdictLabel.INCONCLUSIVE


def test_confirmed_threat_rationale_cites_technical_and_feedback(lfd_alert):
    rule = rule_adjudicate(bundle_for(lfd_alert, user_rec(), mgr_rec(False)))
    assert "large_file_download" in rule.rationale  # technical descriptor
    assert "authorization" in rule.rationale  # feedback inconsistency / absence


# ---------------------------------------------------------------------------
# adjudicate with model proposals
# ---------------------------------------------------------------------------


def test_agreeing_proposal_is_kept(lfd_alert):
    bundle = bundle_for(lfd_alert, user_rec())
    verdict, overridden = adjudicate(bundle, "benign_violation", 0.92, "ok")
    assert not overridden
    assert verdict.label is VerdictLabel.BENIGN_VIOLATION
    assert verdict.confidence == 0.92
    assert verdict.source == "model"


def test_benign_pair_is_interchangeable_for_proposals(lfd_alert):
    bundle = bundle_for(lfd_alert, user_rec())
    verdict, overridden = adjudicate(bundle, "no_risk", 0.8, "routine")
    assert not overridden and verdict.label is VerdictLabel.NO_RISK


def test_disagreeing_proposal_is_overridden(lfd_alert):
    bundle = bundle_for(lfd_alert, user_rec(), mgr_rec(False))
    verdict, overridden = adjudicate(bundle, "no_risk", 0.99, "looks fine to me")
    assert overridden
    assert verdict.label is VerdictLabel.CONFIRMED_THREAT
    assert verdict.confidence == 0.5
    assert verdict.source == "rule_override"


def test_conflicted_bundle_permits_inconclusive_proposal(lfd_alert):
    bundle = bundle_for(lfd_alert, user_rec(), mgr_rec(False))
    verdict, overridden = adjudicate(bundle, "inconclusive", 0.6, "cannot resolve")
    assert not overridden and verdict.label is VerdictLabel.INCONCLUSIVE


def test_unparseable_proposal_falls_back_to_rule(lfd_alert):
    bundle = bundle_for(lfd_alert, user_rec())
    verdict, overridden = adjudicate(bundle, None, None, None)
    assert overridden
    assert verdict.label is VerdictLabel.BENIGN_VIOLATION
    assert verdict.confidence == 0.5


def test_confidence_clipped(lfd_alert):
    bundle = bundle_for(lfd_alert, user_rec())
    verdict, _ = adjudicate(bundle, "benign_violation", 3.7, "r")
    assert verdict.confidence == 1.0
