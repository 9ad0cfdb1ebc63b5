from __future__ import annotations

import json

import httpx
import pytest

from riskdesk.disposal import DisposalExecutor, select_disposal
from riskdesk.model import (
    CONTAINMENT_ACTIONS,
    DisposalAction,
    RiskVerdict,
    VerdictLabel,
)


def verdict(label):
    return RiskVerdict(label=label, confidence=0.9, rationale="because telemetry")


def test_benign_violation_maps_to_closure_and_training(lfd_alert):
    plan = select_disposal(verdict(VerdictLabel.BENIGN_VIOLATION), lfd_alert)
    actions = [a.action for a in plan.actions]
    assert actions == [DisposalAction.CLOSE_WITH_NOTIFICATION, DisposalAction.SEND_AWARENESS_TRAINING]


def test_no_risk_closes_with_notification_only(lfd_alert):
    plan = select_disposal(verdict(VerdictLabel.NO_RISK), lfd_alert)
    assert [a.action for a in plan.actions] == [DisposalAction.CLOSE_WITH_NOTIFICATION]


def test_inconclusive_is_exactly_human_escalation(lfd_alert):
    plan = select_disposal(verdict(VerdictLabel.INCONCLUSIVE), lfd_alert)
    assert [a.action for a in plan.actions] == [DisposalAction.ESCALATE_TO_HUMAN]


def test_confirmed_threat_has_escalation_plus_containment(lfd_alert):
    plan = select_disposal(verdict(VerdictLabel.CONFIRMED_THREAT), lfd_alert)
    actions = {a.action for a in plan.actions}
    assert DisposalAction.ESCALATE_TO_HUMAN in actions
    assert actions & CONTAINMENT_ACTIONS


def test_source_ip_adds_blacklist(lfd_alert):
    lfd_alert.dimensions["source_ip"] = "203.0.113.9"
    plan = select_disposal(verdict(VerdictLabel.CONFIRMED_THREAT), lfd_alert)
    blacklist = [a for a in plan.actions if a.action is DisposalAction.BLACKLIST_IP]
    assert blacklist and blacklist[0].target == "203.0.113.9"


def test_mapping_total_over_labels(lfd_alert):
    for label in VerdictLabel:
        plan = select_disposal(verdict(label), lfd_alert)
        assert plan.actions


def test_execute_records_containment_intents(tmp_path, lfd_alert):
    sent = []
    executor = DisposalExecutor(tmp_path, notify=lambda role, text: sent.append((role, text)))
    plan = select_disposal(verdict(VerdictLabel.CONFIRMED_THREAT), lfd_alert)
    result = executor.execute(plan, "t9", lfd_alert, verdict(VerdictLabel.CONFIRMED_THREAT))
    assert all(a.status == "done" for a in result.plan.actions)
    intents = (tmp_path / "intents" / "t9.ndjson").read_text().splitlines()
    records = [json.loads(line) for line in intents]
    assert all(r["task_id"] == "t9" and r["rationale"] for r in records)
    assert any(r["action"] == "terminate_session" for r in records)
    assert ("admin", f"Escalation for task t9: verdict confirmed_threat. because telemetry") in [
        (role, text) for role, text in sent
    ]


def test_closure_sends_user_notifications(tmp_path, lfd_alert):
    sent = []
    executor = DisposalExecutor(tmp_path, notify=lambda role, text: sent.append((role, text)))
    plan = select_disposal(verdict(VerdictLabel.BENIGN_VIOLATION), lfd_alert)
    executor.execute(plan, "t9", lfd_alert, verdict(VerdictLabel.BENIGN_VIOLATION))
    roles = [role for role, _ in sent]
    assert roles == ["user", "user"]  # closure notice + awareness material
    assert "closed" in sent[0][1]


def test_webhook_failure_escalates_but_still_completes(tmp_path, lfd_alert):
    calls = []

    def failing_handler(request):
        calls.append(request.url.path)
        return httpx.Response(500)

    client = httpx.Client(transport=httpx.MockTransport(failing_handler))
    sent = []
    executor = DisposalExecutor(
        tmp_path,
        notify=lambda role, text: sent.append((role, text)),
        webhook_url="http://containment.local/act",
        client=client,
    )
    plan = select_disposal(verdict(VerdictLabel.CONFIRMED_THREAT), lfd_alert)
    result = executor.execute(plan, "t9", lfd_alert, verdict(VerdictLabel.CONFIRMED_THREAT))
    assert calls, "webhook was attempted"
    assert result.escalated_on_failure
    failed = [a for a in result.plan.actions if a.status == "failed"]
    assert failed, "the containment action failed"
    # a fresh escalation was appended and executed
    appended = [a for a in result.plan.actions if a.detail.startswith("after ")]
    assert appended and appended[0].status == "done"
    assert any("manual follow-up required" in text for _, text in sent)


def test_webhook_success_posts_intent(tmp_path, lfd_alert):
    seen_bodies = []

    def handler(request):
        seen_bodies.append(json.loads(request.content))
        return httpx.Response(200)

    client = httpx.Client(transport=httpx.MockTransport(handler))
    executor = DisposalExecutor(tmp_path, notify=lambda r, t: None, webhook_url="http://c.local/act", client=client)
    plan = select_disposal(verdict(VerdictLabel.CONFIRMED_THREAT), lfd_alert)
    result = executor.execute(plan, "t9", lfd_alert, verdict(VerdictLabel.CONFIRMED_THREAT))
    assert not result.escalated_on_failure
    assert all(set(b) == {"task_id", "action", "target", "rationale"} for b in seen_bodies)
