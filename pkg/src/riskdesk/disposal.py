"""Disposal: map verdicts onto closure or containment plans and run them.

Containment at desk scale records signed intent files (and optionally POSTs
to a configured webhook); closure paths send the user-facing notifications.
The verdict-to-actions mapping is policy data from config, not code.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import httpx

from .model import (
    Alert,
    CONTAINMENT_ACTIONS,
    DisposalAction,
    DisposalPlan,
    PlannedAction,
    RiskVerdict,
    VerdictLabel,
)

logger = logging.getLogger(__name__)

# fallback mapping when config omits a label; config rows override per category
DEFAULT_DISPOSAL_MAPPING: dict[str, list[str]] = {
    "no_risk": ["close_with_notification"],
    "benign_violation": ["close_with_notification", "send_awareness_training"],
    "confirmed_threat": ["escalate_to_human", "terminate_session"],
    "inconclusive": ["escalate_to_human"],
}

_CATEGORY_CONTAINMENT: dict[str, list[str]] = {
    "suspicious_logon": ["enforce_two_factor", "terminate_session"],
    "account_borrowing": ["enforce_two_factor"],
    "large_file_download": ["terminate_session"],
    "ip_scanning": ["terminate_session"],
    "crawler_access": ["terminate_session"],
    "prohibited_software": ["isolate_network"],
    "other": ["terminate_session"],
}


def _target_for(action: DisposalAction, alert: Alert) -> str:
    if action is DisposalAction.BLACKLIST_IP:
        return str(alert.dimensions.get("source_ip", ""))
    if action in (DisposalAction.TERMINATE_SESSION, DisposalAction.ISOLATE_NETWORK):
        return f"sessions:{alert.actor_id}"
    if action is DisposalAction.ESCALATE_TO_HUMAN:
        return alert.admin_id
    return alert.actor_id


def select_disposal(
    verdict: RiskVerdict,
    alert: Alert,
    mapping: dict[str, Any] | None = None,
) -> DisposalPlan:
    """Deterministic verdict -> actions mapping, extensible per category.

    confirmed_threat always carries escalate_to_human plus at least one
    containment action; inconclusive is exactly a human escalation.
    """
    mapping = mapping or {}
    label = verdict.label.value
    names: list[str] = list(mapping.get(label, DEFAULT_DISPOSAL_MAPPING[label]))

    if verdict.label is VerdictLabel.CONFIRMED_THREAT:
        per_category = mapping.get("containment_by_category", _CATEGORY_CONTAINMENT)
        for extra in per_category.get(alert.category.value, []):
            if extra not in names:
                names.append(extra)
        if alert.dimensions.get("source_ip") and DisposalAction.BLACKLIST_IP.value not in names:
            names.append(DisposalAction.BLACKLIST_IP.value)
        if "escalate_to_human" not in names:
            names.insert(0, "escalate_to_human")
        if not any(DisposalAction(n) in CONTAINMENT_ACTIONS for n in names):
            names.append("terminate_session")

    actions = [PlannedAction(action=DisposalAction(n), target=_target_for(DisposalAction(n), alert)) for n in names]
    return DisposalPlan(actions=actions)


@dataclass
class DisposalResult:
    plan: DisposalPlan
    escalated_on_failure: bool = False


class DisposalExecutor:
    """Runs a plan's actions in order; never leaves a task without closure.

    `notify` sends a channel message (role, text) through the gateway;
    containment intents land in the data directory and, when configured,
    on the containment webhook. A webhook failure appends and executes a
    human escalation instead of failing the task.
    """

    def __init__(
        self,
        data_dir: Path,
        notify: Callable[[str, str], None],
        webhook_url: str | None = None,
        client: httpx.Client | None = None,
    ):
        self.data_dir = Path(data_dir)
        self.notify = notify
        self.webhook_url = webhook_url
        self._client = client or (httpx.Client(timeout=10.0) if webhook_url else None)

    def execute(self, plan: DisposalPlan, task_id: str, alert: Alert, verdict: RiskVerdict) -> DisposalResult:
        escalated = False
        for planned in plan.actions:
            action = planned.action
            try:
                if action is DisposalAction.CLOSE_WITH_NOTIFICATION:
                    self.notify(
                        "user",
                        f"Investigation {task_id} is closed. Outcome: {verdict.label.value}. "
                        f"Thank you for your cooperation.",
                    )
                elif action is DisposalAction.SEND_AWARENESS_TRAINING:
                    self.notify(
                        "user",
                        "Please review the attached security awareness material on data-handling policy "
                        "before your next access request.",
                    )
                elif action is DisposalAction.ESCALATE_TO_HUMAN:
                    self.notify(
                        "admin",
                        f"Escalation for task {task_id}: verdict {verdict.label.value}. {verdict.rationale}",
                    )
                else:
                    self._containment(planned, task_id, verdict)
                planned.status = "done"
            except Exception as exc:  # containment webhook failures must not strand the task
                planned.status = "failed"
                planned.detail = str(exc)
                logger.warning("disposal action %s failed for %s: %s", action.value, task_id, exc)
                if not escalated:
                    escalation = PlannedAction(action=DisposalAction.ESCALATE_TO_HUMAN, target=alert.admin_id)
                    self.notify(
                        "admin",
                        f"Containment action {action.value} failed for task {task_id}; manual follow-up required.",
                    )
                    escalation.status = "done"
                    escalation.detail = f"after {action.value} failure"
                    plan.actions.append(escalation)
                    escalated = True
        return DisposalResult(plan=plan, escalated_on_failure=escalated)

    def _containment(self, planned: PlannedAction, task_id: str, verdict: RiskVerdict) -> None:
        record = {
            "task_id": task_id,
            "action": planned.action.value,
            "target": planned.target,
            "rationale": verdict.rationale,
        }
        intents = self.data_dir / "intents"
        intents.mkdir(parents=True, exist_ok=True)
        path = intents / f"{task_id}.ndjson"
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
        if self.webhook_url and self._client is not None:
            response = self._client.post(self.webhook_url, json=record)
            if response.status_code >= 400:
                raise RuntimeError(f"containment webhook returned {response.status_code}")
        planned.detail = "intent recorded"
