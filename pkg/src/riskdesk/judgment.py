"""Adjudication: fuse technical, behavioral, and human-feedback streams into a verdict.

The model proposes a verdict through the invest_judge call; a deterministic
rule table derived from the consistency checks always has the final word.
That dominance keeps adjudication auditable and makes batch acceptance
deterministic: the same table generates fixture ground truths.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .hci import telemetry_contradiction
from .model import (
    Alert,
    BENIGN_LABELS,
    ConsistencyFlag,
    EvidenceBundle,
    InvestigationTask,
    ReplyFlag,
    RiskVerdict,
    VerdictLabel,
)

_HIGH_VOLUME_THRESHOLD = 100

_ROUTINE_RE = re.compile(r"\b(routine|regular dut(y|ies)|normal (part of|course of)|standard procedure)\b", re.IGNORECASE)


class EvidenceError(Exception):
    def __init__(self, code: str):
        super().__init__(code)
        self.code = code  # missing_user_feedback | missing_manager_feedback


def assemble_evidence(task: InvestigationTask) -> EvidenceBundle:
    """Build the three-stream bundle from the alert and concluded dialogues.

    A manager record may be absent only when nothing in the transcript was
    flagged suspicious; the sequence guard enforces the same rule before
    invest_judge can execute.
    """
    user_rec = task.evidence.feedback_for("user")
    if user_rec is None:
        raise EvidenceError("missing_user_feedback")
    suspicious = any(
        f in (ReplyFlag.SUSPICIOUS.value, ReplyFlag.INJECTION_SUSPECTED.value, ReplyFlag.SPOOF_SUSPECTED.value)
        for f in task.transcript.flags
    )
    if suspicious and task.evidence.feedback_for("manager") is None:
        raise EvidenceError("missing_manager_feedback")

    alert = task.alert
    bundle = EvidenceBundle(
        technical_metadata=technical_metadata(alert),
        behavioral_analysis=behavioral_analysis(alert),
        human_feedback=list(task.evidence.human_feedback),
    )
    return bundle


def technical_metadata(alert: Alert) -> dict:
    d = alert.dimensions
    ips = [v for v in (d.get("source_ip"),) if v]
    access = {
        k: d[k]
        for k in ("target_directories", "file_count", "byte_volume", "time_window", "systems", "request_count")
        if k in d
    }
    return {
        "ip_addresses": ips,
        "access_patterns": access,
        "threat_signatures": [f"{alert.category.value}:{alert.severity.value}"],
    }


def behavioral_analysis(alert: Alert) -> dict:
    """Synthesized anomaly descriptors: dimension-derived heuristic annotations."""
    d = alert.dimensions
    descriptors: list[str] = [f"category:{alert.category.value}", f"severity:{alert.severity.value}"]
    count = d.get("file_count")
    if isinstance(count, int) and count >= _HIGH_VOLUME_THRESHOLD:
        descriptors.append("bulk_transfer")
    window = str(d.get("time_window", ""))
    if re.search(r"T(0[0-6]|2[0-3]):", window):
        descriptors.append("off_hours")
    if d.get("source_ip"):
        descriptors.append("external_address_involved")
    return {"descriptors": descriptors, "dimensions": dict(d)}


def evaluate_consistency(bundle: EvidenceBundle) -> list[str]:
    """Deterministic cross-stream consistency flags."""
    flags: list[str] = []
    user = bundle.feedback_for("user")
    manager = bundle.feedback_for("manager")

    contradiction = False
    if user is not None:
        if any(n.startswith("contradicts_telemetry") for n in user.consistency_notes):
            contradiction = True
        else:
            dims = bundle.behavioral_analysis.get("dimensions", {})
            if telemetry_contradiction([user.justification or ""], dims):
                contradiction = True
    if contradiction:
        flags.append(ConsistencyFlag.FEEDBACK_CONTRADICTS_TELEMETRY.value)

    manager_concluded = manager is not None and manager.status == "concluded"
    if manager_concluded and not manager.authorization_claimed:
        # the dialogue always asserts legitimacy; a manager denial is a conflict
        flags.append(ConsistencyFlag.USER_MANAGER_CONFLICT.value)

    if not flags and user is not None:
        authorized = user.authorization_claimed or (manager_concluded and manager.authorization_claimed)
        if authorized:
            flags.append(ConsistencyFlag.STREAMS_AGREE.value)
    return flags


@dataclass
class RuleVerdict:
    label: VerdictLabel
    rationale: str
    consistency_flags: list[str]


def rule_adjudicate(bundle: EvidenceBundle) -> RuleVerdict:
    """The deterministic rule table; also the fixture ground-truth oracle."""
    flags = evaluate_consistency(bundle)
    user = bundle.feedback_for("user")
    manager = bundle.feedback_for("manager")
    signatures = bundle.technical_metadata.get("threat_signatures", [])
    tech = signatures[0] if signatures else "telemetry"

    if ConsistencyFlag.USER_MANAGER_CONFLICT.value in flags or ConsistencyFlag.FEEDBACK_CONTRADICTS_TELEMETRY.value in flags:
        reasons = []
        if ConsistencyFlag.FEEDBACK_CONTRADICTS_TELEMETRY.value in flags:
            reasons.append("feedback contradicts recorded telemetry")
        if ConsistencyFlag.USER_MANAGER_CONFLICT.value in flags:
            reasons.append("supervisor denies the claimed authorization")
        rationale = f"Signature {tech}; " + " and ".join(reasons) + "; no credible authorization stands."
        return RuleVerdict(VerdictLabel.CONFIRMED_THREAT, rationale, flags)

    user_claims = user is not None and user.authorization_claimed
    manager_vouches = manager is not None and manager.status == "concluded" and manager.authorization_claimed
    if user_claims or manager_vouches:
        routine = user is not None and (
            "routine_duty" in user.consistency_notes or _ROUTINE_RE.search(user.justification or "")
        )
        label = VerdictLabel.NO_RISK if routine else VerdictLabel.BENIGN_VIOLATION
        who = "supervisor confirmation" if manager_vouches else "a consistent authorization statement"
        rationale = f"Signature {tech} explained by {who}; streams agree."
        return RuleVerdict(label, rationale, flags)

    rationale = f"Signature {tech}; no authorization established and no affirmative deception; needs human review."
    return RuleVerdict(VerdictLabel.INCONCLUSIVE, rationale, flags)


def adjudicate(
    bundle: EvidenceBundle,
    proposed_label: str | None,
    proposed_confidence: float | None,
    proposed_rationale: str | None,
) -> tuple[RiskVerdict, bool]:
    """Combine the model's proposed verdict with the rule table.

    Returns (verdict, overridden). The label must satisfy the rule table;
    a disagreeing or unparseable proposal is overridden at confidence 0.5.
    """
    rule = rule_adjudicate(bundle)

    label: VerdictLabel | None = None
    if proposed_label is not None:
        try:
            label = VerdictLabel(proposed_label)
        except ValueError:
            label = None

    if label is not None and _label_permitted(label, rule):
        confidence = 0.5 if proposed_confidence is None else min(1.0, max(0.0, proposed_confidence))
        rationale = proposed_rationale or rule.rationale
        return (
            RiskVerdict(
                label=label,
                confidence=confidence,
                rationale=rationale,
                consistency_flags=rule.consistency_flags,
                source="model",
            ),
            False,
        )

    return (
        RiskVerdict(
            label=rule.label,
            confidence=0.5,
            rationale=rule.rationale,
            consistency_flags=rule.consistency_flags,
            source="rule_override",
        ),
        True,
    )


def _label_permitted(label: VerdictLabel, rule: RuleVerdict) -> bool:
    """The consistency-rule table bounds which labels a proposal may carry."""
    conflicted = (
        ConsistencyFlag.USER_MANAGER_CONFLICT.value in rule.consistency_flags
        or ConsistencyFlag.FEEDBACK_CONTRADICTS_TELEMETRY.value in rule.consistency_flags
    )
    if conflicted:
        return label in (VerdictLabel.CONFIRMED_THREAT, VerdictLabel.INCONCLUSIVE)
    if rule.label in BENIGN_LABELS:
        return label in BENIGN_LABELS
    return label is rule.label
