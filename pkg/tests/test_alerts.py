from __future__ import annotations

import pytest

from riskdesk.alerts import ValidationFailure, canonical_category, normalize_alert
from riskdesk.model import AlertCategory, AlertOrigin

from conftest import raw_alert


def test_paper_style_label_maps_to_category():
    assert canonical_category("Large Files Download") is AlertCategory.LARGE_FILE_DOWNLOAD
    assert canonical_category("Account Borrowing") is AlertCategory.ACCOUNT_BORROWING


def test_unknown_category_maps_to_other():
    alert = normalize_alert(raw_alert(category="vpn_tunnel", dimensions={}))
    assert alert.category is AlertCategory.OTHER


def test_missing_actor_id_rejected():
    doc = raw_alert()
    del doc["actor_id"]
    with pytest.raises(ValidationFailure) as exc:
        normalize_alert(doc)
    assert {"code": "missing_field", "field": "actor_id", "detail": ""} in exc.value.violations


def test_all_violations_reported_together():
    doc = raw_alert()
    del doc["actor_id"]
    del doc["supervisor_id"]
    doc["severity"] = "extreme"
    doc["observed_at"] = "not-a-date"
    with pytest.raises(ValidationFailure) as exc:
        normalize_alert(doc)
    codes = {(v["code"], v["field"]) for v in exc.value.violations}
    assert ("missing_field", "actor_id") in codes
    assert ("missing_field", "supervisor_id") in codes
    assert ("bad_enum", "severity") in codes
    assert ("bad_timestamp", "observed_at") in codes


def test_category_mandatory_dimensions_enforced():
    doc = raw_alert()
    doc["dimensions"] = {"file_count": 10}
    with pytest.raises(ValidationFailure) as exc:
        normalize_alert(doc)
    fields = {v["field"] for v in exc.value.violations}
    assert "dimensions.target_directories" in fields
    assert "dimensions.time_window" in fields


def test_normalize_is_deterministic():
    doc = raw_alert()
    a = normalize_alert(doc, origin=AlertOrigin.HTTP)
    b = normalize_alert(doc, origin=AlertOrigin.HTTP)
    assert a.to_dict() == b.to_dict()


def test_severity_case_folded():
    alert = normalize_alert(raw_alert(severity="HIGH"))
    assert alert.severity.value == "high"
