from __future__ import annotations

from datetime import datetime, timezone

import pytest

from riskdesk.config import default_config
from riskdesk.model import Alert, AlertCategory, AlertOrigin, Severity


@pytest.fixture
def config(tmp_path):
    return default_config(tmp_path / "data")


@pytest.fixture
def lfd_alert():
    return Alert(
        alert_id="al-test-1",
        category=AlertCategory.LARGE_FILE_DOWNLOAD,
        severity=Severity.MEDIUM,
        actor_id="emp-4821",
        supervisor_id="mgr-107",
        admin_id="sec-admin-1",
        dimensions={
            "target_directories": ["/srv/projects/7/docs", "/srv/finance/2/exports"],
            "file_count": 12000,
            "byte_volume": 2_160_000_000,
            "time_window": "2026-01-04T22:00:00Z/2026-01-05T02:30:00Z",
        },
        observed_at=datetime(2026, 1, 5, tzinfo=timezone.utc),
        origin=AlertOrigin.QUEUE,
    )


def raw_alert(alert_id="al-raw-1", category="large_file_download", severity="medium", **overrides):
    doc = {
        "alert_id": alert_id,
        "category": category,
        "severity": severity,
        "actor_id": "emp-1001",
        "supervisor_id": "mgr-55",
        "admin_id": "sec-admin-1",
        "dimensions": {
            "target_directories": ["/srv/x"],
            "file_count": 900,
            "time_window": "2026-01-02T01:00:00Z/2026-01-02T03:00:00Z",
        },
        "observed_at": "2026-01-02T03:00:00Z",
    }
    doc.update(overrides)
    return doc
