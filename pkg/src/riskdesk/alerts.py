"""Alert normalization: raw intake documents to validated Alert records."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .model import Alert, AlertCategory, AlertOrigin, Severity
from .util import from_iso

# mandatory dimension keys per category; everything else is free-form
CATEGORY_REQUIRED_DIMENSIONS: dict[AlertCategory, tuple[str, ...]] = {
    AlertCategory.LARGE_FILE_DOWNLOAD: ("target_directories", "file_count", "time_window"),
}

# intake labels seen from upstream detectors, folded to canonical categories
_CATEGORY_ALIASES = {
    "large_file_download": AlertCategory.LARGE_FILE_DOWNLOAD,
    "large_files_download": AlertCategory.LARGE_FILE_DOWNLOAD,
    "account_borrowing": AlertCategory.ACCOUNT_BORROWING,
    "ip_scanning": AlertCategory.IP_SCANNING,
    "suspicious_logon": AlertCategory.SUSPICIOUS_LOGON,
    "suspicious_login": AlertCategory.SUSPICIOUS_LOGON,
    "prohibited_software": AlertCategory.PROHIBITED_SOFTWARE,
    "crawler_access": AlertCategory.CRAWLER_ACCESS,
    "web_crawler": AlertCategory.CRAWLER_ACCESS,
    "other": AlertCategory.OTHER,
}


@dataclass
class ValidationFailure(Exception):
    """Every violated field constraint, reported together."""

    violations: list[dict[str, str]] = field(default_factory=list)

    def add(self, code: str, field_name: str, detail: str = "") -> None:
        self.violations.append({"code": code, "field": field_name, "detail": detail})

    def __str__(self) -> str:
        return "; ".join(f"{v['code']}:{v['field']}" for v in self.violations)

    def to_dict(self) -> dict[str, Any]:
        return {"error": "validation_failure", "violations": self.violations}


def canonical_category(label: Any) -> AlertCategory:
    """Fold an intake category label to the closed enum; unknown maps to `other`."""
    if not isinstance(label, str) or not label.strip():
        return AlertCategory.OTHER
    key = re.sub(r"[\s\-]+", "_", label.strip().lower())
    return _CATEGORY_ALIASES.get(key, AlertCategory.OTHER)


def normalize_alert(raw: dict[str, Any], origin: AlertOrigin = AlertOrigin.HTTP) -> Alert:
    """Validate and normalize a raw alert document.

    Raises ValidationFailure listing every violation; a partially valid alert
    never escapes this function.
    """
    failure = ValidationFailure()

    if not isinstance(raw, dict):
        failure.add("bad_document", "$", "alert body must be an object")
        raise failure

    alert_id = raw.get("alert_id")
    if not isinstance(alert_id, str) or not alert_id.strip():
        failure.add("missing_field", "alert_id")
        alert_id = ""

    category = canonical_category(raw.get("category"))

    severity_raw = raw.get("severity")
    severity = Severity.LOW
    if not isinstance(severity_raw, str):
        failure.add("missing_field", "severity")
    else:
        try:
            severity = Severity(severity_raw.strip().lower())
        except ValueError:
            failure.add("bad_enum", "severity", f"unknown severity {severity_raw!r}")

    ids: dict[str, str] = {}
    for name in ("actor_id", "supervisor_id", "admin_id"):
        value = raw.get(name)
        if not isinstance(value, str) or not value.strip():
            failure.add("missing_field", name)
            ids[name] = ""
        else:
            ids[name] = value.strip()

    dimensions = raw.get("dimensions")
    if dimensions is None:
        dimensions = {}
    if not isinstance(dimensions, dict):
        failure.add("bad_document", "dimensions", "must be an object")
        dimensions = {}
    for key in CATEGORY_REQUIRED_DIMENSIONS.get(category, ()):
        if key not in dimensions:
            failure.add("missing_field", f"dimensions.{key}")

    observed_raw = raw.get("observed_at")
    observed_at = None
    if not isinstance(observed_raw, str):
        failure.add("missing_field", "observed_at")
    else:
        try:
            observed_at = from_iso(observed_raw)
        except ValueError:
            failure.add("bad_timestamp", "observed_at", observed_raw)

    if failure.violations:
        raise failure

    assert observed_at is not None
    return Alert(
        alert_id=alert_id.strip(),
        category=category,
        severity=severity,
        actor_id=ids["actor_id"],
        supervisor_id=ids["supervisor_id"],
        admin_id=ids["admin_id"],
        dimensions=dict(dimensions),
        observed_at=observed_at,
        origin=origin,
    )
