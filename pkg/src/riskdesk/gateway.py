"""Alert intake: HTTP bodies and queue-style batches into coordinator tasks.

Ingestion is idempotent on alert_id (redelivery returns the existing task)
and all-or-nothing per record: a partial alert never reaches the coordinator.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

from .alerts import ValidationFailure, normalize_alert
from .model import AlertOrigin

logger = logging.getLogger(__name__)


class AlertGateway:
    def __init__(self, coordinator):
        self.coordinator = coordinator

    def ingest_http(self, body: bytes) -> tuple[int, dict[str, Any]]:
        """One HTTP alert body -> (status_code, response document)."""
        try:
            raw = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            return 400, {"error": "parse_error", "detail": str(exc)}
        try:
            alert = normalize_alert(raw, origin=AlertOrigin.HTTP)
        except ValidationFailure as failure:
            return 400, failure.to_dict()
        task_id, created = self.coordinator.create_task(alert)
        return 202, {"task_id": task_id, "created": created}

    def ingest_queue(self, batch: list[dict[str, Any]]) -> list[dict[str, Any]]:
        """Batch intake; outcomes positionally aligned, bad records isolated."""
        if not batch:
            raise ValueError("batch must be non-empty")
        outcomes: list[dict[str, Any]] = []
        for raw in batch:
            try:
                alert = normalize_alert(raw, origin=AlertOrigin.QUEUE)
            except ValidationFailure as failure:
                outcomes.append(failure.to_dict())
                continue
            task_id, created = self.coordinator.create_task(alert)
            outcomes.append({"task_id": task_id, "created": created})
        return outcomes

    def consume_intake_dir(self, intake_dir: Path) -> dict[str, Any]:
        """Drain newline-delimited JSON files from the intake directory.

        Each consumed file is renamed with a .done suffix; a re-run therefore
        skips it, and re-delivered alert_ids inside are no-ops anyway.
        """
        intake_dir = Path(intake_dir)
        consumed: dict[str, Any] = {}
        for path in sorted(intake_dir.glob("*.ndjson")):
            records = []
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    records.append({"__unparseable__": line})
            outcomes = []
            for raw in records:
                if "__unparseable__" in raw:
                    outcomes.append({"error": "parse_error"})
                    continue
                try:
                    alert = normalize_alert(raw, origin=AlertOrigin.QUEUE)
                except ValidationFailure as failure:
                    outcomes.append(failure.to_dict())
                    continue
                task_id, created = self.coordinator.create_task(alert)
                outcomes.append({"task_id": task_id, "created": created})
            consumed[path.name] = outcomes
            path.rename(path.with_suffix(path.suffix + ".done"))
        return consumed
