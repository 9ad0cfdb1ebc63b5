from __future__ import annotations

import json

import pytest

from riskdesk.gateway import AlertGateway
from riskdesk.model import TaskState

from conftest import raw_alert
from test_coordinator import wire


@pytest.fixture
def rig(tmp_path):
    return wire(tmp_path)


def test_ingest_http_valid(rig):
    gateway = AlertGateway(rig.coordinator)
    status, doc = gateway.ingest_http(json.dumps(raw_alert()).encode())
    assert status == 202
    assert doc["created"]
    assert rig.store.get(doc["task_id"]) is not None


def test_ingest_http_malformed_json(rig):
    gateway = AlertGateway(rig.coordinator)
    status, doc = gateway.ingest_http(b"{not json")
    assert status == 400 and doc["error"] == "parse_error"


def test_ingest_http_validation_failure(rig):
    gateway = AlertGateway(rig.coordinator)
    bad = raw_alert()
    del bad["actor_id"]
    status, doc = gateway.ingest_http(json.dumps(bad).encode())
    assert status == 400 and doc["error"] == "validation_failure"
    assert rig.store.all_tasks() == []  # nothing partial reached the coordinator


def test_ingest_http_idempotent_on_alert_id(rig):
    gateway = AlertGateway(rig.coordinator)
    _, first = gateway.ingest_http(json.dumps(raw_alert(alert_id="al-dup")).encode())
    _, second = gateway.ingest_http(json.dumps(raw_alert(alert_id="al-dup")).encode())
    assert first["task_id"] == second["task_id"]
    assert not second["created"]
    assert len(rig.store.all_tasks()) == 1


def test_ingest_queue_isolates_bad_records(rig):
    gateway = AlertGateway(rig.coordinator)
    batch = [raw_alert(alert_id="q-1"), {"alert_id": "q-2"}, raw_alert(alert_id="q-3")]
    outcomes = gateway.ingest_queue(batch)
    assert len(outcomes) == 3
    assert outcomes[0].get("task_id") and outcomes[2].get("task_id")
    assert outcomes[1]["error"] == "validation_failure"


def test_ingest_queue_empty_batch_rejected(rig):
    gateway = AlertGateway(rig.coordinator)
    with pytest.raises(ValueError):
        gateway.ingest_queue([])


def test_ingest_queue_fifty_distinct(rig):
    gateway = AlertGateway(rig.coordinator)
    batch = [raw_alert(alert_id=f"q-{i}") for i in range(50)]
    outcomes = gateway.ingest_queue(batch)
    ids = {o["task_id"] for o in outcomes}
    assert len(ids) == 50
    page = rig.store.list_tasks(limit=100)
    assert len(page.items) == 50


def test_intake_dir_consumed_and_renamed(rig, tmp_path):
    intake = tmp_path / "intake"
    intake.mkdir()
    lines = [json.dumps(raw_alert(alert_id=f"f-{i}")) for i in range(3)]
    (intake / "batch-1.ndjson").write_text("\n".join(lines) + "\nnot-json\n")
    gateway = AlertGateway(rig.coordinator)
    consumed = gateway.consume_intake_dir(intake)
    assert "batch-1.ndjson" in consumed
    outcomes = consumed["batch-1.ndjson"]
    assert sum(1 for o in outcomes if o.get("task_id")) == 3
    assert outcomes[3]["error"] == "parse_error"
    assert not list(intake.glob("*.ndjson"))
    assert list(intake.glob("*.ndjson.done"))
    # second pass: nothing left to consume
    assert gateway.consume_intake_dir(intake) == {}
