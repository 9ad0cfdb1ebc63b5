from __future__ import annotations

import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskdesk.model import (
    EventApplyError,
    EventKind,
    TaskEvent,
    TaskState,
    apply_event,
    fold_events,
    transition_allowed,
)
from riskdesk.store import EventLogStore

from conftest import raw_alert

T0 = datetime(2026, 1, 1, tzinfo=timezone.utc)


def ev(seq, kind, payload, task_id="t1"):
    return TaskEvent(seq=seq, task_id=task_id, kind=kind, payload=payload, at=T0)


def created_event(task_id="t1", alert_id="al-x"):
    from riskdesk.alerts import normalize_alert

    alert = normalize_alert(raw_alert(alert_id=alert_id))
    return ev(1, EventKind.CREATED, {"alert": alert.to_dict()}, task_id=task_id)


def base_events(task_id="t1"):
    return [
        created_event(task_id),
        ev(2, EventKind.STATE_CHANGED, {"from": "CREATED", "to": "AWAITING_ADMIN_AUTH"}, task_id),
        ev(
            3,
            EventKind.MESSAGE_IN,
            {"role": "admin", "text": '{"decision": "approve"}', "decision": "approve", "solicited": False,
             "flags": [], "round_index": 0},
            task_id,
        ),
        ev(4, EventKind.STATE_CHANGED, {"from": "AWAITING_ADMIN_AUTH", "to": "PLANNING"}, task_id),
    ]


# ---------------------------------------------------------------------------
# state machine
# ---------------------------------------------------------------------------


def test_transition_graph():
    allowed = [
        (TaskState.CREATED, TaskState.AWAITING_ADMIN_AUTH),
        (TaskState.AWAITING_ADMIN_AUTH, TaskState.PLANNING),
        (TaskState.AWAITING_ADMIN_AUTH, TaskState.CLOSED),
        (TaskState.PLANNING, TaskState.INVESTIGATING),
        (TaskState.INVESTIGATING, TaskState.AWAITING_USER_REPLY),
        (TaskState.AWAITING_USER_REPLY, TaskState.INVESTIGATING),
        (TaskState.INVESTIGATING, TaskState.JUDGING),
        (TaskState.JUDGING, TaskState.DISPOSING),
        (TaskState.DISPOSING, TaskState.CLOSED),
        (TaskState.INVESTIGATING, TaskState.SUSPENDED),
        (TaskState.PLANNING, TaskState.FAILED),
    ]
    for src, dst in allowed:
        assert transition_allowed(src, dst), f"{src} -> {dst} should be allowed"
    denied = [
        (TaskState.CREATED, TaskState.PLANNING),
        (TaskState.PLANNING, TaskState.JUDGING),
        (TaskState.JUDGING, TaskState.INVESTIGATING),
        (TaskState.CLOSED, TaskState.PLANNING),
        (TaskState.FAILED, TaskState.SUSPENDED),
        (TaskState.DISPOSING, TaskState.INVESTIGATING),
    ]
    for src, dst in denied:
        assert not transition_allowed(src, dst), f"{src} -> {dst} should be denied"


def test_suspended_resumes_only_to_prior_state():
    assert transition_allowed(TaskState.SUSPENDED, TaskState.INVESTIGATING, prior=TaskState.INVESTIGATING)
    assert not transition_allowed(TaskState.SUSPENDED, TaskState.JUDGING, prior=TaskState.INVESTIGATING)


def test_fold_rejects_illegal_transition():
    events = [
        created_event(),
        ev(2, EventKind.STATE_CHANGED, {"from": "CREATED", "to": "JUDGING"}),
    ]
    with pytest.raises(EventApplyError):
        fold_events(events)


def test_fold_rejects_seq_gap():
    events = base_events()
    events[2].seq = 5
    with pytest.raises(EventApplyError):
        fold_events(events[:3])


def test_fold_rejects_double_verdict():
    verdict = {"label": "no_risk", "confidence": 0.5, "rationale": "r", "consistency_flags": [], "source": "model"}
    events = base_events() + [
        ev(5, EventKind.STATE_CHANGED, {"from": "PLANNING", "to": "INVESTIGATING"}),
        ev(6, EventKind.STATE_CHANGED, {"from": "INVESTIGATING", "to": "JUDGING"}),
        ev(7, EventKind.VERDICT_SET, {"verdict": verdict}),
        ev(8, EventKind.VERDICT_SET, {"verdict": verdict}),
    ]
    with pytest.raises(EventApplyError, match="verdict set twice"):
        fold_events(events)


def test_fold_reconstructs_admin_decision_and_rounds():
    events = base_events() + [
        ev(5, EventKind.STATE_CHANGED, {"from": "PLANNING", "to": "INVESTIGATING"}),
        ev(6, EventKind.MESSAGE_OUT, {"respondent": "user", "text": "q1", "correlation_id": "c1", "expects_reply": True}),
        ev(7, EventKind.MESSAGE_IN, {"role": "user", "text": "a1", "correlation_id": "c1", "solicited": True,
                                     "flags": ["cooperative"], "round_index": 1}),
    ]
    task = fold_events(events)
    assert task.admin_decision == "approve"
    assert task.transcript.rounds_for("user") == 1
    assert task.state is TaskState.INVESTIGATING
    assert "cooperative" in task.transcript.flags
    assert task.pending_outbound == {}


def test_turn_and_step_accounting():
    events = base_events() + [
        ev(5, EventKind.STATE_CHANGED, {"from": "PLANNING", "to": "INVESTIGATING", "turn": 0, "step_ms": 1500.0}),
    ]
    task = fold_events(events)
    assert task.model_turns == 1
    assert task.step_count == 1
    assert task.active_ms == 1500.0


# ---------------------------------------------------------------------------
# store durability
# ---------------------------------------------------------------------------


def make_store(tmp_path):
    return EventLogStore(tmp_path / "data")


def test_commit_and_reload_round_trip(tmp_path):
    store = make_store(tmp_path)
    events = base_events()
    task = None
    for event in events:
        task = apply_event(task, event)
    store.commit(task, events)

    fresh = EventLogStore(tmp_path / "data")
    tasks, corrupt = fresh.load_all()
    assert not corrupt
    assert len(tasks) == 1
    assert tasks[0].to_dict() == task.to_dict()


def test_fold_equals_snapshot_after_commits(tmp_path):
    store = make_store(tmp_path)
    events = base_events()
    task = None
    for event in events:
        task = apply_event(task, event)
    store.commit(task, events)
    replayed = fold_events(store.read_events("t1"))
    assert replayed.to_dict() == store.get("t1").to_dict()


def test_partial_trailing_line_is_dropped(tmp_path):
    store = make_store(tmp_path)
    events = base_events()
    task = None
    for event in events:
        task = apply_event(task, event)
    store.commit(task, events)
    path = store.tasks_dir / "t1.ndjson"
    with path.open("a", encoding="utf-8") as fh:
        fh.write('{"seq": 5, "task_id": "t1", "kind": "state_cha')  # torn write

    fresh = EventLogStore(tmp_path / "data")
    tasks, corrupt = fresh.load_all()
    assert not corrupt
    assert tasks[0].last_seq == 4


def test_uncommitted_step_tail_is_dropped(tmp_path):
    """Complete lines past the last commit marker belong to a half-written step."""
    store = make_store(tmp_path)
    events = base_events()
    task = None
    for event in events:
        task = apply_event(task, event)
    store.commit(task, events)
    path = store.tasks_dir / "t1.ndjson"
    stray = ev(5, EventKind.STATE_CHANGED, {"from": "PLANNING", "to": "INVESTIGATING"})
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(stray.to_dict()) + "\n")

    fresh = EventLogStore(tmp_path / "data")
    tasks, corrupt = fresh.load_all()
    assert not corrupt
    assert tasks[0].last_seq == 4
    assert tasks[0].state is TaskState.PLANNING


def test_midfile_corruption_poisons_only_that_task(tmp_path):
    store = make_store(tmp_path)
    for task_id in ("t1", "t2"):
        events = base_events(task_id)
        task = None
        for event in events:
            task = apply_event(task, event)
        store.commit(task, events)
    path = store.tasks_dir / "t1.ndjson"
    lines = path.read_text().splitlines()
    lines[1] = '{"garbage": tru'
    path.write_text("\n".join(lines) + "\n")

    fresh = EventLogStore(tmp_path / "data")
    tasks, corrupt = fresh.load_all()
    assert [c.task_id for c in corrupt] == ["t1"]
    assert [t.task_id for t in tasks] == ["t2"]


def test_list_tasks_filter_and_order(tmp_path):
    store = make_store(tmp_path)
    for i, task_id in enumerate(["ta", "tb", "tc"]):
        events = base_events(task_id)
        for event in events:
            event.at = datetime(2026, 1, 1 + i, tzinfo=timezone.utc)
        task = None
        for event in events:
            task = apply_event(task, event)
        store.commit(task, events)
    page = store.list_tasks()
    assert [t["task_id"] for t in page.items] == ["tc", "tb", "ta"]
    page = store.list_tasks(state="PLANNING")
    assert len(page.items) == 3
    page = store.list_tasks(state="CLOSED")
    assert page.items == []


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=40), st.integers(min_value=1, max_value=7))
def test_pagination_is_complete_and_duplicate_free(tmp_path_factory, n_tasks, page_size):
    store = EventLogStore(tmp_path_factory.mktemp("pg"))
    for i in range(n_tasks):
        task_id = f"t{i:03d}"
        events = base_events(task_id)
        for event in events:
            event.at = datetime(2026, 1, 1, i // 24, i % 60, tzinfo=timezone.utc)
        task = None
        for event in events:
            task = apply_event(task, event)
        store.commit(task, events)

    seen = []
    cursor = None
    for _ in range(1000):
        page = store.list_tasks(cursor=cursor, limit=page_size)
        seen.extend(t["task_id"] for t in page.items)
        if page.next_cursor is None:
            break
        cursor = page.next_cursor
    assert len(seen) == n_tasks
    assert len(set(seen)) == n_tasks
