"""Durable task storage: one append-only NDJSON event log per task.

Steps commit atomically: all events of a step land in a single buffered
write. On load the log is replayed in full; a partial trailing line (torn
write from a crash) is dropped as an uncommitted step, while corruption or
sequence gaps anywhere else poison only that task. Periodic per-task
snapshots are written alongside as inspection artifacts; replay remains the
source of truth.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from .model import EventApplyError, InvestigationTask, TaskEvent, apply_event
from .util import to_iso

logger = logging.getLogger(__name__)

SNAPSHOT_EVERY = 10


class StoreError(Exception):
    pass


@dataclass
class CorruptLog:
    task_id: str
    reason: str
    partial: InvestigationTask | None  # snapshot up to the last good event


@dataclass
class TaskPage:
    items: list[dict[str, Any]]
    next_cursor: str | None


class EventLogStore:
    """File-backed store; the coordinator is its only writer."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.tasks_dir = self.data_dir / "tasks"
        self.snap_dir = self.data_dir / "snapshots"
        self.tasks_dir.mkdir(parents=True, exist_ok=True)
        self.snap_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._tasks: dict[str, InvestigationTask] = {}
        self._alert_index: dict[str, str] = {}
        self._commits_since_snap: dict[str, int] = {}
        self._listeners: list[Callable[[TaskEvent], None]] = []

    # ------------------------------------------------------------------
    # pub/sub for the event stream
    # ------------------------------------------------------------------

    def subscribe(self, listener: Callable[[TaskEvent], None]) -> None:
        with self._lock:
            self._listeners.append(listener)

    def _publish(self, events: Iterable[TaskEvent]) -> None:
        for listener in list(self._listeners):
            for event in events:
                try:
                    listener(event)
                except Exception:  # a slow console must never hurt the engine
                    logger.exception("event listener failed")

    # ------------------------------------------------------------------
    # commits
    # ------------------------------------------------------------------

    def _log_path(self, task_id: str) -> Path:
        return self.tasks_dir / f"{task_id}.ndjson"

    def commit(self, task: InvestigationTask, events: list[TaskEvent]) -> None:
        """Persist a step's events atomically and install the new snapshot.

        The batch goes out in a single os.write and its final event carries a
        commit marker; replay drops any trailing events past the last marker,
        so a killed process can never leave a half-applied step behind.
        """
        if not events:
            return
        events[-1].payload["commit_mark"] = True
        payload = "".join(json.dumps(e.to_dict(), separators=(",", ":")) + "\n" for e in events)
        with self._lock:
            fd = os.open(self._log_path(task.task_id), os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                os.write(fd, payload.encode("utf-8"))
            finally:
                os.close(fd)
            self._tasks[task.task_id] = task
            self._alert_index.setdefault(task.alert.alert_id, task.task_id)
            count = self._commits_since_snap.get(task.task_id, 0) + 1
            if count >= SNAPSHOT_EVERY or task.is_terminal():
                self._write_snapshot(task)
                count = 0
            self._commits_since_snap[task.task_id] = count
        self._publish(events)

    def _write_snapshot(self, task: InvestigationTask) -> None:
        path = self.snap_dir / f"{task.task_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(task.to_dict(), indent=2), encoding="utf-8")
        tmp.replace(path)

    # ------------------------------------------------------------------
    # reads
    # ------------------------------------------------------------------

    def get(self, task_id: str) -> InvestigationTask | None:
        with self._lock:
            return self._tasks.get(task_id)

    def task_for_alert(self, alert_id: str) -> str | None:
        with self._lock:
            return self._alert_index.get(alert_id)

    def all_tasks(self) -> list[InvestigationTask]:
        with self._lock:
            return list(self._tasks.values())

    def read_events(self, task_id: str) -> list[TaskEvent]:
        path = self._log_path(task_id)
        if not path.exists():
            return []
        events = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            events.append(TaskEvent.from_dict(json.loads(line)))
        return events

    def list_tasks(
        self,
        state: str | None = None,
        category: str | None = None,
        cursor: str | None = None,
        limit: int = 50,
    ) -> TaskPage:
        """Summaries ordered by updated_at descending with keyset pagination."""
        with self._lock:
            tasks = list(self._tasks.values())
        rows = []
        for t in tasks:
            if state and t.state.value != state:
                continue
            if category and t.alert.category.value != category:
                continue
            rows.append(t)
        rows.sort(key=lambda t: (to_iso(t.updated_at) or "", t.task_id), reverse=True)
        if cursor:
            try:
                cur_at, cur_id = cursor.split("|", 1)
            except ValueError:
                raise StoreError(f"bad cursor {cursor!r}")
            rows = [t for t in rows if ((to_iso(t.updated_at) or "", t.task_id) < (cur_at, cur_id))]
        page = rows[:limit]
        next_cursor = None
        if len(rows) > limit and page:
            last = page[-1]
            next_cursor = f"{to_iso(last.updated_at)}|{last.task_id}"
        return TaskPage(items=[summary(t) for t in page], next_cursor=next_cursor)

    # ------------------------------------------------------------------
    # recovery
    # ------------------------------------------------------------------

    def load_all(self) -> tuple[list[InvestigationTask], list[CorruptLog]]:
        """Replay every task log. Returns (rehydrated tasks, corrupt logs)."""
        tasks: list[InvestigationTask] = []
        corrupt: list[CorruptLog] = []
        with self._lock:
            for path in sorted(self.tasks_dir.glob("*.ndjson")):
                task_id = path.stem
                result = self._replay_file(path)
                if isinstance(result, CorruptLog):
                    corrupt.append(result)
                    if result.partial is not None:
                        self._tasks[task_id] = result.partial
                        self._alert_index.setdefault(result.partial.alert.alert_id, task_id)
                elif result is not None:
                    self._tasks[task_id] = result
                    self._alert_index.setdefault(result.alert.alert_id, task_id)
                    tasks.append(result)
        return tasks, corrupt

    def _replay_file(self, path: Path) -> InvestigationTask | CorruptLog | None:
        raw = path.read_text(encoding="utf-8")
        lines = [l for l in raw.split("\n") if l.strip()]

        # parse what parses; a torn write can only affect the tail
        parsed: list[TaskEvent] = []
        bad_at: int | None = None
        bad_reason = ""
        for idx, line in enumerate(lines):
            try:
                parsed.append(TaskEvent.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                bad_at = idx
                bad_reason = str(exc)
                break

        if bad_at is not None and bad_at != len(lines) - 1:
            # malformed line with committed data after it: genuine corruption
            task = self._fold_committed(parsed)
            return CorruptLog(task_id=path.stem, reason=f"line {bad_at + 1}: {bad_reason}", partial=task)

        # drop any uncommitted tail (events past the last commit marker)
        keep = len(parsed)
        while keep > 0 and not parsed[keep - 1].payload.get("commit_mark"):
            keep -= 1
        dropped = len(lines) - keep
        committed = parsed[:keep]

        task: InvestigationTask | None = None
        for idx, event in enumerate(committed):
            try:
                task = apply_event(task, event)
            except EventApplyError as exc:
                return CorruptLog(task_id=path.stem, reason=f"event {idx + 1}: {exc}", partial=task)

        if dropped:
            self._truncate(path, [json.dumps(e.to_dict(), separators=(",", ":")) for e in committed])
            logger.warning("dropped %d uncommitted trailing event(s) in %s", dropped, path.name)
        return task

    @staticmethod
    def _fold_committed(events: list[TaskEvent]) -> InvestigationTask | None:
        task: InvestigationTask | None = None
        for event in events:
            try:
                task = apply_event(task, event)
            except EventApplyError:
                break
        return task

    @staticmethod
    def _truncate(path: Path, good_lines: list[str]) -> None:
        content = "".join(line + "\n" for line in good_lines)
        tmp = path.with_suffix(".ndjson.tmp")
        tmp.write_text(content, encoding="utf-8")
        tmp.replace(path)


def summary(task: InvestigationTask) -> dict[str, Any]:
    return {
        "task_id": task.task_id,
        "state": task.state.value,
        "category": task.alert.category.value,
        "actor_id": task.alert.actor_id,
        "severity": task.alert.severity.value,
        "updated_at": to_iso(task.updated_at),
        "verdict": task.verdict.label.value if task.verdict else None,
    }
