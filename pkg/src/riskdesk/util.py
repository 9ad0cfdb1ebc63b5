"""Deterministic identifiers, hashing, and clock abstraction.

Everything that feeds persisted artifacts (task ids, correlation ids, event
timestamps, fault draws) must be reproducible from seeds, so batch runs and
crash-resumed runs produce byte-identical output. Wall-clock time is only
used when serving live traffic.
"""

from __future__ import annotations

import hashlib
import time
from datetime import datetime, timedelta, timezone


def stable_hash(*parts: object) -> int:
    """64-bit hash that is stable across processes (unlike builtin hash)."""
    joined = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(joined.encode("utf-8")).digest()[:8], "big")


def stable_unit(*parts: object) -> float:
    """Deterministic float in [0, 1) derived from the parts."""
    return stable_hash(*parts) / 2**64


def task_id_for_alert(alert_id: str) -> str:
    return "t" + hashlib.sha256(("task:" + alert_id).encode("utf-8")).hexdigest()[:16]


def correlation_id(task_id: str, ordinal: int) -> str:
    return "c" + hashlib.sha256(f"corr:{task_id}:{ordinal}".encode("utf-8")).hexdigest()[:12]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def to_iso(ts: datetime | None) -> str | None:
    if ts is None:
        return None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def from_iso(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00")).astimezone(timezone.utc)


class Clock:
    """Wall clock; subclassed for deterministic simulation."""

    def now(self) -> datetime:
        return utc_now()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class SimClock(Clock):
    """Logical clock for scripted runs: starts at a fixed epoch, never consults
    the host clock, and treats sleeps as instantaneous logical advances.

    One instance per task keeps event times independent of scheduling order.
    """

    EPOCH = datetime(2026, 1, 1, tzinfo=timezone.utc)

    def __init__(self, start: datetime | None = None):
        self._now = start or self.EPOCH

    def now(self) -> datetime:
        return self._now

    def advance(self, milliseconds: float) -> None:
        self._now = self._now + timedelta(milliseconds=milliseconds)

    def sleep(self, seconds: float) -> None:
        self.advance(seconds * 1000.0)
