"""Optional debug event log used to check scheduler and store invariants.

One record per event: ``ts, worker, event, task_id, depth`` plus free-form
details. Appends are atomic under the GIL, so every thread writes directly.
"""

from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass(slots=True)
class Event:
    ts: float
    worker: int
    event: str
    task_id: Any = None
    depth: int = -1
    detail: dict[str, Any] = field(default_factory=dict)

    def line(self) -> str:
        extra = " ".join(f"{k}={v}" for k, v in self.detail.items())
        tid = "" if self.task_id is None else repr(self.task_id)
        return f"{self.ts:.9f},{self.worker},{self.event},{tid},{self.depth},{extra}"


class EventLog:
    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.events: list[Event] = []

    def emit(self, worker: int, event: str, task_id=None, depth: int = -1, **detail) -> None:
        self.events.append(Event(time.perf_counter(), worker, event, task_id, depth, detail))

    def of(self, *names: str) -> list[Event]:
        return [e for e in self.events if e.event in names]

    def flush(self) -> None:
        if self.path is None:
            return
        with self.path.open("w") as fh:
            fh.write("ts,worker,event,task_id,depth,detail\n")
            for e in self.events:
                fh.write(e.line() + "\n")


# -- replay checks -----------------------------------------------------------


def steal_violations(log: EventLog) -> list[Event]:
    """Steals whose depth exceeded the victim's minimum pooled depth.

    Replays ``pool_add`` / ``pool_remove`` / ``steal`` per worker. Every
    pooled task is stealable, so the pool is the stealable set.
    """
    pools: dict[int, dict[Any, int]] = defaultdict(dict)
    bad = []
    for e in log.events:
        pool = pools[e.worker]
        if e.event == "pool_add":
            pool[e.task_id] = e.depth
        elif e.event == "pool_remove":
            pool.pop(e.task_id, None)
        elif e.event == "steal":
            if pool and e.depth > min(pool.values()):
                bad.append(e)
            pool.pop(e.task_id, None)
    return bad


def overlapping_nonleaf_commits(log: EventLog) -> list[tuple[Event, Event]]:
    open_commit: dict[int, Event] = {}
    bad = []
    for e in log.events:
        if e.event == "commit_start" and not e.detail.get("leaf", True):
            if e.worker in open_commit:
                bad.append((open_commit[e.worker], e))
            open_commit[e.worker] = e
        elif e.event == "commit_end" and not e.detail.get("leaf", True):
            open_commit.pop(e.worker, None)
    return bad


def leaf_commit_gaps(log: EventLog) -> list[float]:
    """Seconds between execute_end and commit_start for each leaf task."""
    ended: dict[tuple[int, Any], float] = {}
    gaps = []
    for e in log.events:
        if e.event == "execute_end":
            ended[(e.worker, e.task_id)] = e.ts
        elif e.event == "commit_start" and e.detail.get("leaf"):
            t0 = ended.pop((e.worker, e.task_id), None)
            if t0 is not None:
                gaps.append(e.ts - t0)
    return gaps


def refcount_imbalances(log: EventLog) -> dict[Any, int]:
    """Entries whose (inserts + copies - releases) disagrees with their fate.

    A freed entry must balance to zero; a surviving entry to a positive
    count. Returns entry -> residual for every violation.
    """
    count: dict[Any, int] = defaultdict(int)
    freed: dict[Any, int] = defaultdict(int)
    for e in log.events:
        key = e.detail.get("entry")
        if key is None:
            continue
        if e.event == "chunk_insert":
            count[key] += 1
        elif e.event == "chunk_copy":
            count[key] += 1
        elif e.event == "chunk_release":
            count[key] -= 1
        elif e.event == "chunk_free":
            freed[key] += 1
    bad = {}
    for key, n in count.items():
        if freed.get(key, 0) > 1:
            bad[key] = n
        elif freed.get(key) == 1 and n != 0:
            bad[key] = n
        elif not freed.get(key) and n <= 0:
            bad[key] = n
    return bad
