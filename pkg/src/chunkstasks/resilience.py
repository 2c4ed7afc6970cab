"""Shadow-copy placement, owner routing after a crash, and fault injection."""

from __future__ import annotations

import logging
import threading
from typing import Callable

log = logging.getLogger(__name__)


def replica_ranks(owner: int, replication_factor: int, n_workers: int) -> list[int]:
    """Ranks holding read-only mirrors of chunks owned by ``owner``."""
    out = []
    for k in range(1, replication_factor):
        r = (owner + k) % n_workers
        if r != owner and r not in out:
            out.append(r)
    return out


def route(owner: int, replication_factor: int, n_workers: int, is_alive: Callable[[int], bool]) -> int | None:
    """Rank that answers for ``owner``'s chunks, or None if they are lost.

    While the owner lives it serves its own chunks; afterwards the first live
    replica takes over. Every participant computes the same answer, so no
    redirect table has to be exchanged.
    """
    if is_alive(owner):
        return owner
    for r in replica_ranks(owner, replication_factor, n_workers):
        if is_alive(r):
            return r
    return None


class FaultInjector:
    """Kills a worker once a given number of task commits has happened."""

    def __init__(self, kill: Callable[[int], None]):
        self._kill = kill
        self._lock = threading.Lock()
        self.commits = 0
        self._plan: list[tuple[int, int]] = []
        self.fired: list[tuple[int, int]] = []

    def kill_after(self, n_commits: int, rank: int) -> None:
        with self._lock:
            self._plan.append((n_commits, rank))
            self._plan.sort()

    def on_commit(self) -> None:
        due = []
        with self._lock:
            self.commits += 1
            while self._plan and self._plan[0][0] <= self.commits:
                due.append(self._plan.pop(0))
        for n, rank in due:
            log.info("fault injection: killing worker %d after %d commits", rank, n)
            self.fired.append((n, rank))
            self._kill(rank)
