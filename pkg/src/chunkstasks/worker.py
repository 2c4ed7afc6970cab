"""A worker is one chunk service plus one scheduler sharing an id minter."""

from __future__ import annotations

import random
from typing import Callable

from .chunk_service import ChunkService
from .core import TypeRegistry
from .errors import UsageError
from .events import EventLog
from .ids import IdMinter
from .scheduler import Scheduler
from .transport import Transport


class Worker:
    def __init__(
        self,
        rank: int,
        transport: Transport,
        registry: TypeRegistry,
        *,
        n_executors: int = 1,
        cache_bytes: int | None = 64 * 1024 * 1024,
        replication_factor: int = 1,
        seed: int | None = None,
        events: EventLog | None = None,
        on_commit: Callable[[], None] | None = None,
    ):
        self.rank = rank
        self.transport = transport
        # slot 0 belongs to the driver
        self.minter = IdMinter(rank + 1)
        self.chunks = ChunkService(
            rank,
            transport,
            registry,
            self.minter,
            cache_bytes=cache_bytes,
            replication_factor=replication_factor,
            events=events,
        )
        rng = random.Random(None if seed is None else seed * 1_000_003 + rank)
        self.scheduler = Scheduler(
            rank,
            transport,
            registry,
            self.chunks,
            self.minter,
            n_executors=n_executors,
            rng=rng,
            events=events,
            on_commit=on_commit,
        )

    @property
    def alive(self) -> bool:
        return self.transport.is_alive(self.rank)

    def start(self) -> None:
        self.chunks.start()
        self.scheduler.start()

    def halt(self) -> None:
        self.scheduler.halt()

    def join(self, timeout: float | None = None) -> None:
        self.chunks.join(timeout)
        self.scheduler.join(timeout)


def spawn_workers(
    n_workers: int,
    transport: Transport,
    registry: TypeRegistry,
    **worker_kwargs,
) -> list[Worker]:
    """Create and start ``n_workers`` workers on ``transport``."""
    if n_workers < 1:
        raise UsageError("n_workers must be >= 1")
    if transport.n_workers != n_workers:
        raise UsageError(f"transport has {transport.n_workers} ranks, asked for {n_workers} workers")
    workers = [Worker(r, transport, registry, **worker_kwargs) for r in range(n_workers)]
    for w in workers:
        w.start()
    return workers

