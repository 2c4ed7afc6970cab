"""In-process message layer between the driver and the workers.

Each participant owns one inbound queue per service, standing in for the
per-service communicators of a distributed deployment. Services never share
state; everything crosses this layer as framed bytes.

Frame layout (little-endian)::

    service u32 | source i32 | destination i32 | body length u64 | body

The driver uses rank :data:`DRIVER` (-1).
"""

from __future__ import annotations

import queue
import struct
import threading
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum

from .errors import DecodeError, DestinationDeadError, UsageError

DRIVER = -1

_FRAME = struct.Struct("<Iiiq")
FRAME_HEADER = _FRAME.size  # 20


class Service(IntEnum):
    CHUNK = 1
    SCHEDULER = 2
    CONTROL = 3


@dataclass(frozen=True, slots=True)
class Envelope:
    service: Service
    source: int
    destination: int
    body: bytes
    # Untracked messages (idle steal chatter) do not hold up quiescence.
    tracked: bool = True


def encode_frame(env: Envelope) -> bytes:
    return _FRAME.pack(int(env.service), env.source, env.destination, len(env.body)) + env.body


def decode_frame(frame: bytes) -> Envelope:
    if len(frame) < FRAME_HEADER:
        raise DecodeError("truncated frame header")
    service, src, dst, length = _FRAME.unpack_from(frame)
    if len(frame) - FRAME_HEADER != length:
        raise DecodeError(f"frame body length {len(frame) - FRAME_HEADER} != header {length}")
    try:
        service = Service(service)
    except ValueError:
        raise DecodeError(f"unknown service tag {service}") from None
    return Envelope(service, src, dst, frame[FRAME_HEADER:])


class _Closed:
    def __repr__(self) -> str:
        return "CLOSED"


#: Returned by :meth:`Transport.recv` once the participant is killed or shut down.
CLOSED = _Closed()


@dataclass
class WorkerHandle:
    rank: int
    alive: bool = True


class Transport:
    def __init__(self, n_workers: int, death_body=None):
        if n_workers < 1:
            raise UsageError("n_workers must be >= 1")
        self.n_workers = n_workers
        self._lock = threading.Lock()
        self._handles = {r: WorkerHandle(r) for r in range(n_workers)}
        self._handles[DRIVER] = WorkerHandle(DRIVER)
        self._queues: dict[tuple[int, Service], queue.SimpleQueue] = {
            (r, s): queue.SimpleQueue() for r in self._handles for s in Service
        }
        self._inflight: Counter[int] = Counter()
        self._closed = False
        # body factory for death notices; set by the runtime so this layer
        # stays ignorant of message kinds
        self._death_body = death_body or (lambda rank: struct.pack("<Bi", 0xFF, rank))
        self.bytes_sent: Counter[Service] = Counter()
        self.messages_sent: Counter[Service] = Counter()

    # -- membership -------------------------------------------------------

    def handles(self) -> list[WorkerHandle]:
        return [self._handles[r] for r in range(self.n_workers)]

    def is_alive(self, rank: int) -> bool:
        h = self._handles.get(rank)
        return h is not None and h.alive

    def alive_workers(self) -> list[int]:
        return [r for r in range(self.n_workers) if self._handles[r].alive]

    def kill(self, rank: int) -> None:
        """Crash a worker: drop its queued traffic and notify everyone else.

        The death notice goes to the chunk and scheduler queues of every
        survivor and of the driver.
        """
        with self._lock:
            h = self._handles.get(rank)
            if h is None or rank == DRIVER:
                raise UsageError(f"unknown worker rank {rank}")
            if not h.alive:
                raise UsageError(f"worker {rank} is already dead")
            h.alive = False
            for s in Service:
                q = self._queues[(rank, s)]
                while True:
                    try:
                        q.get_nowait()
                    except queue.Empty:
                        break
                q.put(CLOSED)
            self._inflight.pop(rank, None)
            body = self._death_body(rank)
            for r, other in self._handles.items():
                if other.alive:
                    for s in (Service.CHUNK, Service.SCHEDULER):
                        self._enqueue(Envelope(s, rank, r, body))

    def close(self) -> None:
        with self._lock:
            self._closed = True
            for q in self._queues.values():
                q.put(CLOSED)

    # -- traffic ----------------------------------------------------------

    def _enqueue(self, env: Envelope) -> None:
        frame = encode_frame(env)
        self._queues[(env.destination, env.service)].put((frame, env.tracked))
        self.bytes_sent[env.service] += len(frame)
        self.messages_sent[env.service] += 1
        if env.tracked:
            self._inflight[env.destination] += 1

    def _check(self, env: Envelope) -> bool:
        src = self._handles.get(env.source)
        if src is None:
            raise UsageError(f"unknown source rank {env.source}")
        if not src.alive:
            # a crashed worker's output never reaches anybody
            return False
        dst = self._handles.get(env.destination)
        if dst is None:
            raise UsageError(f"unknown destination rank {env.destination}")
        if not dst.alive:
            raise DestinationDeadError(env.destination)
        return True

    def send(self, env: Envelope) -> bool:
        """Queue ``env``; False if the sender itself is dead (message dropped)."""
        with self._lock:
            if self._closed:
                return False
            if not self._check(env):
                return False
            self._enqueue(env)
            return True

    def send_many(self, envs: list[Envelope]) -> list[Envelope]:
        """Send a batch atomically with respect to :meth:`kill`.

        Returns the envelopes whose destination was dead; the rest are queued.
        """
        failed = []
        with self._lock:
            if self._closed:
                return list(envs)
            ok = []
            for env in envs:
                try:
                    if self._check(env):
                        ok.append(env)
                except DestinationDeadError:
                    failed.append(env)
            for env in ok:
                self._enqueue(env)
        return failed

    def recv(self, rank: int, service: Service, timeout: float | None = None):
        """Next envelope for (rank, service), None on timeout, or CLOSED."""
        q = self._queues[(rank, service)]
        try:
            item = q.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is CLOSED:
            q.put(CLOSED)
            return CLOSED
        if not self._handles[rank].alive:
            return CLOSED
        frame, tracked = item
        env = decode_frame(frame)
        if not tracked:
            env = Envelope(env.service, env.source, env.destination, env.body, False)
        return env

    def done(self, env: Envelope) -> None:
        """Mark a received tracked envelope as fully handled."""
        if env.tracked:
            with self._lock:
                if self._handles[env.destination].alive:
                    self._inflight[env.destination] -= 1

    def inflight(self) -> int:
        with self._lock:
            return sum(n for r, n in self._inflight.items() if self._handles[r].alive)

    def queue_depth(self, rank: int, service: Service) -> int:
        return self._queues[(rank, service)].qsize()
