"""Driver-side API: a serial main program talking to in-process workers.

The driver is not a worker. It places chunks it registers round-robin on
the workers, sends the mother task to worker 0 and waits for the final
chunk id of the task hierarchy.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import wire
from .chunk_service import ChunkService, _Pending
from .core import Chunk, Task, TypeRegistry, get_child_chunks, serialize_chunk
from .errors import (
    ChtError,
    DanglingIdError,
    DataLossError,
    DestinationDeadError,
    TaskFailedError,
    UsageError,
)
from .events import EventLog
from .ids import CHUNK_ID_NULL, ChunkId, IdMinter
from .resilience import FaultInjector
from .transport import CLOSED, DRIVER, Envelope, Service, Transport
from .wire import FaultKind, Kind, Status, StealWire, Target
from .worker import Worker, spawn_workers

log = logging.getLogger(__name__)


def default_executors() -> int:
    try:
        cores = len(os.sched_getaffinity(0))
    except AttributeError:
        cores = os.cpu_count() or 1
    # one core each for the listener and the prefetcher
    return max(1, cores - 2)


@dataclass
class Config:
    n_workers: int = 4
    executors: int | None = None
    cache_bytes: int | None = 64 * 1024 * 1024
    seed: int | None = None
    replication_factor: int = 1
    event_log: bool = False
    event_log_path: str | Path | None = None
    timeout: float | None = 600.0

    def __post_init__(self) -> None:
        if self.n_workers < 1:
            raise UsageError("n_workers must be >= 1")
        if self.executors is None:
            self.executors = default_executors()
        if self.executors < 1:
            raise UsageError("executors must be >= 1")
        if self.replication_factor < 1:
            raise UsageError("replication_factor must be >= 1")
        if self.event_log_path is not None:
            self.event_log = True


@dataclass
class RunStats:
    executed: list[int]
    registered: int
    commits: int
    discards: int
    reexecutions: int
    mother_tasks: int
    steals_attempted: int
    steals_succeeded: int
    bytes_per_service: dict[str, int]
    messages_per_service: dict[str, int]
    get_requests: int
    cache_hits: int
    cache_misses: int
    leaks: list[tuple[ChunkId, int]]
    faults: list[tuple[FaultKind, str]] = field(default_factory=list)
    killed: list[int] = field(default_factory=list)

    @property
    def tasks(self) -> int:
        return sum(self.executed)

    @property
    def bytes_moved(self) -> int:
        return sum(self.bytes_per_service.values())

    @property
    def cache_hit_rate(self) -> float:
        total = self.cache_hits + self.cache_misses
        return self.cache_hits / total if total else 0.0

    @property
    def conservation_ok(self) -> bool:
        """Every execution is accounted for by a registration, a speculative
        discard or a re-execution. Only meaningful for fault-free runs."""
        return self.tasks == self.registered + self.mother_tasks + self.discards + self.reexecutions


class DriverChunks(ChunkService):
    """Chunk-service client for the driver; it never stores anything."""

    def __init__(self, transport: Transport, registry: TypeRegistry, replication_factor: int):
        super().__init__(DRIVER, transport, registry, IdMinter(0), cache_bytes=0, replication_factor=replication_factor)
        self._rr = 0

    def _request(self, kind: Kind, dest: int, owner: int, make_body, timeout: float | None):
        done = threading.Event()
        box: list = [None, None]

        def cb(payload, err):
            box[0], box[1] = payload, err
            done.set()

        with self._lock:
            req = next(self._req)
            self._pending[req] = _Pending(kind, dest, owner, make_body(req), [cb])
        self._dispatch(req)
        if not done.wait(timeout):
            with self._lock:
                self._pending.pop(req, None)
            raise TimeoutError(f"{kind.name} to worker {dest} timed out")
        if box[1] is not None:
            raise box[1]
        return box[0]

    def _dispatch(self, req: int) -> None:
        with self._lock:
            p = self._pending.get(req)
        if p is None:
            return
        if p.kind in (Kind.PUT, Kind.LEAK_REQ):
            # bound to one worker; no replica can stand in
            try:
                self._send(p.dest, p.body)
            except DestinationDeadError as exc:
                if p.kind == Kind.LEAK_REQ:
                    self._complete(req, [])
                else:
                    self._fail(req, exc)
            return
        super()._dispatch(req)

    def put(self, chunk: Chunk, timeout: float | None) -> ChunkId:
        type_id = self.registry.chunk_type_id(type(chunk))
        payload = serialize_chunk(chunk)
        for _ in range(self.transport.n_workers):
            alive = self.transport.alive_workers()
            if not alive:
                break
            dest = alive[self._rr % len(alive)]
            self._rr += 1
            cid = self.minter.chunk_id(dest, type_id, len(payload))
            try:
                self._request(
                    Kind.PUT, dest, dest, lambda req: wire.req_id_payload(Kind.PUT, req, cid, payload), timeout
                )
            except DestinationDeadError:
                continue
            return cid
        raise DataLossError("no live worker to store the chunk")

    def delete_sync(self, cid: ChunkId, timeout: float | None) -> None:
        if cid.is_null:
            return
        dest = self._route(cid.owner_rank)
        if dest is None:
            return
        self._request(Kind.DELETE, dest, cid.owner_rank, lambda req: wire.req_id(Kind.DELETE, req, cid), timeout)

    def leaks(self, rank: int, timeout: float | None) -> list[ChunkId]:
        return self._request(
            Kind.LEAK_REQ, rank, rank, lambda req: wire.req_id(Kind.LEAK_REQ, req, CHUNK_ID_NULL), timeout
        )

    def handle(self, env: Envelope) -> None:
        kind = wire.kind_of(env.body)
        if kind in (Kind.PUT_ACK, Kind.DELETE_ACK):
            req, status, _ = wire.parse_status_reply(env.body)
            if status == Status.OK:
                self._complete(req, None)
            else:
                what = "store" if kind == Kind.PUT_ACK else "delete"
                self._fail(req, DanglingIdError(f"worker {env.source} refused {what} request"))
        elif kind == Kind.LEAK_REPLY:
            req, ids = wire.parse_leak_reply(env.body)
            self._complete(req, ids)
        else:
            super().handle(env)


class Runtime:
    """Start/stop, driver chunk calls and mother-task execution.

    Usage mirrors a serial main program::

        rt = Runtime(Config(n_workers=4))
        rt.register(CInt, Fibonacci, Add)
        rt.start()
        cid_n = rt.register_chunk(CInt(13))
        cid_result = rt.execute_mother_task(Fibonacci, cid_n)
        value = rt.get_chunk(cid_result).x
        rt.delete_chunk(cid_n); rt.delete_chunk(cid_result)
        stats = rt.stop()
    """

    def __init__(self, config: Config | None = None, registry: TypeRegistry | None = None, **overrides: Any):
        if config is None:
            config = Config(**overrides)
        elif overrides:
            raise UsageError("pass either a Config or keyword overrides, not both")
        self.config = config
        self.registry = registry or TypeRegistry()
        self.events: EventLog | None = EventLog(config.event_log_path) if config.event_log else None
        self.transport: Transport | None = None
        self.workers: list[Worker] = []
        self.injector: FaultInjector | None = None
        self._client: DriverChunks | None = None
        self._state = "new"
        self._threads: list[threading.Thread] = []
        self._cv = threading.Condition()
        self._faults: list[tuple[FaultKind, str]] = []
        self._killed: list[int] = []
        self._mother: StealWire | None = None
        self._mother_location: int | None = None
        self._mother_result: ChunkId | None = None
        self._mothers_sent = 0

    # -- types ------------------------------------------------------------------

    def register(self, *classes: type) -> None:
        for cls in classes:
            if isinstance(cls, type) and issubclass(cls, Chunk):
                self.registry.register_chunk_type(cls)
            elif isinstance(cls, type) and issubclass(cls, Task):
                self.registry.register_task_type(cls)
            else:
                raise UsageError(f"{cls!r} is neither a Chunk nor a Task type")

    # -- lifecycle ----------------------------------------------------------------

    @property
    def started(self) -> bool:
        return self._state == "running"

    def _require_running(self) -> None:
        if self._state != "running":
            raise UsageError("runtime is not started")

    def start(self) -> Runtime:
        if self._state != "new":
            raise UsageError("runtime already started" if self._state == "running" else "runtime was stopped")
        cfg = self.config
        self.registry.freeze()
        self.transport = Transport(cfg.n_workers, death_body=wire.death)
        self.injector = FaultInjector(self.kill_worker)
        self.workers = spawn_workers(
            cfg.n_workers,
            self.transport,
            self.registry,
            n_executors=cfg.executors,
            cache_bytes=cfg.cache_bytes,
            replication_factor=cfg.replication_factor,
            seed=cfg.seed,
            events=self.events,
            on_commit=self.injector.on_commit,
        )
        self._client = DriverChunks(self.transport, self.registry, cfg.replication_factor)
        self._client.start()
        for target, name in ((self._listen_scheduler, "driver-sched"), (self._listen_control, "driver-control")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        self._state = "running"
        return self

    def stop(self) -> RunStats:
        if self._state != "running":
            raise UsageError("stop called on a runtime that is not running")
        if self._mother is not None:
            raise UsageError("stop called while a mother task is in flight")
        self.wait_quiescent()
        leaks = self.leak_report()
        for w in self.workers:
            w.halt()
        self.transport.close()
        for w in self.workers:
            if w.alive:
                w.join(5.0)
        self._client.join(5.0)
        for t in self._threads:
            t.join(5.0)
        self._state = "stopped"
        if self.events is not None:
            self.events.flush()
        return self._stats(leaks)

    def __enter__(self) -> Runtime:
        if self._state == "new":
            self.start()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._state != "running":
            return
        if exc_type is not None:
            self._abort()
            return
        self.stats = self.stop()

    def _abort(self) -> None:
        """Tear down without the drain and leak audit (after a fault)."""
        for w in self.workers:
            w.halt()
        self.transport.close()
        self._state = "stopped"
        if self.events is not None:
            self.events.flush()

    def _stats(self, leaks: list[tuple[ChunkId, int]]) -> RunStats:
        s = [w.scheduler.stats for w in self.workers]
        return RunStats(
            executed=[x.executed for x in s],
            registered=sum(x.registered for x in s),
            commits=sum(x.commits for x in s),
            discards=sum(x.discards for x in s),
            reexecutions=sum(x.reexecutions for x in s),
            mother_tasks=self._mothers_sent,
            steals_attempted=sum(x.steals_attempted for x in s),
            steals_succeeded=sum(x.steals_succeeded for x in s),
            bytes_per_service={k.name: v for k, v in self.transport.bytes_sent.items()},
            messages_per_service={k.name: v for k, v in self.transport.messages_sent.items()},
            get_requests=sum(w.chunks.get_requests_sent for w in self.workers),
            cache_hits=sum(w.chunks.cache.hits for w in self.workers),
            cache_misses=sum(w.chunks.cache.misses for w in self.workers),
            leaks=leaks,
            faults=list(self._faults),
            killed=list(self._killed),
        )

    # -- driver chunk API ------------------------------------------------------------

    def register_chunk(self, chunk: Chunk) -> ChunkId:
        self._require_running()
        if not isinstance(chunk, Chunk):
            raise UsageError(f"register_chunk needs a Chunk, got {type(chunk).__name__}")
        for child in get_child_chunks(chunk):
            if not isinstance(child, ChunkId):
                raise UsageError(f"child {child!r} is not a chunk id")
        return self._client.put(chunk, self.config.timeout)

    def get_payload(self, cid: ChunkId) -> bytes:
        self._require_running()
        if not isinstance(cid, ChunkId):
            raise UsageError(f"get_chunk needs a chunk id, got {cid!r}")
        return self._client.get_chunk(cid, self.config.timeout)

    def get_chunk(self, cid: ChunkId) -> Chunk:
        payload = self.get_payload(cid)
        return self.registry.chunk_type(cid.chunk_type_id).deserialize(payload)

    def copy_chunk(self, cid: ChunkId) -> ChunkId:
        self._require_running()
        return self._client.copy_chunk(cid, self.config.timeout)

    def delete_chunk(self, cid: ChunkId) -> None:
        self._require_running()
        if not isinstance(cid, ChunkId):
            raise UsageError(f"delete_chunk needs a chunk id, got {cid!r}")
        self._client.delete_sync(cid, self.config.timeout)

    # -- mother task -----------------------------------------------------------------

    def execute_mother_task(self, task_type: type[Task], *inputs: ChunkId, timeout: float | None = None) -> ChunkId:
        """Run ``task_type`` on ``inputs`` and return the final output chunk id."""
        self._require_running()
        if self._mother is not None:
            raise UsageError("a mother task is already running")
        self._check_faults()
        type_id = self.registry.task_type_id(task_type)
        desc = self.registry.task_type(type_id)
        if len(inputs) != len(desc.input_types):
            raise UsageError(f"{desc.name} takes {len(desc.input_types)} inputs, got {len(inputs)}")
        for pos, (cid, expected) in enumerate(zip(inputs, desc.input_types)):
            if not isinstance(cid, ChunkId):
                raise UsageError(f"mother task input {pos} must be a chunk id, got {cid!r}")
            if not cid.is_null and not issubclass(self.registry.chunk_type(cid.chunk_type_id).cls, expected):
                raise UsageError(f"mother task input {pos} expects {expected.__qualname__}")
        tid = self._client.minter.task_id(0, type_id)
        mother = StealWire(tid, 0, list(inputs), [Target(DRIVER, 0, 0)])
        with self._cv:
            self._mother = mother
            self._mother_result = None
        self._send_mother()
        timeout = self.config.timeout if timeout is None else timeout
        deadline = None if timeout is None else time.monotonic() + timeout
        try:
            with self._cv:
                while self._mother_result is None and not self._fatal():
                    left = None if deadline is None else deadline - time.monotonic()
                    if left is not None and left <= 0:
                        raise TimeoutError(f"mother task {desc.name} did not finish in {timeout} s")
                    self._cv.wait(left)
                result = self._mother_result
        finally:
            with self._cv:
                self._mother = None
        self._check_faults()
        return result

    def _send_mother(self) -> None:
        while True:
            with self._cv:
                mother = self._mother
                if mother is None or self._mother_result is not None:
                    return
                alive = self.transport.alive_workers()
                if not alive:
                    self._faults.append((FaultKind.DATA_LOSS, "every worker is dead"))
                    self._cv.notify_all()
                    return
                dest = 0 if 0 in alive else alive[0]
                self._mother_location = dest
                self._mothers_sent += 1
            try:
                self.transport.send(Envelope(Service.SCHEDULER, DRIVER, dest, wire.mother_task(mother)))
                return
            except DestinationDeadError:
                continue

    # -- faults ----------------------------------------------------------------------

    def _fatal(self) -> bool:
        for kind, _ in self._faults:
            if kind != FaultKind.DANGLING or not self._killed:
                return True
        return False

    def _check_faults(self) -> None:
        with self._cv:
            fatal = [(k, m) for k, m in self._faults if k != FaultKind.DANGLING or not self._killed]
        if not fatal:
            return
        kind, msg = fatal[0]
        err = {
            FaultKind.DATA_LOSS: DataLossError,
            FaultKind.DANGLING: DanglingIdError,
            FaultKind.TASK_FAILED: TaskFailedError,
            FaultKind.USAGE: UsageError,
        }.get(kind, ChtError)
        raise err(msg)

    @property
    def faults(self) -> list[tuple[FaultKind, str]]:
        return list(self._faults)

    def kill_worker(self, rank: int) -> None:
        """Crash worker ``rank`` (fault injection)."""
        self._require_running()
        self.transport.kill(rank)
        self._killed.append(rank)
        self.workers[rank].halt()

    def kill_after(self, n_commits: int, rank: int) -> None:
        """Crash worker ``rank`` once ``n_commits`` task commits have happened."""
        self._require_running()
        if not 0 <= rank < self.config.n_workers:
            raise UsageError(f"unknown worker rank {rank}")
        self.injector.kill_after(n_commits, rank)

    # -- audit -------------------------------------------------------------------------

    def wait_quiescent(self, timeout: float = 30.0) -> bool:
        """Wait until no tracked message is in flight and every scheduler is idle."""
        deadline = time.monotonic() + timeout
        calm = 0
        while time.monotonic() < deadline:
            busy = self.transport.inflight() or any(
                w.alive and not w.scheduler.idle() for w in self.workers
            )
            calm = 0 if busy else calm + 1
            if calm >= 3:
                return True
            time.sleep(0.002)
        log.warning("runtime did not become quiescent within %.1f s", timeout)
        return False

    def leak_report(self) -> list[tuple[ChunkId, int]]:
        """Every chunk still stored by a live worker, as (id, size)."""
        self._require_running()
        self.wait_quiescent()
        out = []
        for rank in self.transport.alive_workers():
            out.extend((cid, cid.size_bytes) for cid in self._client.leaks(rank, self.config.timeout))
        return out

    # -- driver listeners ---------------------------------------------------------------

    def _listen_scheduler(self) -> None:
        while True:
            env = self.transport.recv(DRIVER, Service.SCHEDULER)
            if env is CLOSED:
                return
            try:
                self._on_scheduler(env)
            except Exception:
                log.exception("driver failed on scheduler message")
            finally:
                self.transport.done(env)

    def _on_scheduler(self, env: Envelope) -> None:
        kind = wire.kind_of(env.body)
        if kind == Kind.TASK_DONE:
            _, _, owner, cid = wire.parse_task_done(env.body)
            with self._cv:
                first = self._mother is not None and self._mother_result is None
                if first:
                    self._mother_result = cid
                    self._cv.notify_all()
            if not first and owner:
                log.info("driver dropping duplicate mother result %r", cid)
                self._client.delete_chunk(cid)
        elif kind == Kind.FORWARD:
            _, _, _, new = wire.parse_forward(env.body)
            with self._cv:
                self._mother_location = new
            if not self.transport.is_alive(new):
                self._send_mother()
        elif kind == Kind.DEATH:
            dead = wire.parse_death(env.body)
            with self._cv:
                lost = self._mother is not None and self._mother_result is None and self._mother_location == dead
            if lost:
                log.info("mother task was on dead worker %d; sending it again", dead)
                self._send_mother()

    def _listen_control(self) -> None:
        while True:
            env = self.transport.recv(DRIVER, Service.CONTROL)
            if env is CLOSED:
                return
            try:
                if wire.kind_of(env.body) == Kind.FAULT:
                    kind, msg = wire.parse_fault(env.body)
                    with self._cv:
                        self._faults.append((kind, msg))
                        self._cv.notify_all()
            finally:
                self.transport.done(env)


def run_mother_task(task_type: type[Task], *chunks: Chunk, types: tuple[type, ...] = (), **config: Any):
    """Convenience wrapper: start, register ``chunks``, run, fetch, clean up.

    Returns (output chunk object, RunStats).
    """
    rt = Runtime(Config(**config))
    rt.register(*types)
    rt.start()
    try:
        ids = [rt.register_chunk(c) for c in chunks]
        out = rt.execute_mother_task(task_type, *ids)
        value = None if out.is_null else rt.get_chunk(out)
        for cid in ids + [out]:
            rt.delete_chunk(cid)
    except BaseException:
        rt._abort()
        raise
    return value, rt.stop()
