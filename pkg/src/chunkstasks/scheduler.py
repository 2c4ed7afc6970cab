"""Per-worker task scheduling.

Tasks wait in a local pool until their inputs are fetched, run on executor
threads, and have their effects (registered chunks, copies, child tasks)
buffered in a :class:`Transaction` that is applied in one commit. Leaf
transactions commit right after execute; non-leaf ones commit one at a time
and may be stolen (and their speculative result discarded) while they wait.

Each non-leaf commit creates a :class:`Group` on the committing worker. The
group is the fixed rendezvous for its child tasks: every child notifies its
slot when its final chunk id is known, siblings waiting on that output are
activated there, and temporaries are reclaimed once their consumers resolve.
Children wait in the group until their inputs are all chunk ids; only then
do they enter the pool and become stealable.
"""

from __future__ import annotations

import itertools
import logging
import queue
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable

from . import wire
from .core import Chunk, Task, TaskTypeDescriptor, TypeRegistry, get_child_chunks, serialize_chunk
from .errors import DanglingIdError, DataLossError, DestinationDeadError, RegistryError, UsageError
from .events import EventLog
from .ids import CHUNK_ID_NULL, ChunkId, GenericId, IdMinter, TaskId
from .transport import CLOSED, Envelope, Service, Transport
from .wire import Kind, StealWire, Target

if TYPE_CHECKING:
    from .chunk_service import ChunkService

log = logging.getLogger(__name__)

#: Initial steal backoff; also the bound used for "commits immediately".
SCHEDULER_TICK = 0.001
STEAL_BACKOFF_MAX = 0.032


class TaskState(Enum):
    WAITING_ON_INPUTS = "waiting"
    READY_FETCHING = "fetching"
    READY_FETCHED = "fetched"
    EXECUTING = "executing"
    EXECUTED_PENDING_COMMIT = "pending_commit"
    COMMITTED = "committed"


_seq = itertools.count()


@dataclass(eq=False)
class TaskRecord:
    task_id: TaskId
    desc: TaskTypeDescriptor
    inputs: list[GenericId]
    depth: int
    targets: list[Target]
    persistent: bool = False
    state: TaskState = TaskState.READY_FETCHING
    seq: int = field(default_factory=lambda: next(_seq))
    payloads: list[bytes | None] = field(default_factory=list)
    missing: int = 0
    txn: Transaction | None = None

    def wire(self) -> StealWire:
        return StealWire(self.task_id, self.depth, list(self.inputs), list(self.targets), self.persistent)

    @classmethod
    def from_wire(cls, w: StealWire, registry: TypeRegistry) -> TaskRecord:
        desc = registry.task_type(w.task_id.task_type_id)
        return cls(w.task_id, desc, list(w.inputs), w.depth, list(w.targets), w.persistent)


@dataclass
class ChildSpec:
    task_id: TaskId
    desc: TaskTypeDescriptor
    inputs: list[GenericId]
    persistent: bool


def _compatible(produced: type, expected: type) -> bool:
    return issubclass(produced, expected)


class Transaction:
    """Buffered effect of one task execution.

    Ids are minted immediately (chunk ids owned by the executing worker), so
    nothing needs remapping at commit. Nothing becomes visible to the rest of
    the runtime until :meth:`Scheduler.commit` applies the transaction.
    """

    def __init__(self, rank: int, minter: IdMinter, registry: TypeRegistry, record: TaskRecord | None = None):
        self.rank = rank
        self.minter = minter
        self.registry = registry
        self.record = record
        self.input_objects: list[Any] = []
        self.chunks: list[tuple[ChunkId, bytes, list[ChunkId], bool]] = []
        self.copies: list[tuple[ChunkId, ChunkId]] = []
        self.tasks: list[ChildSpec] = []
        self._task_index: dict[TaskId, int] = {}
        self._chunk_ids: set[ChunkId] = set()
        self._copy_ids: set[ChunkId] = set()
        self.output: GenericId | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.tasks

    def task_index(self, tid: TaskId) -> int:
        return self._task_index[tid]

    def register_chunk(self, chunk: Chunk, persistent: bool = False) -> ChunkId:
        if not isinstance(chunk, Chunk):
            raise UsageError(f"register_chunk needs a Chunk, got {type(chunk).__name__}")
        type_id = self.registry.chunk_type_id(type(chunk))
        payload = serialize_chunk(chunk)
        cid = self.minter.chunk_id(self.rank, type_id, len(payload))
        self.chunks.append((cid, payload, get_child_chunks(chunk), persistent))
        self._chunk_ids.add(cid)
        return cid

    def copy_chunk(self, cid: ChunkId) -> ChunkId:
        if not isinstance(cid, ChunkId):
            raise UsageError(f"copy_chunk needs a chunk id, got {cid!r}")
        if cid.is_null:
            return CHUNK_ID_NULL
        new = self.minter.chunk_id(cid.owner_rank, cid.chunk_type_id, cid.size_bytes)
        self.copies.append((cid, new))
        self._copy_ids.add(new)
        return new

    def register_task(self, task_type: type[Task], inputs, persistent: bool = False) -> TaskId:
        try:
            type_id = self.registry.task_type_id(task_type)
        except RegistryError as exc:
            raise UsageError(str(exc)) from None
        desc = self.registry.task_type(type_id)
        inputs = list(inputs)
        if len(inputs) != len(desc.input_types):
            raise UsageError(f"{desc.name} takes {len(desc.input_types)} inputs, got {len(inputs)}")
        for pos, (inp, expected) in enumerate(zip(inputs, desc.input_types)):
            if isinstance(inp, ChunkId):
                if inp.is_null:
                    continue
                produced = self.registry.chunk_type(inp.chunk_type_id).cls
            elif isinstance(inp, TaskId):
                idx = self._task_index.get(inp)
                if idx is None:
                    raise UsageError(f"input {pos} of {desc.name}: {inp!r} was not registered by this task")
                produced = self.tasks[idx].desc.output_type
            else:
                raise UsageError(f"input {pos} of {desc.name} is not an identifier: {inp!r}")
            if not _compatible(produced, expected):
                raise UsageError(
                    f"input {pos} of {desc.name} expects {expected.__qualname__}, got {produced.__qualname__}"
                )
        tid = self.minter.task_id(self.rank, type_id)
        self._task_index[tid] = len(self.tasks)
        self.tasks.append(ChildSpec(tid, desc, inputs, persistent))
        return tid

    def input_chunk_id(self, which: Any) -> ChunkId:
        if self.record is None:
            raise UsageError("no inputs outside a task")
        if isinstance(which, int) and not isinstance(which, bool):
            return self.record.inputs[which]
        for k, obj in enumerate(self.input_objects):
            if obj is which and obj is not None:
                return self.record.inputs[k]
        raise UsageError("object is not an input of this task; pass its position instead")

    def set_output(self, out: Any, output_type: type) -> None:
        if isinstance(out, ChunkId):
            if not out.is_null:
                if out not in self._chunk_ids and out not in self._copy_ids:
                    raise UsageError(f"returned {out!r} was not registered or copied by this task")
                produced = self.registry.chunk_type(out.chunk_type_id).cls
                if not _compatible(produced, output_type):
                    raise UsageError(f"returned {produced.__qualname__}, declared {output_type.__qualname__}")
        elif isinstance(out, TaskId):
            idx = self._task_index.get(out)
            if idx is None:
                raise UsageError(f"returned {out!r} was not registered by this task")
            produced = self.tasks[idx].desc.output_type
            if not _compatible(produced, output_type):
                raise UsageError(f"returned task produces {produced.__qualname__}, declared {output_type.__qualname__}")
        else:
            raise UsageError(f"execute must return a chunk or task id, got {out!r}")
        self.output = out

    def temporaries(self) -> set[ChunkId]:
        """Registered or copied ids the runtime reclaims on its own.

        Persistent registrations, the output, and ids embedded in another
        chunk registered by this transaction are excluded.
        """
        embedded = {c for _, _, children, _ in self.chunks for c in children}
        temps = {cid for cid, _, _, persistent in self.chunks if not persistent}
        temps |= self._copy_ids
        temps.discard(self.output)
        return temps - embedded


@dataclass
class Member:
    spec: ChildSpec
    depth: int
    targets: list[Target]
    pending: int = 0
    location: int | None = None
    resolved: bool = False
    output: ChunkId | None = None
    owned: bool = False
    consumers: list[tuple[int, int]] = field(default_factory=list)
    producers: set[int] = field(default_factory=set)
    temps: set[ChunkId] = field(default_factory=set)
    consumers_left: int = 0

    def record(self) -> TaskRecord:
        s = self.spec
        return TaskRecord(s.task_id, s.desc, list(s.inputs), self.depth, list(self.targets), s.persistent)


@dataclass
class Group:
    gid: int
    parent: TaskId
    members: list[Member]
    temps_left: dict[ChunkId, int]
    unresolved: int


@dataclass
class SchedulerStats:
    executed: int = 0
    registered: int = 0
    commits: int = 0
    discards: int = 0
    reexecutions: int = 0
    steals_attempted: int = 0
    steals_succeeded: int = 0
    steals_served: int = 0


class Scheduler:
    def __init__(
        self,
        rank: int,
        transport: Transport,
        registry: TypeRegistry,
        chunks: ChunkService,
        minter: IdMinter,
        *,
        n_executors: int = 1,
        rng: random.Random | None = None,
        events: EventLog | None = None,
        on_commit: Callable[[], None] | None = None,
    ):
        self.rank = rank
        self.transport = transport
        self.registry = registry
        self.chunks = chunks
        self.minter = minter
        self.n_executors = max(1, n_executors)
        self.rng = rng or random.Random()
        self.events = events
        self.on_commit = on_commit
        self.stats = SchedulerStats()

        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self._pool: dict[TaskId, TaskRecord] = {}
        self._executing = 0
        self._commit_permit = threading.Lock()
        self._groups: dict[int, Group] = {}
        self._gids = itertools.count(1)
        self._prefetch_q: queue.SimpleQueue = queue.SimpleQueue()
        self._fetching: set[TaskRecord] = set()
        self._steal_outstanding: int | None = None
        self._backoff = SCHEDULER_TICK
        self._next_steal = 0.0
        self.halted = False
        self._threads: list[threading.Thread] = []

    # -- logging -------------------------------------------------------------

    def _emit(self, event: str, task_id=None, depth: int = -1, **detail) -> None:
        if self.events is not None:
            self.events.emit(self.rank, event, task_id, depth, **detail)

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        specs = [(self._listen, f"sched-{self.rank}"), (self._prefetch_loop, f"prefetch-{self.rank}")]
        specs += [(self._executor_loop, f"exec-{self.rank}.{k}") for k in range(self.n_executors)]
        for target, name in specs:
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)

    def halt(self) -> None:
        with self._cv:
            self.halted = True
            self._cv.notify_all()
        self._prefetch_q.put(None)

    def join(self, timeout: float | None = None) -> None:
        for t in self._threads:
            t.join(timeout)

    def idle(self) -> bool:
        with self._lock:
            return not self._pool and not self._executing and not self._groups and not self._fetching

    def pool_snapshot(self) -> list[TaskRecord]:
        with self._lock:
            return list(self._pool.values())

    # -- activation and prefetch -------------------------------------------------

    def activate(self, rec: TaskRecord) -> None:
        """Put a task with fully resolved inputs into the local pool."""
        if any(isinstance(i, TaskId) for i in rec.inputs):
            raise UsageError(f"{rec.task_id!r} activated with unresolved inputs")
        rec.payloads = [None] * len(rec.inputs)
        missing = 0
        for k, cid in enumerate(rec.inputs):
            if cid.is_null:
                continue
            payload = self.chunks.peek(cid)
            if payload is None:
                missing += 1
            else:
                rec.payloads[k] = payload
        rec.missing = missing
        with self._cv:
            if self.halted:
                return
            self._pool[rec.task_id] = rec
            self._emit("pool_add", rec.task_id, rec.depth)
            if missing:
                rec.state = TaskState.READY_FETCHING
                self._fetching.add(rec)
            else:
                rec.state = TaskState.READY_FETCHED
                self._cv.notify()
        if missing:
            self._prefetch_q.put(rec)

    def _prefetch_loop(self) -> None:
        while True:
            rec = self._prefetch_q.get()
            if rec is None or self.halted:
                return
            with self._lock:
                live = self._pool.get(rec.task_id) is rec and rec.state == TaskState.READY_FETCHING
                if not live:
                    self._fetching.discard(rec)
            if not live:
                continue
            for k, cid in enumerate(rec.inputs):
                if rec.payloads[k] is None and not cid.is_null:
                    self.chunks.fetch_async(cid, lambda p, e, rec=rec, k=k: self._fetched(rec, k, p, e))

    def _fetched(self, rec: TaskRecord, k: int, payload: bytes | None, err: Exception | None) -> None:
        if err is not None:
            with self._lock:
                live = self._pool.get(rec.task_id) is rec and rec.state == TaskState.READY_FETCHING
                if not live:
                    self._fetching.discard(rec)
            if not live:
                # stolen while fetching; the new holder may already have run it
                # and released the inputs
                return
            if isinstance(err, DataLossError):
                kind = wire.FaultKind.DATA_LOSS
            elif isinstance(err, DanglingIdError):
                kind = wire.FaultKind.DANGLING
            else:
                kind = wire.FaultKind.USAGE
            self.chunks.report_fault(kind, f"input {k} of {rec.desc.name} {rec.task_id!r}: {err}")
            return
        with self._cv:
            if rec.payloads[k] is not None or rec.state != TaskState.READY_FETCHING:
                return
            rec.payloads[k] = payload
            rec.missing -= 1
            if rec.missing == 0:
                self._fetching.discard(rec)
                if self._pool.get(rec.task_id) is rec:
                    rec.state = TaskState.READY_FETCHED
                    self._cv.notify()

    # -- execution ---------------------------------------------------------------

    def _pick(self) -> TaskRecord | None:
        best = None
        for rec in self._pool.values():
            if rec.state is not TaskState.READY_FETCHED:
                continue
            # depth first locally: deepest, newest
            if best is None or (rec.depth, rec.seq) > (best.depth, best.seq):
                best = rec
        return best

    def _executor_loop(self) -> None:
        while True:
            with self._cv:
                rec = None
                while not self.halted:
                    rec = self._pick()
                    if rec is not None:
                        break
                    self._cv.wait()
                if self.halted:
                    return
                del self._pool[rec.task_id]
                self._emit("pool_remove", rec.task_id, rec.depth)
                rec.state = TaskState.EXECUTING
                self._executing += 1
            try:
                self._run(rec)
            except Exception as exc:  # never let an executor die silently
                log.exception("worker %d executor crashed", self.rank)
                self.chunks.report_fault(wire.FaultKind.TASK_FAILED, f"{rec.desc.name}: {exc!r}")
            finally:
                with self._lock:
                    self._executing -= 1

    def execute(self, rec: TaskRecord) -> Transaction:
        """Run the user hook on fetched inputs and return the buffered transaction."""
        txn = Transaction(self.rank, self.minter, self.registry, rec)
        objs = []
        for cid, payload in zip(rec.inputs, rec.payloads):
            if cid.is_null:
                objs.append(None)
            else:
                objs.append(self.registry.chunk_type(cid.chunk_type_id).deserialize(payload))
        txn.input_objects = objs
        task = rec.desc.cls.__new__(rec.desc.cls)
        task._txn = txn
        out = task.execute(*objs)
        txn.set_output(out, rec.desc.output_type)
        return txn

    def _run(self, rec: TaskRecord) -> None:
        self._emit(
            "execute_start",
            rec.task_id,
            rec.depth,
            type=rec.desc.name,
            inputs="/".join("null" if c.is_null else self.registry.chunk_type(c.chunk_type_id).name for c in rec.inputs),
        )
        try:
            txn = self.execute(rec)
        except Exception as exc:
            self._emit("execute_failed", rec.task_id, rec.depth, error=type(exc).__name__)
            kind = wire.FaultKind.USAGE if isinstance(exc, UsageError) else wire.FaultKind.TASK_FAILED
            self.chunks.report_fault(kind, f"{rec.desc.name} {rec.task_id!r} raised {type(exc).__name__}: {exc}")
            return
        self._emit("execute_end", rec.task_id, rec.depth, leaf=txn.is_leaf)
        with self._lock:
            self.stats.executed += 1
        if self.halted:
            return
        if txn.is_leaf:
            self.commit(rec, txn)
            return
        with self._cv:
            rec.state = TaskState.EXECUTED_PENDING_COMMIT
            rec.txn = txn
            self._pool[rec.task_id] = rec
            self._emit("pool_add", rec.task_id, rec.depth, executed=True)
        with self._commit_permit:
            with self._lock:
                if self._pool.get(rec.task_id) is not rec:
                    return  # stolen; the thief re-executes it
                del self._pool[rec.task_id]
                self._emit("pool_remove", rec.task_id, rec.depth)
            if not self.halted:
                self.commit(rec, txn)

    # -- commit ----------------------------------------------------------------------

    def commit(self, rec: TaskRecord, txn: Transaction) -> None:
        leaf = txn.is_leaf
        self._emit("commit_start", rec.task_id, rec.depth, leaf=leaf)
        for cid, payload, children, _ in txn.chunks:
            self.chunks.insert(cid, payload, children)
        for src, new in txn.copies:
            self.chunks.apply_copy(src, new)
        temps = txn.temporaries()
        out = txn.output
        doomed: list[ChunkId] = []
        if txn.tasks:
            doomed = self._open_group(rec, txn, temps)
        else:
            doomed = list(temps)
        if isinstance(out, ChunkId):
            self._notify(rec.targets, out)
        for cid in doomed:
            self.chunks.delete_chunk(cid)
        rec.state = TaskState.COMMITTED
        with self._lock:
            self.stats.commits += 1
            self.stats.registered += len(txn.tasks)
        self._emit("commit_end", rec.task_id, rec.depth, leaf=leaf, children=len(txn.tasks))
        if self.on_commit is not None:
            self.on_commit()

    def _open_group(self, rec: TaskRecord, txn: Transaction, temps: set[ChunkId]) -> list[ChunkId]:
        gid = next(self._gids)
        depth = rec.depth + 1
        members = [Member(spec, depth, [Target(self.rank, gid, k)]) for k, spec in enumerate(txn.tasks)]
        if isinstance(txn.output, TaskId):
            # continuation chaining: the returned child answers our own targets
            members[txn.task_index(txn.output)].targets.extend(rec.targets)
        temp_users: dict[ChunkId, set[int]] = {c: set() for c in temps}
        for k, spec in enumerate(txn.tasks):
            m = members[k]
            for slot, inp in enumerate(spec.inputs):
                if isinstance(inp, TaskId):
                    p = txn.task_index(inp)
                    members[p].consumers.append((k, slot))
                    m.producers.add(p)
                    m.pending += 1
                elif inp in temp_users:
                    temp_users[inp].add(k)
                    m.temps.add(inp)
        for m in members:
            m.consumers_left = len({j for j, _ in m.consumers})
        temps_left = {c: len(users) for c, users in temp_users.items() if users}
        doomed = [c for c, users in temp_users.items() if not users]
        group = Group(gid, rec.task_id, members, temps_left, len(members))
        ready = []
        with self._lock:
            self._groups[gid] = group
            for m in members:
                if m.pending == 0:
                    m.location = self.rank
                    ready.append(m.record())
        for r in ready:
            self.activate(r)
        return doomed

    def _notify(self, targets: list[Target], cid: ChunkId) -> None:
        last = len(targets) - 1
        envs = [
            Envelope(Service.SCHEDULER, self.rank, t.rank, wire.task_done(t, k == last, cid))
            for k, t in enumerate(targets)
        ]
        for env in self.transport.send_many(envs):
            log.info("worker %d: target %d is dead, dropping TASK_DONE", self.rank, env.destination)

    # -- group bookkeeping --------------------------------------------------------------

    def _task_done(self, gid: int, idx: int, owner: bool, cid: ChunkId) -> None:
        ready: list[TaskRecord] = []
        doomed: list[ChunkId] = []
        with self._lock:
            g = self._groups.get(gid)
            if g is None:
                if owner:
                    doomed.append(cid)
            else:
                m = g.members[idx]
                if m.resolved:
                    if owner and cid != m.output:
                        doomed.append(cid)  # duplicate from a re-executed task
                else:
                    self._resolve(g, idx, owner, cid, ready, doomed)
        for rec in ready:
            self.activate(rec)
        for c in doomed:
            self.chunks.delete_chunk(c)

    def _resolve(self, g: Group, idx: int, owner: bool, cid: ChunkId, ready: list, doomed: list) -> None:
        m = g.members[idx]
        m.resolved = True
        m.output = cid
        m.owned = owner
        g.unresolved -= 1
        self._emit("resolve", m.spec.task_id, m.depth, group=g.gid)
        for j, slot in m.consumers:
            mj = g.members[j]
            mj.spec.inputs[slot] = cid
            mj.pending -= 1
            if mj.pending == 0 and mj.location is None:
                mj.location = self.rank
                ready.append(mj.record())
        if owner and not m.consumers:
            doomed.append(cid)
        for p in m.producers:
            mp = g.members[p]
            mp.consumers_left -= 1
            if mp.consumers_left == 0 and mp.owned:
                doomed.append(mp.output)
        for c in m.temps:
            g.temps_left[c] -= 1
            if g.temps_left[c] == 0:
                doomed.append(c)
        if g.unresolved == 0:
            del self._groups[g.gid]

    # -- stealing ------------------------------------------------------------------------

    def _needs_work(self) -> bool:
        with self._lock:
            return not self._pool and self._executing < self.n_executors

    def _try_steal(self) -> None:
        victims = [r for r in self.transport.alive_workers() if r != self.rank]
        if not victims:
            return
        victim = self.rng.choice(victims)
        self.stats.steals_attempted += 1
        try:
            self.transport.send(Envelope(Service.SCHEDULER, self.rank, victim, wire.steal_req(), tracked=False))
        except DestinationDeadError:
            self._backoff = min(self._backoff * 2, STEAL_BACKOFF_MAX)
            return
        self._steal_outstanding = victim

    def steal_from_pool(self) -> TaskRecord | None:
        """Remove and return the pooled task highest in the task hierarchy."""
        with self._lock:
            if not self._pool:
                return None
            rec = min(self._pool.values(), key=lambda r: (r.depth, r.seq))
            del self._pool[rec.task_id]
            self._fetching.discard(rec)
            if rec.state is TaskState.EXECUTED_PENDING_COMMIT:
                # speculative result discarded; the thief starts over
                rec.txn = None
                self.stats.discards += 1
                self._emit("discard", rec.task_id, rec.depth)
            self.stats.steals_served += 1
            return rec

    def _serve_steal(self, thief: int) -> None:
        rec = self.steal_from_pool()
        if rec is None:
            try:
                self.transport.send(
                    Envelope(Service.SCHEDULER, self.rank, thief, wire.steal_reply(None), tracked=False)
                )
            except DestinationDeadError:
                pass
            return
        self._emit("steal", rec.task_id, rec.depth, thief=thief)
        home = rec.targets[0]
        envs = [
            Envelope(Service.SCHEDULER, self.rank, home.rank, wire.forward(home.group, home.index, self.rank, thief)),
            Envelope(Service.SCHEDULER, self.rank, thief, wire.steal_reply(rec.wire())),
        ]
        # atomic: the home learns the new location iff the thief gets the task
        self.transport.send_many(envs)

    # -- listener ------------------------------------------------------------------------

    def _listen(self) -> None:
        multi = self.transport.n_workers > 1
        while True:
            timeout = None
            if multi and self._steal_outstanding is None:
                if self._needs_work():
                    timeout = max(self._next_steal - time.monotonic(), SCHEDULER_TICK)
                else:
                    timeout = STEAL_BACKOFF_MAX / 4
            env = self.transport.recv(self.rank, Service.SCHEDULER, timeout)
            if env is CLOSED:
                return
            if env is not None:
                try:
                    self.handle(env)
                except Exception:
                    log.exception("worker %d scheduler failed on message", self.rank)
                finally:
                    self.transport.done(env)
            if (
                multi
                and not self.halted
                and self._steal_outstanding is None
                and time.monotonic() >= self._next_steal
                and self._needs_work()
            ):
                self._try_steal()
                self._next_steal = time.monotonic() + self._backoff

    def handle(self, env: Envelope) -> None:
        body = env.body
        kind = wire.kind_of(body)
        if kind == Kind.STEAL_REQ:
            self._serve_steal(env.source)
        elif kind == Kind.STEAL_REPLY:
            self._steal_outstanding = None
            w = wire.parse_steal_reply(body)
            if w is None:
                self._backoff = min(self._backoff * 2, STEAL_BACKOFF_MAX)
                return
            self._backoff = SCHEDULER_TICK
            self.stats.steals_succeeded += 1
            self.activate(TaskRecord.from_wire(w, self.registry))
        elif kind == Kind.TASK_DONE:
            gid, idx, owner, cid = wire.parse_task_done(body)
            self._task_done(gid, idx, owner, cid)
        elif kind == Kind.FORWARD:
            gid, idx, _old, new = wire.parse_forward(body)
            self._relocate(gid, idx, new)
        elif kind == Kind.MOTHER_TASK:
            self.activate(TaskRecord.from_wire(wire.parse_mother_task(body), self.registry))
        elif kind == Kind.DEATH:
            self.on_death(wire.parse_death(body))
        else:
            log.warning("worker %d scheduler ignoring %s", self.rank, kind.name)

    # -- recovery ------------------------------------------------------------------------

    def _relocate(self, gid: int, idx: int, new: int) -> None:
        with self._lock:
            g = self._groups.get(gid)
            if g is None or g.members[idx].resolved:
                return
            m = g.members[idx]
            m.location = new
            lost = not self.transport.is_alive(new)
            if lost:
                m.location = self.rank
                rec = m.record()
        if lost:
            self._reexecute(rec)

    def on_death(self, dead: int) -> None:
        """Re-create every task this worker is home for that was on ``dead``."""
        if self._steal_outstanding == dead:
            self._steal_outstanding = None
        redo = []
        with self._lock:
            for g in self._groups.values():
                for m in g.members:
                    if not m.resolved and m.location == dead:
                        m.location = self.rank
                        redo.append(m.record())
        for rec in redo:
            self._reexecute(rec)

    def _reexecute(self, rec: TaskRecord) -> None:
        with self._lock:
            self.stats.reexecutions += 1
        self._emit("reexecute", rec.task_id, rec.depth)
        self.activate(rec)
