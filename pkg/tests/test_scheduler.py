import threading
import time

import pytest

from chunkstasks import CHUNK_ID_NULL, TypeRegistry, events, wire
from chunkstasks.apps.fibonacci import TYPES as FIB_TYPES
from chunkstasks.apps.fibonacci import Add, CInt, Fibonacci
from chunkstasks.chunk_service import ChunkService
from chunkstasks.errors import DanglingIdError, UsageError
from chunkstasks.events import EventLog
from chunkstasks.ids import IdMinter, TaskId
from chunkstasks.scheduler import Scheduler, TaskRecord, TaskState, Transaction
from chunkstasks.transport import DRIVER, Transport
from chunkstasks.wire import Target


@pytest.fixture
def registry():
    reg = TypeRegistry()
    reg.register_chunk_type(CInt)
    reg.register_task_type(Fibonacci)
    reg.register_task_type(Add)
    reg.freeze()
    return reg


@pytest.fixture
def node(registry):
    """One worker's services, threads not started."""
    t = Transport(1, death_body=wire.death)
    minter = IdMinter(1)
    chunks = ChunkService(0, t, registry, minter)
    sched = Scheduler(0, t, registry, chunks, minter, events=EventLog())
    yield sched
    t.close()


def fib_record(sched, n, depth=0, targets=None):
    cid = sched.chunks.register_chunk(CInt(n))
    desc = sched.registry.task_type(sched.registry.task_type_id(Fibonacci))
    tid = sched.minter.task_id(0, desc.task_type_id)
    return TaskRecord(tid, desc, [cid], depth, targets or [Target(DRIVER, 0, 0)])


def test_transaction_checks(node, registry):
    txn = Transaction(0, node.minter, registry)
    c = txn.register_chunk(CInt(1))
    with pytest.raises(UsageError):
        txn.register_task(Add, [c])
    with pytest.raises(UsageError):
        txn.register_task(Fibonacci, [TaskId(5, 5, 0)])
    t1 = txn.register_task(Fibonacci, [c])
    t2 = txn.register_task(Fibonacci, [CHUNK_ID_NULL])
    txn.register_task(Add, [t1, t2])
    with pytest.raises(UsageError):
        txn.set_output(node.minter.chunk_id(0, 0, 4), CInt)
    with pytest.raises(UsageError):
        txn.set_output(42, CInt)
    txn.set_output(t1, CInt)
    assert not txn.is_leaf


def test_temporaries(node, registry):
    txn = Transaction(0, node.minter, registry)
    temp = txn.register_chunk(CInt(1))
    keep = txn.register_chunk(CInt(2), persistent=True)
    out = txn.register_chunk(CInt(3))
    copy = txn.copy_chunk(keep)
    txn.set_output(out, CInt)
    assert txn.temporaries() == {temp, copy}


def test_fetch_error_after_steal_is_ignored(node, monkeypatch):
    faults = []
    monkeypatch.setattr(node.chunks, "report_fault", lambda kind, msg: faults.append(kind))
    desc = node.registry.task_type(node.registry.task_type_id(Fibonacci))
    absent = node.minter.chunk_id(0, node.registry.chunk_type_id(CInt), 4)

    def fetching_record():
        rec = TaskRecord(node.minter.task_id(0, desc.task_type_id), desc, [absent], 0, [Target(DRIVER, 0, 0)])
        node.activate(rec)
        assert rec.state is TaskState.READY_FETCHING
        return rec

    stolen = fetching_record()
    assert node.steal_from_pool() is stolen
    node._fetched(stolen, 0, None, DanglingIdError("gone"))
    assert faults == [] and not node._fetching

    live = fetching_record()
    node._fetched(live, 0, None, DanglingIdError("gone"))
    assert faults == [wire.FaultKind.DANGLING]


def test_execute_is_buffered(node):
    rec = fib_record(node, 5)
    rec.payloads = [node.chunks.peek(rec.inputs[0])]
    before = len(node.chunks.store)
    txn = node.execute(rec)
    assert len(txn.tasks) == 3 and len(txn.chunks) == 2
    assert len(node.chunks.store) == before  # nothing visible before commit
    assert isinstance(txn.output, TaskId)


def test_steal_takes_shallowest_fifo(node):
    recs = [fib_record(node, 1, depth=d) for d in (5, 3, 3, 4)]
    for r in recs:
        node.activate(r)
    assert node.steal_from_pool() is recs[1]
    assert node.steal_from_pool() is recs[2]
    assert node.steal_from_pool() is recs[3]
    assert node.steal_from_pool() is recs[0]
    assert node.steal_from_pool() is None


def test_local_pick_is_deepest_newest(node):
    recs = [fib_record(node, 1, depth=d) for d in (2, 7, 7, 1)]
    for r in recs:
        node.activate(r)
    with node._lock:
        assert node._pick() is recs[2]


def test_stolen_pending_commit_is_discarded(node):
    rec = fib_record(node, 4)
    node.activate(rec)
    with node._lock:
        del node._pool[rec.task_id]
    stored = len(node.chunks.store)
    txn = node.execute(rec)
    rec.state = TaskState.EXECUTED_PENDING_COMMIT
    rec.txn = txn
    with node._lock:
        node._pool[rec.task_id] = rec
    assert node.steal_from_pool() is rec
    assert rec.txn is None
    assert node.stats.discards == 1
    assert len(node.chunks.store) == stored
    assert [e.event for e in node.events.events][-1] == "discard"


def test_sibling_waits_for_both_inputs(node):
    rec = fib_record(node, 3)
    rec.payloads = [node.chunks.peek(rec.inputs[0])]
    txn = node.execute(rec)
    node.commit(rec, txn)
    (group,) = node._groups.values()
    f2, f1, add = group.members
    assert add.pending == 2
    pooled = {r.task_id for r in node.pool_snapshot()}
    assert f2.spec.task_id in pooled and f1.spec.task_id in pooled
    assert add.spec.task_id not in pooled
    a = node.chunks.register_chunk(CInt(1))
    b = node.chunks.register_chunk(CInt(1))
    node._task_done(group.gid, 0, True, a)
    assert add.spec.task_id not in {r.task_id for r in node.pool_snapshot()}
    node._task_done(group.gid, 1, True, b)
    assert add.spec.task_id in {r.task_id for r in node.pool_snapshot()}
    # the returned task answers the parent's own target too
    assert add.targets[1:] == rec.targets


def test_speculative_result_discarded_when_stolen(make_runtime):
    rt = make_runtime(FIB_TYPES, n_workers=2, executors=1, event_log=True)
    sched0 = rt.workers[0].scheduler
    sched0._commit_permit.acquire()
    cid = rt.register_chunk(CInt(12))
    box = {}
    runner = threading.Thread(target=lambda: box.setdefault("out", rt.execute_mother_task(Fibonacci, cid)))
    runner.start()
    deadline = time.monotonic() + 20
    while sched0.stats.discards == 0 and time.monotonic() < deadline:
        time.sleep(0.005)
    sched0._commit_permit.release()
    runner.join(60)
    assert sched0.stats.discards >= 1
    out = box["out"]
    assert rt.get_chunk(out).x == 144
    rt.delete_chunk(cid)
    rt.delete_chunk(out)
    stats = rt.stop()
    assert stats.leaks == []
    assert stats.conservation_ok
    assert events.refcount_imbalances(rt.events) == {}


def test_event_checks_detect_violations():
    log = EventLog()
    log.emit(0, "pool_add", "a", 1)
    log.emit(0, "pool_add", "b", 3)
    log.emit(0, "steal", "b", 3)
    assert [e.task_id for e in events.steal_violations(log)] == ["b"]

    log = EventLog()
    log.emit(0, "commit_start", "x", 1, leaf=False)
    log.emit(0, "commit_start", "y", 1, leaf=False)
    log.emit(0, "commit_end", "x", 1, leaf=False)
    assert len(events.overlapping_nonleaf_commits(log)) == 1

    log = EventLog()
    log.emit(0, "chunk_insert", entry="e")
    log.emit(0, "chunk_release", entry="e")
    log.emit(0, "chunk_insert", entry="f")
    log.emit(0, "chunk_release", entry="f")
    log.emit(0, "chunk_free", entry="e")
    assert events.refcount_imbalances(log) == {"f": 0}
