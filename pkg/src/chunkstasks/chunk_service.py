"""Per-worker chunk storage: owner-ranked placement, remote fetch through an
LRU cache, reference-counted shallow copies, hierarchical deletion, shadow
replicas and leak accounting."""

from __future__ import annotations

import itertools
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable

from . import wire
from .cache import LRUCache
from .core import Chunk, TypeRegistry, get_child_chunks, serialize_chunk
from .errors import DanglingIdError, DataLossError, DestinationDeadError, UsageError
from .events import EventLog
from .ids import CHUNK_ID_NULL, ChunkId, IdMinter
from .resilience import replica_ranks, route
from .transport import CLOSED, DRIVER, Envelope, Service, Transport
from .wire import Kind, Status

log = logging.getLogger(__name__)

Callback = Callable[[bytes | None, Exception | None], None]


@dataclass
class StoreEntry:
    chunk_id: ChunkId
    payload: bytes
    children: list[ChunkId]
    ref_count: int = 1
    primary: bool = True
    aliases: set[ChunkId] = field(default_factory=set)


class ChunkStore:
    """Entries addressed by every id aliasing them. Not thread-safe on its own."""

    def __init__(self) -> None:
        self._by_id: dict[ChunkId, StoreEntry] = {}

    def insert(self, entry: StoreEntry) -> None:
        if entry.chunk_id in self._by_id:
            raise UsageError(f"{entry.chunk_id!r} already stored")
        entry.aliases.add(entry.chunk_id)
        self._by_id[entry.chunk_id] = entry

    def lookup(self, cid: ChunkId) -> StoreEntry | None:
        return self._by_id.get(cid)

    def alias(self, src: ChunkId, new: ChunkId) -> StoreEntry:
        entry = self._by_id.get(src)
        if entry is None:
            raise DanglingIdError(f"copy of unknown chunk {src!r}")
        if new in self._by_id:
            raise UsageError(f"{new!r} already stored")
        entry.ref_count += 1
        entry.aliases.add(new)
        self._by_id[new] = entry
        return entry

    def release(self, cid: ChunkId) -> tuple[StoreEntry, bool]:
        """Drop one reference; returns (entry, freed)."""
        entry = self._by_id.pop(cid, None)
        if entry is None:
            raise DanglingIdError(f"delete of unknown chunk {cid!r}")
        entry.aliases.discard(cid)
        entry.ref_count -= 1
        if entry.ref_count == 0:
            for other in entry.aliases:
                self._by_id.pop(other, None)
            return entry, True
        return entry, False

    def entries(self) -> list[StoreEntry]:
        seen: dict[int, StoreEntry] = {}
        for e in self._by_id.values():
            seen[id(e)] = e
        return list(seen.values())

    def __len__(self) -> int:
        return len(self.entries())


class _Pending:
    __slots__ = ("kind", "dest", "owner", "body", "callbacks", "key")

    def __init__(self, kind, dest, owner, body, callbacks, key=None):
        self.kind = kind
        self.dest = dest
        self.owner = owner
        self.body = body
        self.callbacks = callbacks
        self.key = key


class ChunkService:
    def __init__(
        self,
        rank: int,
        transport: Transport,
        registry: TypeRegistry,
        minter: IdMinter,
        *,
        cache_bytes: int | None = 64 * 1024 * 1024,
        replication_factor: int = 1,
        events: EventLog | None = None,
    ):
        self.rank = rank
        self.transport = transport
        self.registry = registry
        self.minter = minter
        self.replication_factor = replication_factor
        self.events = events
        self.store = ChunkStore()
        self.cache = LRUCache(cache_bytes)
        self._lock = threading.Lock()
        self._req = itertools.count(1)
        self._pending: dict[int, _Pending] = {}
        self._inflight_gets: dict[ChunkId, int] = {}
        self._thread: threading.Thread | None = None
        self.get_requests_sent = 0
        self.get_requests_served = 0

    # -- routing -----------------------------------------------------------

    def _route(self, owner: int) -> int | None:
        if owner == self.rank:
            return self.rank
        return route(owner, self.replication_factor, self.transport.n_workers, self.transport.is_alive)

    def _send(self, dest: int, body: bytes, service: Service = Service.CHUNK) -> bool:
        return self.transport.send(Envelope(service, self.rank, dest, body))

    def report_fault(self, kind: wire.FaultKind, message: str) -> None:
        log.error("worker %d fault: %s", self.rank, message)
        try:
            self._send(DRIVER, wire.fault(kind, message), Service.CONTROL)
        except DestinationDeadError:
            pass

    def _emit(self, event: str, entry: StoreEntry, **detail) -> None:
        if self.events is not None and entry.primary:
            self.events.emit(self.rank, event, entry=entry.chunk_id, **detail)

    # -- local store -------------------------------------------------------

    def register_chunk(self, chunk: Chunk) -> ChunkId:
        """Store a chunk on this worker; no communication happens."""
        type_id = self.registry.chunk_type_id(type(chunk))
        payload = serialize_chunk(chunk)
        cid = self.minter.chunk_id(self.rank, type_id, len(payload))
        self.insert(cid, payload, get_child_chunks(chunk))
        return cid

    def insert(self, cid: ChunkId, payload: bytes, children: list[ChunkId]) -> None:
        if cid.owner_rank != self.rank:
            raise UsageError(f"worker {self.rank} cannot own {cid!r}")
        if len(payload) != cid.size_bytes:
            raise UsageError(f"payload of {len(payload)} bytes does not match {cid!r}")
        entry = StoreEntry(cid, payload, list(children))
        with self._lock:
            self.store.insert(entry)
        self._emit("chunk_insert", entry)
        for r in replica_ranks(self.rank, self.replication_factor, self.transport.n_workers):
            try:
                self._send(r, wire.req_id_payload(Kind.REPLICA, 0, cid, payload))
            except DestinationDeadError:
                pass

    def children_of(self, cid: ChunkId, payload: bytes) -> list[ChunkId]:
        obj = self.registry.chunk_type(cid.chunk_type_id).deserialize(payload)
        return get_child_chunks(obj)

    def _local_payload(self, cid: ChunkId) -> bytes:
        with self._lock:
            entry = self.store.lookup(cid)
        if entry is None:
            raise DanglingIdError(f"worker {self.rank} has no chunk {cid!r}")
        return entry.payload

    def is_local(self, cid: ChunkId) -> bool:
        return self._route(cid.owner_rank) == self.rank

    def peek(self, cid: ChunkId) -> bytes | None:
        """Payload if it is available without communication."""
        if self.is_local(cid):
            with self._lock:
                entry = self.store.lookup(cid)
            return None if entry is None else entry.payload
        return self.cache.get(cid)

    # -- get -----------------------------------------------------------------

    def fetch_async(self, cid: ChunkId, callback: Callback) -> None:
        """Deliver the payload of ``cid`` to ``callback(payload, error)``.

        The callback runs on the calling thread when the payload is local or
        cached, otherwise on this worker's listener thread.
        """
        if cid.is_null:
            callback(None, UsageError("cannot get CHUNK_ID_NULL"))
            return
        dest = self._route(cid.owner_rank)
        if dest is None:
            callback(None, DataLossError(f"owner of {cid!r} is dead and no replica exists"))
            return
        if dest == self.rank:
            try:
                payload = self._local_payload(cid)
            except DanglingIdError as exc:
                callback(None, exc)
                return
            callback(payload, None)
            return
        payload = self.cache.get(cid)
        if payload is not None:
            callback(payload, None)
            return
        with self._lock:
            req = self._inflight_gets.get(cid)
            if req is not None:
                self._pending[req].callbacks.append(callback)
                return
            req = next(self._req)
            body = wire.req_id(Kind.GET, req, cid)
            self._pending[req] = _Pending(Kind.GET, dest, cid.owner_rank, body, [callback], cid)
            self._inflight_gets[cid] = req
            self.get_requests_sent += 1
        self._dispatch(req)

    def get_chunk(self, cid: ChunkId, timeout: float | None = 30.0) -> bytes:
        if cid.is_null:
            raise UsageError("cannot get CHUNK_ID_NULL")
        done = threading.Event()
        box: list = [None, None]

        def cb(payload, err):
            box[0], box[1] = payload, err
            done.set()

        self.fetch_async(cid, cb)
        if not done.wait(timeout):
            raise TimeoutError(f"get of {cid!r} timed out")
        if box[1] is not None:
            raise box[1]
        return box[0]

    def _dispatch(self, req: int) -> None:
        """(Re)send a pending request, re-routing around dead owners."""
        while True:
            with self._lock:
                p = self._pending.get(req)
            if p is None:
                return
            try:
                self._send(p.dest, p.body)
                return
            except DestinationDeadError:
                dest = self._route(p.owner)
                if dest is None or dest == p.dest:
                    self._fail(req, DataLossError(f"chunks of worker {p.owner} are lost"))
                    return
                if dest == self.rank:
                    self._serve_locally(req)
                    return
                p.dest = dest

    def _serve_locally(self, req: int) -> None:
        with self._lock:
            p = self._pending.get(req)
        if p is None:
            return
        if p.kind == Kind.GET:
            try:
                payload = self._local_payload(p.key)
            except DanglingIdError as exc:
                self._fail(req, exc)
                return
            self._complete(req, payload)
        elif p.kind == Kind.COPY:
            _, src, new = wire.parse_copy_req(p.body)
            try:
                self._local_copy(src, new)
            except DanglingIdError as exc:
                self._fail(req, exc)
                return
            self._complete(req, None)

    def _take(self, req: int) -> _Pending | None:
        with self._lock:
            p = self._pending.pop(req, None)
            if p is not None and p.kind == Kind.GET:
                self._inflight_gets.pop(p.key, None)
        return p

    def _complete(self, req: int, payload) -> None:
        p = self._take(req)
        if p is None:
            return
        for cb in p.callbacks:
            cb(payload, None)

    def _fail(self, req: int, err: Exception) -> None:
        p = self._take(req)
        if p is None:
            return
        for cb in p.callbacks:
            cb(None, err)

    # -- copy ------------------------------------------------------------------

    def copy_chunk(self, cid: ChunkId, timeout: float | None = 30.0) -> ChunkId:
        """Shallow copy: a fresh id aliasing the same stored payload."""
        if cid.is_null:
            return CHUNK_ID_NULL
        new = self.minter.chunk_id(cid.owner_rank, cid.chunk_type_id, cid.size_bytes)
        self.apply_copy(cid, new, timeout)
        return new

    def apply_copy(self, src: ChunkId, new: ChunkId, timeout: float | None = 30.0) -> None:
        """Make ``new`` an alias of ``src`` at the owner, waiting for the ack."""
        dest = self._route(src.owner_rank)
        if dest is None:
            raise DataLossError(f"owner of {src!r} is dead and no replica exists")
        if dest == self.rank:
            self._local_copy(src, new)
            return
        done = threading.Event()
        box: list = [None]

        def cb(_payload, err):
            box[0] = err
            done.set()

        with self._lock:
            req = next(self._req)
            body = wire.copy_req(Kind.COPY, req, src, new)
            self._pending[req] = _Pending(Kind.COPY, dest, src.owner_rank, body, [cb])
        self._dispatch(req)
        if not done.wait(timeout):
            raise TimeoutError(f"copy of {src!r} timed out")
        if box[0] is not None:
            raise box[0]

    def _local_copy(self, src: ChunkId, new: ChunkId) -> None:
        with self._lock:
            entry = self.store.alias(src, new)
            replicas = entry.primary
        self._emit("chunk_copy", entry, alias=new)
        if replicas:
            self._mirror(wire.copy_req(Kind.REPL_COPY, 0, src, new))

    def _mirror(self, body: bytes) -> None:
        for r in replica_ranks(self.rank, self.replication_factor, self.transport.n_workers):
            try:
                self._send(r, body)
            except DestinationDeadError:
                pass

    # -- delete ----------------------------------------------------------------

    def delete_chunk(self, cid: ChunkId) -> None:
        """Drop one reference; frees the hierarchy when the last one goes.

        Remote deletes are fire-and-forget; the owner reports dangling ids to
        the driver.
        """
        if cid.is_null:
            return
        dest = self._route(cid.owner_rank)
        if dest is None:
            return  # the chunk died with its owner
        if dest == self.rank:
            try:
                self._local_delete(cid)
            except DanglingIdError as exc:
                self.report_fault(wire.FaultKind.DANGLING, str(exc))
            return
        try:
            self._send(dest, wire.req_id(Kind.DELETE, 0, cid))
        except DestinationDeadError:
            self.delete_chunk(cid)

    def _local_delete(self, cid: ChunkId) -> None:
        with self._lock:
            entry, freed = self.store.release(cid)
        if not entry.primary:
            return
        self._emit("chunk_release", entry, id=cid, left=entry.ref_count)
        self._mirror(wire.req_id(Kind.REPL_DELETE, 0, cid))
        if freed:
            self._emit("chunk_free", entry)
            for child in entry.children:
                self.delete_chunk(child)

    # -- leaks -------------------------------------------------------------------

    def leak_report(self) -> list[tuple[ChunkId, int]]:
        with self._lock:
            entries = [e for e in self.store.entries() if e.primary]
        return sorted(((e.chunk_id, e.chunk_id.size_bytes) for e in entries), key=lambda t: t[0].local_serial)

    # -- recovery ----------------------------------------------------------------

    def on_death(self, dead: int) -> None:
        promoted = 0
        if self._route(dead) == self.rank:
            with self._lock:
                for e in self.store.entries():
                    if not e.primary and e.chunk_id.owner_rank == dead:
                        e.primary = True
                        promoted += 1
        if promoted:
            log.info("worker %d took over %d chunks of dead worker %d", self.rank, promoted, dead)
        with self._lock:
            stuck = [req for req, p in self._pending.items() if p.dest == dead]
        for req in stuck:
            self._dispatch(req)

    # -- listener ------------------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(target=self._listen, name=f"chunk-{self.rank}", daemon=True)
        self._thread.start()

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def _listen(self) -> None:
        while True:
            env = self.transport.recv(self.rank, Service.CHUNK)
            if env is CLOSED or env is None:
                if env is CLOSED:
                    return
                continue
            try:
                self.handle(env)
            except Exception:
                log.exception("worker %d chunk service failed on message", self.rank)
            finally:
                self.transport.done(env)

    def handle(self, env: Envelope) -> None:
        body = env.body
        kind = wire.kind_of(body)
        if kind == Kind.GET:
            req, cid = wire.parse_req_id(body)
            self.get_requests_served += 1
            with self._lock:
                entry = self.store.lookup(cid)
            if entry is None:
                reply = wire.get_reply(req, Status.DANGLING, cid)
            else:
                reply = wire.get_reply(req, Status.OK, cid, entry.payload)
            self._reply(env.source, reply)
        elif kind == Kind.GET_REPLY:
            req, status, cid, payload = wire.parse_get_reply(body)
            if status == Status.OK:
                if not self.is_local(cid):
                    self.cache.put(cid, payload)
                self._complete(req, payload)
            else:
                err = DanglingIdError(f"owner has no chunk {cid!r}") if status == Status.DANGLING else DataLossError(
                    f"chunk {cid!r} lost"
                )
                self._fail(req, err)
        elif kind == Kind.COPY:
            req, src, new = wire.parse_copy_req(body)
            try:
                self._local_copy(src, new)
                status = Status.OK
            except DanglingIdError:
                status = Status.DANGLING
            self._reply(env.source, wire.status_reply(Kind.COPY_REPLY, req, status, new))
        elif kind == Kind.COPY_REPLY:
            req, status, new = wire.parse_status_reply(body)
            if status == Status.OK:
                self._complete(req, None)
            else:
                self._fail(req, DanglingIdError(f"copy source for {new!r} unknown at owner"))
        elif kind == Kind.DELETE:
            req, cid = wire.parse_req_id(body)
            status = Status.OK
            try:
                self._local_delete(cid)
            except DanglingIdError as exc:
                status = Status.DANGLING
                if req == 0:
                    self.report_fault(wire.FaultKind.DANGLING, str(exc))
            if req:
                self._reply(env.source, wire.status_reply(Kind.DELETE_ACK, req, status))
        elif kind == Kind.PUT:
            req, cid, payload = wire.parse_req_id_payload(body)
            status = Status.OK
            try:
                self.insert(cid, payload, self.children_of(cid, payload))
            except Exception as exc:  # reported back to the driver
                log.error("PUT of %r failed: %s", cid, exc)
                status = Status.DANGLING
            self._reply(env.source, wire.status_reply(Kind.PUT_ACK, req, status))
        elif kind == Kind.REPLICA:
            _, cid, payload = wire.parse_req_id_payload(body)
            entry = StoreEntry(cid, payload, self.children_of(cid, payload), primary=False)
            with self._lock:
                if self.store.lookup(cid) is None:
                    self.store.insert(entry)
        elif kind == Kind.REPL_COPY:
            _, src, new = wire.parse_copy_req(body)
            with self._lock:
                if self.store.lookup(src) is not None and self.store.lookup(new) is None:
                    self.store.alias(src, new)
        elif kind == Kind.REPL_DELETE:
            _, cid = wire.parse_req_id(body)
            with self._lock:
                entry = self.store.lookup(cid)
                if entry is not None and not entry.primary:
                    self.store.release(cid)
        elif kind == Kind.LEAK_REQ:
            req, _ = wire.parse_req_id(body)
            ids = [cid for cid, _ in self.leak_report()]
            self._reply(env.source, wire.leak_reply(req, ids))
        elif kind == Kind.DEATH:
            self.on_death(wire.parse_death(body))
        else:
            log.warning("worker %d chunk service ignoring %s", self.rank, kind.name)

    def _reply(self, dest: int, body: bytes) -> None:
        try:
            self._send(dest, body)
        except DestinationDeadError:
            pass
