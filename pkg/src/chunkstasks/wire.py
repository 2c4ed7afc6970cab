"""Message bodies for the chunk, scheduler and control services.

Every body starts with a one-byte kind. Identifiers use the 26-byte encoding
from :mod:`chunkstasks.ids`; integers are little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

from .errors import DecodeError
from .ids import ID_WIDTH, ChunkId, GenericId, TaskId, decode_id, decode_ids, encode_id, encode_ids


class Kind(IntEnum):
    # chunk service
    GET = 1
    GET_REPLY = 2
    COPY = 3
    COPY_REPLY = 4
    DELETE = 5
    DELETE_ACK = 6
    PUT = 7
    PUT_ACK = 8
    REPLICA = 9
    REPL_COPY = 10
    REPL_DELETE = 11
    LEAK_REQ = 12
    LEAK_REPLY = 13
    # scheduler service
    STEAL_REQ = 20
    STEAL_REPLY = 21
    TASK_DONE = 22
    FORWARD = 23
    MOTHER_TASK = 24
    # control
    STOP = 30
    FAULT = 31
    DEATH = 0xFF


class Status(IntEnum):
    OK = 0
    DANGLING = 1
    LOST = 2


class FaultKind(IntEnum):
    DANGLING = 1
    DATA_LOSS = 2
    TASK_FAILED = 3
    USAGE = 4


_U8 = struct.Struct("<B")
_REQ = struct.Struct("<BQ")
_REQ_STATUS = struct.Struct("<BQB")
_DEATH = struct.Struct("<Bi")
_TARGET = struct.Struct("<iQI")
_DONE = struct.Struct("<BQIB")
_FORWARD = struct.Struct("<BQIii")
_WIRE_HEAD = struct.Struct("<IBHH")


def kind_of(body: bytes) -> Kind:
    if not body:
        raise DecodeError("empty message body")
    try:
        return Kind(body[0])
    except ValueError:
        raise DecodeError(f"unknown message kind {body[0]}") from None


# -- chunk service ---------------------------------------------------------


def req_id(kind: Kind, req: int, cid: GenericId) -> bytes:
    """GET, DELETE: request tag followed by one id."""
    return _REQ.pack(kind, req) + encode_id(cid)


def parse_req_id(body: bytes) -> tuple[int, ChunkId]:
    _, req = _REQ.unpack_from(body)
    return req, decode_id(body, _REQ.size)


def req_id_payload(kind: Kind, req: int, cid: ChunkId, payload: bytes) -> bytes:
    """PUT, REPLICA: request tag, id, raw payload."""
    return _REQ.pack(kind, req) + encode_id(cid) + payload


def parse_req_id_payload(body: bytes) -> tuple[int, ChunkId, bytes]:
    _, req = _REQ.unpack_from(body)
    return req, decode_id(body, _REQ.size), body[_REQ.size + ID_WIDTH :]


def get_reply(req: int, status: Status, cid: ChunkId, payload: bytes = b"") -> bytes:
    return _REQ_STATUS.pack(Kind.GET_REPLY, req, status) + encode_id(cid) + payload


def parse_get_reply(body: bytes) -> tuple[int, Status, ChunkId, bytes]:
    _, req, status = _REQ_STATUS.unpack_from(body)
    off = _REQ_STATUS.size
    return req, Status(status), decode_id(body, off), body[off + ID_WIDTH :]


def copy_req(kind: Kind, req: int, src: ChunkId, new: ChunkId) -> bytes:
    """COPY and REPL_COPY."""
    return _REQ.pack(kind, req) + encode_id(src) + encode_id(new)


def parse_copy_req(body: bytes) -> tuple[int, ChunkId, ChunkId]:
    _, req = _REQ.unpack_from(body)
    src, new = decode_ids(body, 2, _REQ.size)
    return req, src, new


def status_reply(kind: Kind, req: int, status: Status, cid: GenericId | None = None) -> bytes:
    """COPY_REPLY, DELETE_ACK, PUT_ACK."""
    tail = encode_id(cid) if cid is not None else b""
    return _REQ_STATUS.pack(kind, req, status) + tail


def parse_status_reply(body: bytes) -> tuple[int, Status, GenericId | None]:
    _, req, status = _REQ_STATUS.unpack_from(body)
    cid = decode_id(body, _REQ_STATUS.size) if len(body) > _REQ_STATUS.size else None
    return req, Status(status), cid


def leak_reply(req: int, ids: list[ChunkId]) -> bytes:
    return _REQ.pack(Kind.LEAK_REPLY, req) + struct.pack("<I", len(ids)) + encode_ids(ids)


def parse_leak_reply(body: bytes) -> tuple[int, list[ChunkId]]:
    _, req = _REQ.unpack_from(body)
    (n,) = struct.unpack_from("<I", body, _REQ.size)
    return req, decode_ids(body, n, _REQ.size + 4)


# -- scheduler service -----------------------------------------------------


class Target(NamedTuple):
    """A slot waiting for a task's final chunk id: (rank, group, index)."""

    rank: int
    group: int
    index: int


@dataclass
class StealWire:
    """Everything a thief needs to rebuild a task through the task factory."""

    task_id: TaskId
    depth: int
    inputs: list[GenericId]
    targets: list[Target]
    persistent: bool = False

    def encode(self) -> bytes:
        head = _WIRE_HEAD.pack(self.depth, int(self.persistent), len(self.inputs), len(self.targets))
        return (
            encode_id(self.task_id)
            + head
            + encode_ids(self.inputs)
            + b"".join(_TARGET.pack(*t) for t in self.targets)
        )

    @classmethod
    def decode(cls, data: bytes, offset: int = 0) -> StealWire:
        task_id = decode_id(data, offset)
        if not isinstance(task_id, TaskId):
            raise DecodeError("steal wire must start with a task id")
        off = offset + ID_WIDTH
        depth, persistent, n_in, n_tg = _WIRE_HEAD.unpack_from(data, off)
        off += _WIRE_HEAD.size
        inputs = decode_ids(data, n_in, off)
        off += n_in * ID_WIDTH
        targets = [Target(*_TARGET.unpack_from(data, off + k * _TARGET.size)) for k in range(n_tg)]
        return cls(task_id, depth, inputs, targets, bool(persistent))


def steal_req() -> bytes:
    return _U8.pack(Kind.STEAL_REQ)


def steal_reply(wire: StealWire | None) -> bytes:
    if wire is None:
        return _U8.pack(Kind.STEAL_REPLY) + b"\x00"
    return _U8.pack(Kind.STEAL_REPLY) + b"\x01" + wire.encode()


def parse_steal_reply(body: bytes) -> StealWire | None:
    if body[1] == 0:
        return None
    return StealWire.decode(body, 2)


def mother_task(wire: StealWire) -> bytes:
    return _U8.pack(Kind.MOTHER_TASK) + wire.encode()


def parse_mother_task(body: bytes) -> StealWire:
    return StealWire.decode(body, 1)


def task_done(target: Target, owner: bool, cid: ChunkId) -> bytes:
    return _DONE.pack(Kind.TASK_DONE, target.group, target.index, int(owner)) + encode_id(cid)


def parse_task_done(body: bytes) -> tuple[int, int, bool, ChunkId]:
    _, group, index, owner = _DONE.unpack_from(body)
    return group, index, bool(owner), decode_id(body, _DONE.size)


def forward(group: int, index: int, old_rank: int, new_rank: int) -> bytes:
    """Re-route the task waited on by slot (group, index) from old_rank to new_rank."""
    return _FORWARD.pack(Kind.FORWARD, group, index, old_rank, new_rank)


def parse_forward(body: bytes) -> tuple[int, int, int, int]:
    _, group, index, old, new = _FORWARD.unpack_from(body)
    return group, index, old, new


# -- control ---------------------------------------------------------------


def death(rank: int) -> bytes:
    return _DEATH.pack(Kind.DEATH, rank)


def parse_death(body: bytes) -> int:
    return _DEATH.unpack_from(body)[1]


def stop() -> bytes:
    return _U8.pack(Kind.STOP)


def fault(kind: FaultKind, message: str) -> bytes:
    return _U8.pack(Kind.FAULT) + _U8.pack(kind) + message.encode("utf-8")


def parse_fault(body: bytes) -> tuple[FaultKind, str]:
    return FaultKind(body[1]), body[2:].decode("utf-8", "replace")
