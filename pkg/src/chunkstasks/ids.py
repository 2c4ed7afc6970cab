"""Chunk and task identifiers and their fixed-width binary encoding.

Every identifier encodes to exactly :data:`ID_WIDTH` bytes, little-endian::

    tag u8 | owner_rank u32 | local_serial u64 | type_id u32 | size u64 | flags u8

``tag`` is 0 for chunks and 1 for tasks. Task ids always carry ``size == 0``
and ``flags == 0``. The null chunk id has every field zero except the NULL
flag bit.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from typing import Union

from .errors import DecodeError

_ID_STRUCT = struct.Struct("<BIQIQB")
ID_WIDTH = _ID_STRUCT.size  # 26

TAG_CHUNK = 0
TAG_TASK = 1
FLAG_NULL = 0x01

# local_serial = (minter_slot << SERIAL_SHIFT) | counter. Slot 0 is the
# driver, slot r + 1 is worker r. Keeps (owner, serial) unique even when a
# worker mints a copy id for a chunk owned elsewhere.
SERIAL_SHIFT = 40
_COUNTER_MASK = (1 << SERIAL_SHIFT) - 1
_U32_MAX = 0xFFFFFFFF


@dataclass(frozen=True, slots=True)
class ChunkId:
    owner_rank: int
    local_serial: int
    chunk_type_id: int = field(default=0, compare=False)
    size_bytes: int = field(default=0, compare=False)
    flags: int = 0

    @property
    def is_null(self) -> bool:
        return bool(self.flags & FLAG_NULL)

    @property
    def minter_slot(self) -> int:
        return self.local_serial >> SERIAL_SHIFT

    def __repr__(self) -> str:
        if self.is_null:
            return "CHUNK_ID_NULL"
        return (
            f"ChunkId({self.owner_rank}:{self.minter_slot}.{self.local_serial & _COUNTER_MASK}"
            f" t{self.chunk_type_id} {self.size_bytes}B)"
        )


@dataclass(frozen=True, slots=True)
class TaskId:
    owner_rank: int
    local_serial: int
    task_type_id: int = field(default=0, compare=False)

    def __repr__(self) -> str:
        return (
            f"TaskId({self.owner_rank}:{self.local_serial >> SERIAL_SHIFT}."
            f"{self.local_serial & _COUNTER_MASK} t{self.task_type_id})"
        )


GenericId = Union[ChunkId, TaskId]

CHUNK_ID_NULL = ChunkId(0, 0, 0, 0, FLAG_NULL)


def is_null(cid: GenericId | None) -> bool:
    return cid is None or (isinstance(cid, ChunkId) and cid.is_null)


def encode_id(gid: GenericId) -> bytes:
    if isinstance(gid, ChunkId):
        return _ID_STRUCT.pack(
            TAG_CHUNK, gid.owner_rank, gid.local_serial, gid.chunk_type_id, gid.size_bytes, gid.flags
        )
    if isinstance(gid, TaskId):
        return _ID_STRUCT.pack(TAG_TASK, gid.owner_rank, gid.local_serial, gid.task_type_id, 0, 0)
    raise TypeError(f"not an identifier: {gid!r}")


def decode_id(data: bytes | memoryview, offset: int = 0) -> GenericId:
    if len(data) - offset < ID_WIDTH:
        raise DecodeError(f"identifier needs {ID_WIDTH} bytes, got {len(data) - offset}")
    tag, owner, serial, type_id, size, flags = _ID_STRUCT.unpack_from(data, offset)
    if tag == TAG_CHUNK:
        if flags & ~FLAG_NULL:
            raise DecodeError(f"unknown chunk id flags {flags:#x}")
        if flags & FLAG_NULL:
            if owner or serial or type_id or size:
                raise DecodeError("null chunk id with nonzero fields")
            return CHUNK_ID_NULL
        return ChunkId(owner, serial, type_id, size, flags)
    if tag == TAG_TASK:
        if size or flags:
            raise DecodeError("task id with size or flags set")
        return TaskId(owner, serial, type_id)
    raise DecodeError(f"unknown identifier tag {tag}")


def encode_ids(ids) -> bytes:
    return b"".join(encode_id(i) for i in ids)


def decode_ids(data: bytes | memoryview, count: int, offset: int = 0) -> list[GenericId]:
    return [decode_id(data, offset + k * ID_WIDTH) for k in range(count)]


class IdMinter:
    """Issues fresh serials for one participant (driver or a worker).

    ``itertools.count`` is advanced atomically under the GIL, so executor
    threads may mint concurrently.
    """

    def __init__(self, slot: int):
        if not 0 <= slot < (1 << 23):
            raise ValueError(f"minter slot out of range: {slot}")
        self.slot = slot
        self._counter = itertools.count(1)

    def next_serial(self) -> int:
        n = next(self._counter)
        if n > _COUNTER_MASK:
            raise OverflowError("serial space exhausted")
        return (self.slot << SERIAL_SHIFT) | n

    def chunk_id(self, owner_rank: int, chunk_type_id: int, size_bytes: int) -> ChunkId:
        if not 0 <= owner_rank <= _U32_MAX:
            raise ValueError(f"bad owner rank {owner_rank}")
        return ChunkId(owner_rank, self.next_serial(), chunk_type_id, size_bytes, 0)

    def task_id(self, owner_rank: int, task_type_id: int) -> TaskId:
        return TaskId(owner_rank, self.next_serial(), task_type_id)
