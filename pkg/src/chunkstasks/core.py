"""Chunk and task contracts, the type registry, and chunk (de)serialization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from .errors import DeserializationError, RegistryError, SerializationError, UsageError
from .ids import ChunkId, GenericId, TaskId

if TYPE_CHECKING:
    from .scheduler import Transaction


class Chunk:
    """Base class for user data.

    Subclasses implement ``get_size``, ``write_to_buffer`` and
    ``assign_from_buffer``. ``assign_from_buffer`` is called on an instance
    created without running ``__init__``. Chunks that embed other chunk ids
    override ``get_child_chunks`` so the runtime can destroy hierarchies.
    Once registered, a chunk must never be modified.
    """

    def get_size(self) -> int:
        raise NotImplementedError

    def write_to_buffer(self) -> bytes:
        raise NotImplementedError

    def assign_from_buffer(self, buffer: bytes) -> None:
        raise NotImplementedError

    def memory_usage(self) -> int:
        return self.get_size()

    def get_child_chunks(self) -> list[ChunkId]:
        return []


class Task:
    """Base class for user work.

    Subclasses set ``input_types`` (a tuple of chunk classes) and
    ``output_type`` and implement ``execute``, which receives one read-only
    chunk object per input (``None`` for a null chunk id) and returns a
    chunk id or task id minted during the call.

    Chunks registered with ``persistent=False`` that are neither returned nor
    embedded in another chunk registered by the same execution are treated
    as temporaries and reclaimed once every child task consuming them has
    resolved.
    """

    input_types: tuple[type[Chunk], ...] = ()
    output_type: type[Chunk] = Chunk

    _txn: Transaction

    def execute(self, *inputs: Any) -> GenericId:
        raise NotImplementedError

    def register_chunk(self, chunk: Chunk, persistent: bool = False) -> ChunkId:
        return self._txn.register_chunk(chunk, persistent)

    def register_task(self, task_type: type[Task], *inputs: GenericId, persistent: bool = False) -> TaskId:
        return self._txn.register_task(task_type, inputs, persistent)

    def copy_chunk(self, cid: ChunkId) -> ChunkId:
        return self._txn.copy_chunk(cid)

    def get_input_chunk_id(self, which: Any) -> ChunkId:
        """Chunk id of an input, given the input object or its position."""
        return self._txn.input_chunk_id(which)


@dataclass(frozen=True)
class ChunkTypeDescriptor:
    chunk_type_id: int
    name: str
    cls: type[Chunk]

    def deserialize(self, buffer: bytes) -> Chunk:
        obj = self.cls.__new__(self.cls)
        try:
            obj.assign_from_buffer(buffer)
        except DeserializationError:
            raise
        except Exception as exc:
            raise DeserializationError(f"{self.name}: {exc}") from exc
        return obj

    def children(self, chunk: Chunk) -> list[ChunkId]:
        return [c for c in chunk.get_child_chunks() if not c.is_null]

    def memory_usage(self, chunk: Chunk) -> int:
        return chunk.memory_usage()


@dataclass(frozen=True)
class TaskTypeDescriptor:
    task_type_id: int
    name: str
    cls: type[Task]
    input_types: tuple[type[Chunk], ...]
    output_type: type[Chunk]


class TypeRegistry:
    """Dense, registration-ordered ids for chunk and task types.

    Registration happens on the driver before the runtime starts; after
    :meth:`freeze` the registry is read-only and shared by all workers.
    """

    def __init__(self) -> None:
        self._chunks: list[ChunkTypeDescriptor] = []
        self._tasks: list[TaskTypeDescriptor] = []
        self._chunk_ids: dict[type, int] = {}
        self._task_ids: dict[type, int] = {}
        self.frozen = False

    def register_chunk_type(self, cls: type[Chunk]) -> int:
        if cls in self._chunk_ids:
            return self._chunk_ids[cls]
        self._check_open()
        if not (isinstance(cls, type) and issubclass(cls, Chunk)):
            raise RegistryError(f"{cls!r} is not a Chunk subclass")
        tid = len(self._chunks)
        self._chunks.append(ChunkTypeDescriptor(tid, cls.__qualname__, cls))
        self._chunk_ids[cls] = tid
        return tid

    def register_task_type(self, cls: type[Task]) -> int:
        if cls in self._task_ids:
            return self._task_ids[cls]
        self._check_open()
        if not (isinstance(cls, type) and issubclass(cls, Task)):
            raise RegistryError(f"{cls!r} is not a Task subclass")
        tid = len(self._tasks)
        self._tasks.append(
            TaskTypeDescriptor(tid, cls.__qualname__, cls, tuple(cls.input_types), cls.output_type)
        )
        self._task_ids[cls] = tid
        return tid

    def _check_open(self) -> None:
        if self.frozen:
            raise UsageError("type registry is frozen once the runtime has started")

    def freeze(self) -> None:
        self.frozen = True

    def chunk_type_id(self, cls: type) -> int:
        try:
            return self._chunk_ids[cls]
        except KeyError:
            raise RegistryError(f"chunk type {cls!r} is not registered") from None

    def task_type_id(self, cls: type) -> int:
        try:
            return self._task_ids[cls]
        except KeyError:
            raise RegistryError(f"task type {cls!r} is not registered") from None

    def chunk_type(self, type_id: int) -> ChunkTypeDescriptor:
        if not 0 <= type_id < len(self._chunks):
            raise RegistryError(f"unknown chunk type id {type_id}")
        return self._chunks[type_id]

    def task_type(self, type_id: int) -> TaskTypeDescriptor:
        if not 0 <= type_id < len(self._tasks):
            raise RegistryError(f"unknown task type id {type_id}")
        return self._tasks[type_id]

    def name_table(self) -> dict[str, dict[str, int]]:
        """The (name -> id) tables handed to workers at startup."""
        return {
            "chunks": {d.name: d.chunk_type_id for d in self._chunks},
            "tasks": {d.name: d.task_type_id for d in self._tasks},
        }


def serialize_chunk(chunk: Chunk) -> bytes:
    size = chunk.get_size()
    buf = bytes(chunk.write_to_buffer())
    if len(buf) != size:
        raise SerializationError(
            f"{type(chunk).__qualname__} reported size {size} but wrote {len(buf)} bytes"
        )
    return buf


def deserialize_chunk(registry: TypeRegistry, chunk_type_id: int, buffer: bytes) -> Chunk:
    return registry.chunk_type(chunk_type_id).deserialize(buffer)


def get_child_chunks(chunk: Chunk) -> list[ChunkId]:
    return [c for c in chunk.get_child_chunks() if not c.is_null]
