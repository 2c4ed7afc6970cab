"""Chunks and tasks: immutable data chunks, side-effect-free tasks, and an
in-process multi-worker runtime that schedules them by work stealing."""

from .core import Chunk, Task, TypeRegistry, deserialize_chunk, get_child_chunks, serialize_chunk
from .errors import (
    ChtError,
    DanglingIdError,
    DataLossError,
    DecodeError,
    DeserializationError,
    DestinationDeadError,
    RegistryError,
    SerializationError,
    TaskFailedError,
    UsageError,
)
from .ids import CHUNK_ID_NULL, ChunkId, GenericId, TaskId, decode_id, encode_id
from .runtime import Config, Runtime, RunStats, run_mother_task

__all__ = [
    "CHUNK_ID_NULL",
    "Chunk",
    "ChunkId",
    "ChtError",
    "Config",
    "DanglingIdError",
    "DataLossError",
    "DecodeError",
    "DeserializationError",
    "DestinationDeadError",
    "GenericId",
    "RegistryError",
    "RunStats",
    "Runtime",
    "SerializationError",
    "Task",
    "TaskFailedError",
    "TaskId",
    "TypeRegistry",
    "UsageError",
    "decode_id",
    "deserialize_chunk",
    "encode_id",
    "get_child_chunks",
    "run_mother_task",
    "serialize_chunk",
]
