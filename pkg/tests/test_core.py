import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkstasks import CHUNK_ID_NULL, Chunk, ChunkId, Task, TypeRegistry
from chunkstasks.apps.fibonacci import Add, CInt, Fibonacci
from chunkstasks.apps.matrix import MatrixLeaf, MatrixNode
from chunkstasks.core import deserialize_chunk, get_child_chunks, serialize_chunk
from chunkstasks.errors import DeserializationError, RegistryError, SerializationError, UsageError


def _registry():
    reg = TypeRegistry()
    for cls in (CInt, MatrixLeaf, MatrixNode):
        reg.register_chunk_type(cls)
    for cls in (Fibonacci, Add):
        reg.register_task_type(cls)
    return reg


@pytest.fixture
def registry():
    return _registry()


REG = _registry()


def test_cint_serialization():
    assert serialize_chunk(CInt(7)) == (7).to_bytes(4, "little")
    assert serialize_chunk(CInt(0)) == bytes(4)
    assert serialize_chunk(CInt(-3)) == (-3).to_bytes(4, "little", signed=True)


def test_deserialize(registry):
    cid = registry.chunk_type_id(CInt)
    assert deserialize_chunk(registry, cid, (13).to_bytes(4, "little")) == CInt(13)


def test_unknown_type_id(registry):
    with pytest.raises(RegistryError):
        deserialize_chunk(registry, 999, bytes(4))


def test_wrong_buffer_size(registry):
    with pytest.raises(DeserializationError, match="Wrong buffer size"):
        deserialize_chunk(registry, registry.chunk_type_id(CInt), bytes(3))


def test_size_mismatch_is_serialization_fault():
    class Liar(Chunk):
        def get_size(self):
            return 5

        def write_to_buffer(self):
            return b"abc"

    with pytest.raises(SerializationError):
        serialize_chunk(Liar())


@settings(max_examples=30)
@given(st.integers(-(2**31), 2**31 - 1))
def test_cint_reserialization_identical(x):
    registry = REG
    raw = serialize_chunk(CInt(x))
    back = deserialize_chunk(registry, registry.chunk_type_id(CInt), raw)
    assert serialize_chunk(back) == raw


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_leaf_reserialization_identical(b, seed):
    registry = REG
    leaf = MatrixLeaf(np.random.default_rng(seed).standard_normal((b, b)))
    raw = serialize_chunk(leaf)
    assert len(raw) == 8 + 8 * b * b
    back = deserialize_chunk(registry, registry.chunk_type_id(MatrixLeaf), raw)
    assert serialize_chunk(back) == raw


def test_node_round_trip(registry):
    kids = [ChunkId(0, 1, 1, 40), ChunkId(1, 2, 1, 40), CHUNK_ID_NULL, ChunkId(3, 4, 1, 40)]
    raw = serialize_chunk(MatrixNode(1, kids))
    assert len(raw) == 4 + 4 * 26
    back = deserialize_chunk(registry, registry.chunk_type_id(MatrixNode), raw)
    assert back.children == kids and back.level == 1
    assert serialize_chunk(back) == raw


def test_child_chunks():
    a, b, d = ChunkId(0, 1, 1, 40), ChunkId(1, 2, 1, 40), ChunkId(3, 4, 1, 40)
    assert get_child_chunks(CInt(5)) == []
    assert get_child_chunks(MatrixNode(1, [a, b, CHUNK_ID_NULL, d])) == [a, b, d]
    # only direct children
    inner = ChunkId(2, 9, 2, 108)
    assert get_child_chunks(MatrixNode(2, [inner, CHUNK_ID_NULL, CHUNK_ID_NULL, CHUNK_ID_NULL])) == [inner]


def test_registry_dense_and_frozen():
    reg = TypeRegistry()
    assert reg.register_chunk_type(CInt) == 0
    assert reg.register_chunk_type(MatrixLeaf) == 1
    assert reg.register_chunk_type(CInt) == 0
    assert reg.register_task_type(Fibonacci) == 0
    assert reg.name_table() == {"chunks": {"CInt": 0, "MatrixLeaf": 1}, "tasks": {"Fibonacci": 0}}
    reg.freeze()
    with pytest.raises(UsageError):
        reg.register_chunk_type(MatrixNode)
    with pytest.raises(RegistryError):
        reg.chunk_type_id(MatrixNode)


def test_registry_rejects_non_types():
    reg = TypeRegistry()
    with pytest.raises(RegistryError):
        reg.register_chunk_type(Fibonacci)
    with pytest.raises(RegistryError):
        reg.register_task_type(int)


def test_task_declarations():
    assert Fibonacci.input_types == (CInt,) and Fibonacci.output_type is CInt
    assert Add.input_types == (CInt, CInt)
    assert issubclass(Add, Task)
