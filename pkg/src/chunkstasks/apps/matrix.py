"""Hierarchic block-sparse matrices as quad-trees of chunk ids.

A matrix of dimension ``n`` with block size ``b`` is a tree of
:class:`MatrixNode` chunks whose children are NW, NE, SW, SE submatrices;
the bottom level holds dense :class:`MatrixLeaf` blocks. A structurally
zero submatrix is ``CHUNK_ID_NULL`` at any level.

Three task types multiply such matrices: :class:`MatMul`, :class:`MatAdd`
and :class:`Assemble`. Products are paired as
``C[i][j] = A[i][0] B[0][j] + A[i][1] B[1][j]``.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable

import numpy as np

from ..core import Chunk, Task
from ..errors import DeserializationError, UsageError
from ..ids import CHUNK_ID_NULL, ID_WIDTH, ChunkId, decode_ids, encode_ids

_DIM = struct.Struct("<Q")
_LEVEL = struct.Struct("<I")

# -- leaf kernels --------------------------------------------------------------


def naive_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain triple loop; the reference the optimized kernel is checked against."""
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    al, bl = a.tolist(), b.tolist()
    for i in range(m):
        row = al[i]
        acc = [0.0] * n
        for p in range(k):
            aip = row[p]
            bp = bl[p]
            for j in range(n):
                acc[j] += aip * bp[j]
        out[i] = acc
    return out


_blas_lock = threading.Lock()
_blas_limited = None


def blas_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """numpy matmul with BLAS held to one thread, so parallelism comes from
    executor threads only."""
    global _blas_limited
    if _blas_limited is None:
        with _blas_lock:
            if _blas_limited is None:
                from threadpoolctl import threadpool_limits

                _blas_limited = threadpool_limits(limits=1, user_api="blas")
    return a @ b


_kernel: Callable[[np.ndarray, np.ndarray], np.ndarray] = blas_kernel


def set_leaf_kernel(fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Callable:
    """Swap the leaf product routine; returns the previous one."""
    global _kernel
    old, _kernel = _kernel, fn
    return old


def leaf_kernel() -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    return _kernel


# -- chunk types ------------------------------------------------------------------


class MatrixChunk(Chunk):
    """Common base so tasks can accept either a node or a leaf."""

    level: int


class MatrixLeaf(MatrixChunk):
    level = 0

    def __init__(self, data):
        data = np.ascontiguousarray(data, dtype="<f8")
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise UsageError(f"leaf block must be square, got shape {data.shape}")
        self.data = data

    @property
    def b(self) -> int:
        return self.data.shape[0]

    def get_size(self) -> int:
        return _DIM.size + 8 * self.b * self.b

    def write_to_buffer(self) -> bytes:
        return _DIM.pack(self.b) + self.data.tobytes()

    def assign_from_buffer(self, buffer: bytes) -> None:
        if len(buffer) < _DIM.size:
            raise DeserializationError(f"Wrong buffer size to MatrixLeaf: {len(buffer)}")
        (b,) = _DIM.unpack_from(buffer)
        if len(buffer) != _DIM.size + 8 * b * b:
            raise DeserializationError(f"Wrong buffer size to MatrixLeaf: {len(buffer)} for b={b}")
        self.data = np.frombuffer(buffer, dtype="<f8", offset=_DIM.size).reshape(b, b)

    def memory_usage(self) -> int:
        return self.get_size()


class MatrixNode(MatrixChunk):
    SIZE = _LEVEL.size + 4 * ID_WIDTH

    def __init__(self, level: int, children):
        children = list(children)
        if len(children) != 4:
            raise UsageError("a matrix node has exactly four children")
        if level < 1:
            raise UsageError("node level must be >= 1")
        self.level = level
        self.children = children

    def get_size(self) -> int:
        return self.SIZE

    def write_to_buffer(self) -> bytes:
        return _LEVEL.pack(self.level) + encode_ids(self.children)

    def assign_from_buffer(self, buffer: bytes) -> None:
        if len(buffer) != self.SIZE:
            raise DeserializationError(f"Wrong buffer size to MatrixNode: {len(buffer)}")
        (self.level,) = _LEVEL.unpack_from(buffer)
        self.children = decode_ids(buffer, 4, _LEVEL.size)

    def get_child_chunks(self) -> list[ChunkId]:
        return [c for c in self.children if not c.is_null]


# -- tasks -----------------------------------------------------------------------------


class MatMul(Task):
    input_types = (MatrixChunk, MatrixChunk)
    output_type = MatrixChunk

    def execute(self, a: MatrixChunk | None, b: MatrixChunk | None):
        if a is None or b is None:
            return CHUNK_ID_NULL
        if a.level != b.level:
            raise UsageError(f"MatMul level mismatch: {a.level} vs {b.level}")
        if isinstance(a, MatrixLeaf):
            if a.b != b.b:
                raise UsageError(f"MatMul block size mismatch: {a.b} vs {b.b}")
            return self.register_chunk(MatrixLeaf(_kernel(a.data, b.data)))
        A, B = a.children, b.children
        quads = []
        for i in range(2):
            for j in range(2):
                parts = []
                for k in range(2):
                    x, y = A[2 * i + k], B[2 * k + j]
                    # a product with a zero factor is zero; skip the task
                    if not x.is_null and not y.is_null:
                        parts.append(self.register_task(MatMul, x, y))
                if not parts:
                    quads.append(CHUNK_ID_NULL)
                elif len(parts) == 1:
                    quads.append(parts[0])
                else:
                    quads.append(self.register_task(MatAdd, parts[0], parts[1]))
        if all(isinstance(q, ChunkId) and q.is_null for q in quads):
            return CHUNK_ID_NULL
        return self.register_task(Assemble, *quads)


class MatAdd(Task):
    input_types = (MatrixChunk, MatrixChunk)
    output_type = MatrixChunk

    def execute(self, a: MatrixChunk | None, b: MatrixChunk | None):
        if a is None and b is None:
            return CHUNK_ID_NULL
        if a is None:
            return self.copy_chunk(self.get_input_chunk_id(1))
        if b is None:
            return self.copy_chunk(self.get_input_chunk_id(0))
        if a.level != b.level:
            raise UsageError(f"MatAdd level mismatch: {a.level} vs {b.level}")
        if isinstance(a, MatrixLeaf):
            if a.data.shape != b.data.shape:
                raise UsageError(f"MatAdd shape mismatch: {a.data.shape} vs {b.data.shape}")
            return self.register_chunk(MatrixLeaf(a.data + b.data))
        quads = []
        for x, y in zip(a.children, b.children):
            if x.is_null:
                quads.append(y)
            elif y.is_null:
                quads.append(x)
            else:
                quads.append(self.register_task(MatAdd, x, y))
        if all(isinstance(q, ChunkId) and q.is_null for q in quads):
            return CHUNK_ID_NULL
        return self.register_task(Assemble, *quads)


class Assemble(Task):
    input_types = (MatrixChunk, MatrixChunk, MatrixChunk, MatrixChunk)
    output_type = MatrixChunk

    def execute(self, *quads: MatrixChunk | None):
        present = [q for q in quads if q is not None]
        if not present:
            return CHUNK_ID_NULL
        levels = {q.level for q in present}
        if len(levels) != 1:
            raise UsageError(f"Assemble children at mixed levels {sorted(levels)}")
        # the inputs belong to whoever produced them; the node holds its own copies
        children = [self.copy_chunk(self.get_input_chunk_id(k)) for k in range(4)]
        return self.register_chunk(MatrixNode(levels.pop() + 1, children))


TYPES = (MatrixLeaf, MatrixNode, MatMul, MatAdd, Assemble)


# -- driver-side helpers ----------------------------------------------------------------


def _check_shape(n: int, b: int) -> int:
    if b < 1 or n < b or n % b:
        raise UsageError(f"n={n} must be a positive multiple of block size b={b}")
    g = n // b
    if g & (g - 1):
        raise UsageError(f"n/b={g} must be a power of two")
    return g


def nonzero_count(fill: float, grid: int) -> int:
    """Number of nonzero leaf blocks for fill factor ``fill``, rounded half up."""
    if not 0.0 <= fill <= 1.0:
        raise UsageError(f"fill factor {fill} outside [0, 1]")
    return int(np.floor(fill * grid * grid + 0.5))


def random_block_sparse(n: int, b: int, fill: float, seed: int) -> dict[tuple[int, int], np.ndarray]:
    """Block positions chosen uniformly without replacement, values N(0, 1)."""
    g = _check_shape(n, b)
    k = nonzero_count(fill, g)
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(g * g, size=k, replace=False)) if k else np.array([], dtype=int)
    return {(int(p) // g, int(p) % g): rng.standard_normal((b, b)) for p in picks}


def build_tree(runtime, blocks: dict[tuple[int, int], np.ndarray], n: int, b: int) -> ChunkId:
    """Register a quad-tree for ``blocks`` bottom-up, pruning empty subtrees."""
    g = _check_shape(n, b)

    def build(r0: int, c0: int, size: int, level: int) -> ChunkId:
        if size == 1:
            block = blocks.get((r0, c0))
            return CHUNK_ID_NULL if block is None else runtime.register_chunk(MatrixLeaf(block))
        h = size // 2
        kids = [
            build(r0, c0, h, level - 1),
            build(r0, c0 + h, h, level - 1),
            build(r0 + h, c0, h, level - 1),
            build(r0 + h, c0 + h, h, level - 1),
        ]
        if all(k.is_null for k in kids):
            return CHUNK_ID_NULL
        return runtime.register_chunk(MatrixNode(level, kids))

    return build(0, 0, g, g.bit_length() - 1)


def build_matrix(runtime, n: int, b: int, fill: float, seed: int) -> ChunkId:
    return build_tree(runtime, random_block_sparse(n, b, fill, seed), n, b)


def dense_from_blocks(blocks: dict[tuple[int, int], np.ndarray], n: int, b: int) -> np.ndarray:
    out = np.zeros((n, n))
    for (i, j), block in blocks.items():
        out[i * b : (i + 1) * b, j * b : (j + 1) * b] = block
    return out


def fetch_blocks(runtime, root: ChunkId) -> dict[tuple[int, int], np.ndarray]:
    """Walk a stored quad-tree and return its leaf blocks by block position."""
    out: dict[tuple[int, int], np.ndarray] = {}

    def walk(cid: ChunkId, r0: int, c0: int) -> None:
        if cid.is_null:
            return
        chunk = runtime.get_chunk(cid)
        if isinstance(chunk, MatrixLeaf):
            out[(r0, c0)] = np.array(chunk.data)
            return
        h = 1 << (chunk.level - 1)
        for k, child in enumerate(chunk.children):
            walk(child, r0 + (k // 2) * h, c0 + (k % 2) * h)

    walk(root, 0, 0)
    return out


def to_dense(runtime, root: ChunkId, n: int, b: int) -> np.ndarray:
    return dense_from_blocks(fetch_blocks(runtime, root), n, b)


def canonical_bytes(runtime, root: ChunkId) -> bytes:
    """Content of a whole hierarchy with ids replaced by what they hold.

    Two trees with equal canonical bytes store identical payloads at
    identical positions, wherever their chunks were placed.
    """
    if root.is_null:
        return b"0"
    chunk = runtime.get_chunk(root)
    if isinstance(chunk, MatrixLeaf):
        return b"L" + chunk.write_to_buffer()
    parts = [b"N", _LEVEL.pack(chunk.level)]
    for child in chunk.children:
        body = canonical_bytes(runtime, child)
        parts.append(struct.pack("<Q", len(body)) + body)
    return b"".join(parts)


def dense_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference product without BLAS: a straight sum over k."""
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    ref = np.linalg.norm(want)
    diff = np.linalg.norm(got - want)
    if ref == 0.0:
        return float(diff)
    return float(diff / ref)


def structural_leaf_products(a_blocks, b_blocks) -> int:
    """Leaf products a fully pruned multiplication must perform."""
    rows_of_b: dict[int, int] = {}
    for k, _ in b_blocks:
        rows_of_b[k] = rows_of_b.get(k, 0) + 1
    return sum(rows_of_b.get(k, 0) for _, k in a_blocks)
