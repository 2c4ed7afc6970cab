"""Fibonacci numbers as a task hierarchy: the smallest complete program."""

from __future__ import annotations

import functools
import struct

from ..core import Chunk, Task
from ..errors import DeserializationError, SerializationError, UsageError

_INT = struct.Struct("<i")


class CInt(Chunk):
    """A single 32-bit signed integer."""

    def __init__(self, x: int = 0):
        self.x = int(x)

    def get_size(self) -> int:
        return _INT.size

    def write_to_buffer(self) -> bytes:
        try:
            return _INT.pack(self.x)
        except struct.error as exc:
            raise SerializationError(f"CInt value {self.x} does not fit in 32 bits") from exc

    def assign_from_buffer(self, buffer: bytes) -> None:
        if len(buffer) != _INT.size:
            raise DeserializationError(f"Wrong buffer size to CInt.assign_from_buffer: {len(buffer)}")
        (self.x,) = _INT.unpack(buffer)

    def __int__(self) -> int:
        return self.x

    def __eq__(self, other) -> bool:
        return isinstance(other, CInt) and other.x == self.x

    def __repr__(self) -> str:
        return f"CInt({self.x})"


class Add(Task):
    input_types = (CInt, CInt)
    output_type = CInt

    def execute(self, n1: CInt, n2: CInt):
        return self.register_chunk(CInt(n1.x + n2.x), persistent=True)


class Fibonacci(Task):
    input_types = (CInt,)
    output_type = CInt

    def execute(self, n: CInt):
        if n.x < 0:
            raise UsageError(f"Fibonacci of negative number {n.x}")
        if n.x < 2:
            return self.copy_chunk(self.get_input_chunk_id(n))
        c1 = self.register_chunk(CInt(n.x - 1))
        t1 = self.register_task(Fibonacci, c1)
        c2 = self.register_chunk(CInt(n.x - 2))
        t2 = self.register_task(Fibonacci, c2)
        return self.register_task(Add, t1, t2, persistent=True)


TYPES = (CInt, Fibonacci, Add)


def fib(n: int) -> int:
    """Reference value by direct recurrence."""
    if n < 0:
        raise ValueError("n must be >= 0")
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


@functools.cache
def task_count(n: int) -> int:
    """Tasks executed by a fault-free Fibonacci(n) run (Fibonacci plus Add)."""
    if n < 2:
        return 1
    return 2 + task_count(n - 1) + task_count(n - 2)
