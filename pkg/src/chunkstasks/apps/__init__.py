"""Example applications: Fibonacci and block-sparse matrix multiplication."""

from . import fibonacci, matrix
from .fibonacci import Add, CInt, Fibonacci
from .matrix import Assemble, MatAdd, MatMul, MatrixLeaf, MatrixNode

__all__ = ["fibonacci", "matrix", "Add", "CInt", "Fibonacci", "Assemble", "MatAdd", "MatMul", "MatrixLeaf", "MatrixNode"]
