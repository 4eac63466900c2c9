"""Dense tensor container and checked elementwise/reduction arithmetic.

Tensors are C-contiguous (row-major) float64 numpy arrays.  This module is
the single place where shape and domain contracts are enforced; the rest of
the engine builds on these primitives plus plain numpy where no contract is
at stake.

Broadcast rule: two shapes are compatible when they are equal, or when the
shorter shape can be right-aligned against the longer one with every paired
extent either equal or 1 (numpy broadcasting).  Mismatches raise ShapeError
instead of numpy's ValueError.

Tensors are treated as immutable once they leave a public function; the
engine never writes into an activation array after construction.  Trainable
parameters are owned by their layer and mutated only by the optimizer
between passes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when tensor extents do not satisfy an operation's contract."""


class DomainError(ValueError):
    """Raised when values fall outside an operation's numeric domain."""


def zeros(shape: Sequence[int]) -> Tensor:
    """All-zero tensor of the given shape; every extent must be >= 1."""
    shape = tuple(shape)
    if len(shape) == 0:
        raise ShapeError("empty shape list")
    if any(int(e) != e or e < 1 for e in shape):
        raise ShapeError(f"extents must be positive integers, got {shape}")
    return np.zeros(shape, dtype=np.float64)


def as_tensor(values) -> Tensor:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(values, dtype=np.float64)


def _broadcastable(a: Tensor, b: Tensor) -> bool:
    for x, y in zip(reversed(a.shape), reversed(b.shape)):
        if x != y and x != 1 and y != 1:
            return False
    return True


def _check_pair(a: Tensor, b: Tensor) -> None:
    if not _broadcastable(a, b):
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b)
    return np.add(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b)
    return np.subtract(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b)
    return np.multiply(a, b)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b)
    return np.maximum(a, b)


def exp(a: Tensor) -> Tensor:
    return np.exp(a)


def ln(a: Tensor) -> Tensor:
    """Natural log; negative entries are a domain error.

    Zero entries are the caller's responsibility: the BM layers substitute
    a finite sentinel for ln 0 before ever calling this.
    """
    a = np.asarray(a)
    if np.any(a < 0):
        raise DomainError("ln of negative input")
    with np.errstate(divide="ignore"):
        return np.log(a)


def relu(a: Tensor) -> Tensor:
    return np.maximum(a, 0.0)


def reduce_max(a: Tensor, axis: int | None = None) -> Tensor:
    return np.max(a, axis=axis)


def argmax(a: Tensor, axis: int) -> Tensor:
    return np.argmax(a, axis=axis)


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major offset of a multi-index."""
    if len(index) != len(shape):
        raise ShapeError(f"index rank {len(index)} != tensor rank {len(shape)}")
    off = 0
    for extent, i in zip(shape, index):
        if not 0 <= i < extent:
            raise ShapeError(f"index {tuple(index)} out of bounds for {tuple(shape)}")
        off = off * extent + i
    return off


def unflatten_index(shape: Sequence[int], offset: int) -> tuple[int, ...]:
    """Inverse of flat_index."""
    idx = []
    for extent in reversed(shape):
        idx.append(offset % extent)
        offset //= extent
    if offset != 0:
        raise ShapeError("offset out of bounds")
    return tuple(reversed(idx))
