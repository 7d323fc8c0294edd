"""Dense tensor helpers on top of numpy ndarrays.

Tensors are plain row-major numpy arrays. Training runs in float32; passing
``dtype=np.float64`` everywhere promotes the stack for finite-difference
gradient checks (numpy ops preserve the dtype of their operands, so promoting
the parameters promotes everything downstream).
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import ParameterError, ShapeError
from .rng import Rng

DEFAULT_DTYPE = np.float32


def tensor_new(shape: Sequence[int], fill: float = 0.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Row-major tensor of the given shape, every element equal to fill."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return np.full(shape, fill, dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def he_init(shape: Sequence[int], fan_in: int, rng: Rng, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Normal draws with std sqrt(2/fan_in), from the documented Box-Muller path."""
    if fan_in < 1:
        raise ParameterError(f"fan_in must be >= 1, got {fan_in}")
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    n = int(np.prod(shape))
    std = np.sqrt(2.0 / fan_in)
    return (rng.normal(n) * std).reshape(shape).astype(dtype)
