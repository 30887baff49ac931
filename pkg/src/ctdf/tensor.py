"""Dense 4-D tensors (batch, channel, height, width).

A thin value type over a C-contiguous numpy array. There is deliberately no
broadcasting: every binary op demands identical shapes and dtypes.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError

DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        data = np.ascontiguousarray(data)
        if data.ndim != 4:
            raise ShapeError(f"tensor must be 4-D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ShapeError(f"all tensor dims must be >= 1, got {data.shape}")
        if data.dtype not in DTYPES:
            raise ShapeError(f"unsupported dtype {data.dtype}; use float32 or float64")
        self.data = data

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    n = property(lambda self: self.data.shape[0])
    c = property(lambda self: self.data.shape[1])
    h = property(lambda self: self.data.shape[2])
    w = property(lambda self: self.data.shape[3])

    def numpy(self) -> np.ndarray:
        return self.data

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (self.shape == other.shape and self.dtype == other.dtype
                and bool(np.array_equal(self.data, other.data)))

    __hash__ = None  # type: ignore[assignment]


def tensor_new(shape: Sequence[int], fill: float = 0.0, dtype=np.float64) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"shape must have 4 dims, got {shape}")
    if min(shape) < 1:
        raise ShapeError(f"all dims must be >= 1, got {shape}")
    return Tensor(np.full(shape, fill, dtype=dtype))


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"{what}: dtype mismatch {a.dtype} vs {b.dtype}")


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return Tensor(a.data + b.data)


def elementwise_sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return Tensor(a.data - b.data)


def scale(a: Tensor, k: float) -> Tensor:
    return Tensor(a.data * a.dtype.type(k))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    dtype = parts[0].dtype
    for p in parts[1:]:
        if (p.n, p.h, p.w) != (n, h, w):
            raise ShapeError(f"concat_channels: {p.shape} incompatible with n,h,w={(n, h, w)}")
        if p.dtype != dtype:
            raise ShapeError("concat_channels: mixed dtypes")
    if len(parts) == 1:
        return parts[0]
    return Tensor(np.concatenate([p.data for p in parts], axis=1))


def channel_slice(t: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= t.c:
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for {t.c} channels")
    return Tensor(t.data[:, start:stop])


def split_channels(t: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != t.c:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to {t.c}")
    out, start = [], 0
    for s in sizes:
        out.append(channel_slice(t, start, start + s))
        start += s
    return out


def _flat(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return arr.reshape(-1)


def flat_dot(a, b) -> float:
    """Inner product over all elements, accumulated in float64."""
    fa, fb = _flat(a), _flat(b)
    if fa.size != fb.size:
        raise ShapeError(f"flat_dot: element counts differ ({fa.size} vs {fb.size})")
    return float(np.dot(fa.astype(np.float64, copy=False), fb.astype(np.float64, copy=False)))


def flat_norm(a) -> float:
    return float(np.sqrt(flat_dot(a, a)))
