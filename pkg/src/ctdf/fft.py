"""Iterative radix-2 Cooley-Tukey FFT, vectorised over leading axes."""
from __future__ import annotations

import numpy as np

from .errors import UnsupportedError


def is_pow2(n: int) -> bool:
    return n >= 1 and not n & (n - 1)


def next_pow2(n: int) -> int:
    return 1 << max(0, (int(n) - 1).bit_length())


_BITREV: dict[int, np.ndarray] = {}


def _bitrev(n: int) -> np.ndarray:
    perm = _BITREV.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        perm = np.zeros(n, dtype=np.intp)
        for b in range(bits):
            perm |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV[n] = perm
    return perm


def fft(a, axis: int = -1, inverse: bool = False) -> np.ndarray:
    """Unnormalised DFT along ``axis`` (inverse uses ``e^{+i}`` and no 1/N)."""
    x = np.moveaxis(np.asarray(a, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    if not is_pow2(n):
        raise UnsupportedError(f"radix-2 FFT needs a power-of-two length, got {n}")
    x = x[..., _bitrev(n)].copy()
    sign = 1.0 if inverse else -1.0
    lead = x.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = x.reshape(*lead, n // size, size)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return np.moveaxis(x, -1, axis)


def ifft(a, axis: int = -1) -> np.ndarray:
    x = fft(a, axis=axis, inverse=True)
    return x / x.shape[axis]


def fft2(img) -> np.ndarray:
    """2-D DFT of the last two axes, rows first then columns; DC at (0, 0)."""
    return fft(fft(img, axis=-1), axis=-2)


def ifft2(spec) -> np.ndarray:
    x = fft(fft(spec, axis=-1, inverse=True), axis=-2, inverse=True)
    return x / (x.shape[-1] * x.shape[-2])
