"""Layer primitives with hand-written backward passes.

Convolutions run through im2col + GEMM; ``conv2d_forward_reference`` is the
plain loop version kept as the oracle the fast path is tested against.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError, UnsupportedError
from .tensor import Tensor


@dataclass
class Conv2dParams:
    weight: np.ndarray  # (c_out, c_in, k, k)
    bias: np.ndarray  # (c_out,)
    stride: int = 1
    pad: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ShapeError(f"conv weight must be (c_out, c_in, k, k), got {self.weight.shape}")
        if min(self.weight.shape) < 1:
            raise ShapeError("conv weight dims must be >= 1")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.weight.shape[0]},)")
        if self.stride not in (1, 2):
            raise UnsupportedError(f"stride must be 1 or 2, got {self.stride}")
        if self.pad < 0:
            raise ShapeError("pad must be >= 0")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def k(self) -> int:
        return self.weight.shape[2]


@dataclass
class InstanceNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        if self.eps < 0:
            raise ShapeError("instance norm eps must be >= 0")
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ShapeError("gamma and beta must be vectors of equal length")


@dataclass
class LayerGradients:
    grad_input: Tensor
    grad_params: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class InstanceNormSaved:
    xhat: np.ndarray
    inv_std: np.ndarray  # (n, c, 1, 1)
    gamma: np.ndarray
    shape: tuple


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _conv_out_hw(x: Tensor, p: Conv2dParams) -> tuple[int, int]:
    if x.c != p.c_in:
        raise ShapeError(f"conv expects {p.c_in} input channels, got {x.c}")
    ho = conv_output_size(x.h, p.k, p.stride, p.pad)
    wo = conv_output_size(x.w, p.k, p.stride, p.pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv output would be {ho}x{wo} for input {x.h}x{x.w}")
    return ho, wo


def _pad(a: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for u in range(k):
        for v in range(k):
            cols[:, :, u, v] = xp[:, :, u:u + stride * (ho - 1) + 1:stride,
                                  v:v + stride * (wo - 1) + 1:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(dcols: np.ndarray, padded_shape: tuple, k: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    n, c = padded_shape[:2]
    dcols = dcols.reshape(n, c, k, k, ho, wo)
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    for u in range(k):
        for v in range(k):
            dxp[:, :, u:u + stride * (ho - 1) + 1:stride,
                v:v + stride * (wo - 1) + 1:stride] += dcols[:, :, u, v]
    return dxp


def _is_pointwise(p: Conv2dParams) -> bool:
    return p.k == 1 and p.stride == 1 and p.pad == 0


def conv2d_forward(x: Tensor, p: Conv2dParams) -> Tensor:
    ho, wo = _conv_out_hw(x, p)
    n = x.n
    w2 = p.weight.reshape(p.c_out, -1).astype(x.dtype, copy=False)
    if _is_pointwise(p):
        cols = x.data.reshape(n, p.c_in, -1)
    else:
        cols = _im2col(_pad(x.data, p.pad), p.k, p.stride, ho, wo)
    out = np.matmul(w2, cols)
    out += p.bias.astype(x.dtype, copy=False)[:, None]
    return Tensor(out.reshape(n, p.c_out, ho, wo))


def conv2d_backward(x: Tensor, p: Conv2dParams, grad_out: Tensor) -> LayerGradients:
    ho, wo = _conv_out_hw(x, p)
    n = x.n
    if grad_out.shape != (n, p.c_out, ho, wo):
        raise ShapeError(f"conv grad_out shape {grad_out.shape} != {(n, p.c_out, ho, wo)}")
    g = grad_out.data.reshape(n, p.c_out, ho * wo)
    w2 = p.weight.reshape(p.c_out, -1).astype(x.dtype, copy=False)
    if _is_pointwise(p):
        cols = x.data.reshape(n, p.c_in, -1)
    else:
        xp = _pad(x.data, p.pad)
        cols = _im2col(xp, p.k, p.stride, ho, wo)
    grad_w = np.zeros_like(w2)
    for i in range(n):
        grad_w += g[i] @ cols[i].T
    grad_b = g.sum(axis=(0, 2))
    dcols = np.matmul(w2.T, g)
    if _is_pointwise(p):
        dx = dcols.reshape(x.shape)
    else:
        dxp = _col2im(dcols, xp.shape, p.k, p.stride, ho, wo)
        dx = dxp[:, :, p.pad:p.pad + x.h, p.pad:p.pad + x.w] if p.pad else dxp
    return LayerGradients(Tensor(dx), {"weight": grad_w.reshape(p.weight.shape).astype(p.weight.dtype, copy=False),
                                       "bias": grad_b.astype(p.bias.dtype, copy=False)})


def conv2d_forward_reference(x: Tensor, p: Conv2dParams) -> Tensor:
    """Direct six-loop convolution. Slow; used only to check the fast path."""
    ho, wo = _conv_out_hw(x, p)
    xp = _pad(x.data, p.pad)
    out = np.zeros((x.n, p.c_out, ho, wo), dtype=x.dtype)
    for b in range(x.n):
        for o in range(p.c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = float(p.bias[o])
                    for c in range(p.c_in):
                        for u in range(p.k):
                            for v in range(p.k):
                                acc += xp[b, c, i * p.stride + u, j * p.stride + v] * p.weight[o, c, u, v]
                    out[b, o, i, j] = acc
    return Tensor(out)


def instance_norm_forward(x: Tensor, p: InstanceNormParams) -> tuple[Tensor, InstanceNormSaved]:
    if x.c != p.gamma.shape[0]:
        raise ShapeError(f"instance norm has {p.gamma.shape[0]} channels, input has {x.c}")
    a = x.data
    mu = a.mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    centered = a - mu.astype(a.dtype)
    var = np.mean(np.square(centered), axis=(2, 3), keepdims=True, dtype=np.float64)
    inv_std = (1.0 / np.sqrt(var + p.eps)).astype(a.dtype)
    xhat = centered * inv_std
    gamma = p.gamma.astype(a.dtype, copy=False)
    out = xhat * gamma[None, :, None, None] + p.beta.astype(a.dtype, copy=False)[None, :, None, None]
    return Tensor(out), InstanceNormSaved(xhat, inv_std, gamma, x.shape)


def instance_norm_backward(saved: InstanceNormSaved, grad_out: Tensor) -> LayerGradients:
    if not isinstance(saved, InstanceNormSaved) or grad_out.shape != saved.shape:
        raise ContractError("instance_norm_backward: saved statistics do not match grad_out")
    g = grad_out.data
    xhat = saved.xhat
    dgamma = np.sum(g * xhat, axis=(0, 2, 3), dtype=np.float64)
    dbeta = np.sum(g, axis=(0, 2, 3), dtype=np.float64)
    dxhat = g * saved.gamma[None, :, None, None]
    m1 = dxhat.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(g.dtype)
    m2 = np.mean(dxhat * xhat, axis=(2, 3), keepdims=True, dtype=np.float64).astype(g.dtype)
    dx = saved.inv_std * (dxhat - m1 - xhat * m2)
    return LayerGradients(Tensor(dx), {"gamma": dgamma.astype(g.dtype), "beta": dbeta.astype(g.dtype)})


def relu_forward(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.data, 0))


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    if x.shape != grad_out.shape:
        raise ShapeError("relu_backward: shape mismatch")
    return Tensor(np.where(x.data > 0, grad_out.data, 0).astype(grad_out.dtype, copy=False))


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row d holds the half-pixel-centre bilinear weights for output sample d."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1)
    i0 = np.floor(s).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = s - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - f)
    np.add.at(m, (rows, i1), f)
    return m.astype(dtype)


_INTERP_CACHE: dict = {}


def _interp(n_in: int, n_out: int, dtype) -> np.ndarray:
    key = (n_in, n_out, np.dtype(dtype).str)
    m = _INTERP_CACHE.get(key)
    if m is None:
        m = _INTERP_CACHE[key] = interp_matrix(n_in, n_out, dtype)
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < x.h or out_w < x.w:
        raise UnsupportedError(f"bilinear_upsample cannot shrink {x.h}x{x.w} to {out_h}x{out_w}")
    if (out_h, out_w) == (x.h, x.w):
        return Tensor(x.data.copy())
    mh = _interp(x.h, out_h, x.dtype)
    mw = _interp(x.w, out_w, x.dtype)
    return Tensor(np.matmul(np.matmul(mh, x.data), mw.T))


def bilinear_backward(in_hw: tuple[int, int], grad_out: Tensor) -> Tensor:
    h, w = in_hw
    if (grad_out.h, grad_out.w) == (h, w):
        return Tensor(grad_out.data.copy())
    mh = _interp(h, grad_out.h, grad_out.dtype)
    mw = _interp(w, grad_out.w, grad_out.dtype)
    return Tensor(np.matmul(np.matmul(mh.T, grad_out.data), mw))
