"""Central-difference gradient checking.

The probe is ``L(x, params) = <forward(x, params), R>`` for a fixed random
projection ``R``, so ``grad_y = R`` and every analytic gradient can be
compared against ``<y(+step) - y(-step), R> / (2 * step)``.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import ContractError
from .tensor import Tensor, flat_dot

Forward = Callable[[Tensor, Mapping[str, np.ndarray]], Tensor]
Backward = Callable[[Tensor, Mapping[str, np.ndarray], Tensor], tuple[Tensor, Mapping[str, np.ndarray]]]


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    """``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps exactly-zero gradients (e.g. a conv bias feeding instance
    norm) from turning central-difference round-off (1e-11 to 1e-10 through
    a deep network at step 1e-5) into a large ratio.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(forward: Forward, backward: Backward, x: Tensor,
               params: Mapping[str, np.ndarray] | None = None, step: float = 1e-5,
               seed: int = 0, max_coords: int | None = None,
               check_input: bool = True, floor: float = 1e-5) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``max_coords`` limits how many coordinates of each block are probed
    (chosen at random); ``None`` checks every coordinate.
    """
    if not step > 0:
        raise ContractError(f"grad_check step must be > 0, got {step}")
    params = dict(params or {})
    if x.dtype != np.float64 or any(p.dtype != np.float64 for p in params.values()):
        raise ContractError("grad_check requires float64 input and parameters")
    rng = np.random.default_rng(seed)

    y = forward(x, params)
    proj = Tensor(rng.standard_normal(y.shape))
    grad_x, grad_p = backward(x, params, proj)

    def probe() -> np.ndarray:
        return forward(x, params).data.astype(np.float64)

    def pick(arr: np.ndarray) -> np.ndarray:
        idx = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            idx = rng.choice(arr.size, size=max_coords, replace=False)
        return idx

    worst = 0.0
    blocks = [(params[k], np.asarray(grad_p[k])) for k in params]
    if check_input:
        blocks.append((x.data, grad_x.data))
    for arr, analytic in blocks:
        flat = arr.reshape(-1)
        ana = analytic.reshape(-1)
        for i in pick(arr):
            old = flat[i]
            flat[i] = old + step
            hi = flat[i]
            up = probe()
            flat[i] = old - step
            lo = flat[i]
            down = probe()
            flat[i] = old
            # divide by the step actually taken after rounding, and difference the
            # outputs before projecting so the sum does not cancel
            numeric = flat_dot(Tensor(up - down), proj) / (hi - lo)
            worst = max(worst, relative_error(float(ana[i]), numeric, floor))
    return worst
