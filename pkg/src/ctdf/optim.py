"""MSE loss, Adam and a piecewise-constant learning-rate schedule."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Mapping, MutableMapping

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor


def mse_loss(pred: Tensor, target: Tensor) -> tuple[float, Tensor]:
    """Per-element mean squared error and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    loss = float(np.dot(diff.reshape(-1).astype(np.float64), diff.reshape(-1).astype(np.float64)) / n)
    return loss, Tensor(diff * pred.dtype.type(2.0 / n))


@dataclass
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if not self.eps > 0 or not self.lr > 0:
            raise ConfigError("Adam eps and lr must be > 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: MutableMapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, hyper: AdamHyper, lr: float | None = None) -> None:
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    if set(grads) != set(params):
        raise ShapeError(f"gradient blocks {sorted(set(grads) ^ set(params))} do not match params")
    if not state.m:
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
    lr = hyper.lr if lr is None else lr
    t = state.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, param has {p.shape}")
        m, v = state.m[name], state.v[name]
        dt = p.dtype.type
        m *= dt(b1)
        m += dt(1.0 - b1) * g
        v *= dt(b2)
        v += dt(1.0 - b2) * np.square(g)
        denom = np.sqrt(v / dt(c2))
        denom += dt(hyper.eps)
        p -= dt(lr) * (m / dt(c1)) / denom
    state.t = t


@dataclass
class LrSchedule:
    milestones: list[tuple[int, float]]

    def __post_init__(self):
        ms = [(int(i), float(lr)) for i, lr in self.milestones]
        if not ms:
            raise ConfigError("learning-rate schedule needs at least one milestone")
        if ms[0][0] != 0:
            raise ConfigError("first learning-rate milestone must be at iteration 0")
        its = [i for i, _ in ms]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ConfigError("learning-rate milestones must be strictly increasing")
        if any(lr <= 0 for _, lr in ms):
            raise ConfigError("learning rates must be > 0")
        self.milestones = ms

    @classmethod
    def parse(cls, text: str) -> "LrSchedule":
        """Parse ``"0:1e-4, 50000:1e-5"``."""
        pairs = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                it, lr = chunk.split(":")
                pairs.append((int(it), float(lr)))
            except ValueError:
                raise ConfigError(f"bad milestone {chunk!r}; expected ITER:LR") from None
        return cls(pairs)

    def format(self) -> str:
        return ", ".join(f"{i}:{lr!r}" for i, lr in self.milestones)


FULL_SCHEDULE = LrSchedule([(0, 1e-4), (50_000, 1e-5), (75_000, 1e-6)])


def lr_at(iteration: int, sched: LrSchedule) -> float:
    if iteration < 0:
        raise ConfigError("iteration must be >= 0")
    its = [i for i, _ in sched.milestones]
    return sched.milestones[bisect.bisect_right(its, iteration) - 1][1]
