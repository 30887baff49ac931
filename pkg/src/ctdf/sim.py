"""Desk-scale paired LDCT/NDCT simulator.

Ellipse phantoms in shifted-HU units (stored = HU + 1000), a parallel-beam
Radon transform, Poisson noise in the counts domain for the full-dose scan,
incremental Gaussian noise for the reduced-dose scan, and Ram-Lak FBP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, ShapeError
from .fft import fft, ifft, next_pow2

MU_WATER = 0.02  # attenuation per pixel of stored value 1000
WATER = 1000.0
# Pair images live on a dyadic grid so sums and differences of them are exact.
GRID = 2.0 ** -30


@dataclass
class PhantomSpec:
    size: int = 64
    n_ellipses: int = 6
    contrast_range: tuple[float, float] = (-400.0, 400.0)
    lesion: bool = False
    body_radius: float = 0.45  # fraction of size

    def validate(self) -> None:
        if self.size < 32:
            raise ConfigError(f"phantom size must be >= 32, got {self.size}")
        if self.n_ellipses < 0:
            raise ConfigError("n_ellipses must be >= 0")
        if not 0 < self.body_radius <= 0.5:
            raise ConfigError("body_radius must lie in (0, 0.5]")


@dataclass
class Ellipse:
    cx: float  # pixels from the image centre, +x to the right
    cy: float  # pixels from the image centre, +y upward
    a: float
    b: float
    theta: float
    value: float  # added to the stored value inside the ellipse
    lesion: bool = False

    def area(self) -> float:
        return math.pi * self.a * self.b


@dataclass
class SimConfig:
    I0: float = 1e5
    dose_fraction: float = 0.25
    n_angles: int = 128
    n_det: int = 96

    def validate(self) -> None:
        if not self.I0 > 0:
            raise ConfigError("I0 must be > 0")
        if not 0 < self.dose_fraction < 1:
            raise ConfigError("dose_fraction must lie in (0, 1)")
        if self.n_angles < 1 or self.n_det < 1:
            raise ConfigError("n_angles and n_det must be >= 1")


@dataclass
class Sinogram:
    data: np.ndarray  # (n_angles, n_det) line integrals
    angles: np.ndarray

    @property
    def n_angles(self) -> int:
        return self.data.shape[0]

    @property
    def n_det(self) -> int:
        return self.data.shape[1]

    def like(self, data: np.ndarray) -> "Sinogram":
        return Sinogram(data, self.angles)


@dataclass
class TrainingPair:
    ldct: np.ndarray
    ndct: np.ndarray
    clean: np.ndarray
    added_noise: np.ndarray  # ldct - ndct
    target_noise: np.ndarray  # ndct - clean

    @classmethod
    def from_images(cls, ldct, ndct, clean) -> "TrainingPair":
        ldct, ndct, clean = (quantize(a) for a in (ldct, ndct, clean))
        return cls(ldct, ndct, clean, ldct - ndct, ndct - clean)

    @classmethod
    def from_noise(cls, clean, target_noise, added_noise) -> "TrainingPair":
        clean, tn, an = (quantize(a) for a in (clean, target_noise, added_noise))
        ndct = clean + tn
        return cls(ndct + an, ndct, clean, an, tn)

    def images(self) -> dict[str, np.ndarray]:
        return {"ldct": self.ldct, "ndct": self.ndct, "clean": self.clean,
                "anoise": self.added_noise, "tnoise": self.target_noise}


def quantize(a: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(a, dtype=np.float64) / GRID) * GRID


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return rngmod.stream(seed, 0)


def phantom_ellipses(spec: PhantomSpec, seed) -> list[Ellipse]:
    """Random ellipses, each lying inside the water body."""
    spec.validate()
    rng = _as_rng(seed)
    body = spec.body_radius * spec.size
    lo, hi = spec.contrast_range
    out = []
    for _ in range(spec.n_ellipses):
        a = rng.uniform(0.08, 0.4) * body
        b = rng.uniform(0.3, 1.0) * a
        r = rng.uniform(0.0, body - a)
        phi = rng.uniform(0, 2 * math.pi)
        out.append(Ellipse(r * math.cos(phi), r * math.sin(phi), a, b,
                           rng.uniform(0, math.pi), rng.uniform(lo, hi)))
    if spec.lesion:
        a_max = math.sqrt(0.01) * body  # keeps area <= 1% of the body disk
        a = rng.uniform(0.5, 1.0) * a_max
        b = rng.uniform(0.6, 1.0) * a
        r = rng.uniform(0.0, 0.6 * (body - a))
        phi = rng.uniform(0, 2 * math.pi)
        out.append(Ellipse(r * math.cos(phi), r * math.sin(phi), a, b,
                           rng.uniform(0, math.pi), rng.uniform(20.0, 40.0), lesion=True))
    return out


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    c = (size - 1) / 2
    idx = np.arange(size)
    x = idx[None, :] - c
    y = c - idx[:, None]
    return np.broadcast_to(x, (size, size)), np.broadcast_to(y, (size, size))


SUPERSAMPLE = 4


def rasterize(size: int, body_radius: float, ellipses: list[Ellipse],
              supersample: int = SUPERSAMPLE) -> np.ndarray:
    """Pixel averages of the piecewise-constant phantom over a ``supersample``^2 sub-grid.

    Area-averaging keeps curved edges close to the continuous shapes, so line
    integrals match analytic chord lengths instead of a pixel staircase.
    """
    x0, y0 = _grid(size)
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    acc = np.zeros((size, size))
    for oy in offs:
        for ox in offs:
            x, y = x0 + ox, y0 - oy
            img = np.where(x ** 2 + y ** 2 <= (body_radius * size) ** 2, WATER, 0.0)
            for e in ellipses:
                ct, st = math.cos(e.theta), math.sin(e.theta)
                u = (x - e.cx) * ct + (y - e.cy) * st
                v = -(x - e.cx) * st + (y - e.cy) * ct
                img = img + np.where((u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0, e.value, 0.0)
            acc += np.maximum(img, 0.0)
    return acc / supersample ** 2


def make_phantom(spec: PhantomSpec, seed) -> np.ndarray:
    return rasterize(spec.size, spec.body_radius, phantom_ellipses(spec, seed))


def sample_bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear lookup at fractional (row, col); the image is zero outside its support."""
    h, w = img.shape
    padded = np.zeros((h + 2, w + 2), dtype=np.float64)
    padded[1:-1, 1:-1] = img
    r = np.clip(rows + 1.0, 0.0, h + 1.0)
    c = np.clip(cols + 1.0, 0.0, w + 1.0)
    r0 = np.minimum(np.floor(r).astype(np.intp), h)
    c0 = np.minimum(np.floor(c).astype(np.intp), w)
    fr = r - r0
    fc = c - c0
    top = padded[r0, c0] * (1 - fc) + padded[r0, c0 + 1] * fc
    bot = padded[r0 + 1, c0] * (1 - fc) + padded[r0 + 1, c0 + 1] * fc
    return top * (1 - fr) + bot * fr


def angles_for(n_angles: int) -> np.ndarray:
    return np.arange(n_angles) * (math.pi / n_angles)


def detector_positions(n_det: int) -> np.ndarray:
    return np.arange(n_det) - (n_det - 1) / 2


def to_attenuation(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) * (MU_WATER / WATER)


def from_attenuation(mu: np.ndarray) -> np.ndarray:
    return mu * (WATER / MU_WATER)


def radon(img: np.ndarray, n_angles: int, n_det: int, step: float = 0.5) -> Sinogram:
    """Parallel-beam line integrals of attenuation, rays sampled every ``step`` pixels."""
    if n_angles < 1 or n_det < 1:
        raise ConfigError("n_angles and n_det must be >= 1")
    mu = to_attenuation(img)
    h, w = mu.shape
    half = math.ceil(math.hypot(h, w) / 2 / step) * step + step
    s = np.arange(-half, half + step / 2, step)
    t = detector_positions(n_det)
    angles = angles_for(n_angles)
    out = np.empty((n_angles, n_det))
    cr, cc = (h - 1) / 2, (w - 1) / 2
    for i, th in enumerate(angles):
        ct, st = math.cos(th), math.sin(th)
        x = t[:, None] * ct - s[None, :] * st
        y = t[:, None] * st + s[None, :] * ct
        out[i] = sample_bilinear(mu, cr - y, x + cc).sum(axis=1) * step
    return Sinogram(out, angles)


def insert_noise(sino: Sinogram, I0: float, dose_fraction: float, seed) -> Sinogram:
    """Poisson counts at ``dose_fraction * I0`` photons, converted back to line integrals."""
    if not I0 > 0:
        raise ConfigError(f"I0 must be > 0, got {I0}")
    if not 0 < dose_fraction <= 1:
        raise ConfigError(f"dose_fraction must lie in (0, 1], got {dose_fraction}")
    rng = _as_rng(seed)
    blank = dose_fraction * I0
    counts = rng.poisson(blank * np.exp(-sino.data))
    return sino.like(np.log(blank / np.maximum(counts, 1)))


def extra_variance(clean_p: np.ndarray, I0: float, dose_fraction: float) -> np.ndarray:
    """Delta-method variance gap between the reduced-dose and full-dose scans."""
    return np.exp(clean_p) * (1.0 / (dose_fraction * I0) - 1.0 / I0)


def make_ldct_from_ndct(ndct_sino: Sinogram, clean_sino: Sinogram, I0: float,
                        dose_fraction: float, seed) -> Sinogram:
    if ndct_sino.data.shape != clean_sino.data.shape:
        raise ShapeError("NDCT and clean sinograms differ in shape")
    if not I0 > 0:
        raise ConfigError(f"I0 must be > 0, got {I0}")
    if not 0 < dose_fraction < 1:
        raise ConfigError(f"dose_fraction must lie in (0, 1), got {dose_fraction}")
    rng = _as_rng(seed)
    sd = np.sqrt(extra_variance(clean_sino.data, I0, dose_fraction))
    return ndct_sino.like(ndct_sino.data + rng.standard_normal(sd.shape) * sd)


def ramp_kernel(n: int) -> np.ndarray:
    """Spatial Ram-Lak kernel for unit detector spacing, indices -n+1 .. n-1."""
    k = np.arange(-n + 1, n)
    h = np.zeros(k.shape)
    h[k == 0] = 0.25
    odd = k % 2 == 1
    h[odd] = -1.0 / (math.pi * k[odd]) ** 2
    return h


def ramp_filter(data: np.ndarray) -> np.ndarray:
    n_det = data.shape[-1]
    kern = ramp_kernel(n_det)
    size = next_pow2(len(kern) + n_det - 1)
    kp = np.zeros(size)
    kp[:len(kern)] = kern
    dp = np.zeros(data.shape[:-1] + (size,))
    dp[..., :n_det] = data
    full = ifft(fft(dp) * fft(kp)).real
    return full[..., n_det - 1:2 * n_det - 1]


def fbp(sino: Sinogram, out_size: int) -> np.ndarray:
    """Ram-Lak filtered backprojection onto an ``out_size`` square, in stored-HU."""
    if sino.n_det < out_size:
        raise ConfigError(f"n_det ({sino.n_det}) must be >= out_size ({out_size})")
    q = ramp_filter(sino.data)
    x, y = _grid(out_size)
    t0 = (sino.n_det - 1) / 2
    mu = np.zeros((out_size, out_size))
    cols = np.arange(sino.n_det)
    for i, th in enumerate(sino.angles):
        pos = x * math.cos(th) + y * math.sin(th) + t0
        mu += np.interp(pos, cols, q[i], left=0.0, right=0.0)
    return from_attenuation(mu * (math.pi / sino.n_angles))


def gen_pair(spec: PhantomSpec, sim: SimConfig, seed: int, index: int = 0) -> TrainingPair:
    """Simulate one (LDCT, NDCT, clean) triple; streams keyed by ``(seed, index)``."""
    spec.validate()
    sim.validate()
    phantom = make_phantom(spec, rngmod.stream(seed, rngmod.PHANTOM, index))
    clean_sino = radon(phantom, sim.n_angles, sim.n_det)
    ndct_sino = insert_noise(clean_sino, sim.I0, 1.0, rngmod.stream(seed, rngmod.NDCT_NOISE, index))
    ldct_sino = make_ldct_from_ndct(ndct_sino, clean_sino, sim.I0, sim.dose_fraction,
                                    rngmod.stream(seed, rngmod.LDCT_NOISE, index))
    # FBP is linear: each noise image is the reconstruction of its sinogram increment.
    # "clean" is the noiseless reconstruction, so target noise carries no FBP blur.
    recon = fbp(clean_sino, spec.size)
    target = fbp(ndct_sino.like(ndct_sino.data - clean_sino.data), spec.size)
    added = fbp(ldct_sino.like(ldct_sino.data - ndct_sino.data), spec.size)
    return TrainingPair.from_noise(recon, target, added)
