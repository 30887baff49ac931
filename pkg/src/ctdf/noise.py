"""Fourier-domain decomposition of the noise a denoiser removes.

removed = LDCT - denoised, added = LDCT - NDCT, target = NDCT - clean. All
comparisons use only the high-frequency band, where noise dominates
structure.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, FormatError, ShapeError, UnsupportedError
from .fft import fft2, ifft2, is_pow2
from .sim import TrainingPair

DEFAULT_CUTOFF = 150 * math.pi / 256


@dataclass(frozen=True)
class HighpassSpec:
    cutoff: float = DEFAULT_CUTOFF

    def __post_init__(self):
        if not 0 <= self.cutoff <= math.pi:
            raise ValueError(f"cutoff must lie in [0, pi], got {self.cutoff}")


def signed_freq(n: int) -> np.ndarray:
    """Angular frequency of each DFT bin, in [-pi, pi)."""
    k = np.arange(n)
    k = np.where(k < n - n // 2, k, k - n)
    return 2 * math.pi * k / n


def highpass_mask(h: int, w: int, spec: HighpassSpec | None = None) -> np.ndarray:
    """Keep a bin when either axis frequency reaches the cutoff (max-norm band)."""
    spec = spec or HighpassSpec()
    wr = np.abs(signed_freq(h))[:, None]
    wc = np.abs(signed_freq(w))[None, :]
    return np.maximum(wr, wc) >= spec.cutoff - 1e-12


def _check(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {img.shape}")
    if not (is_pow2(img.shape[0]) and is_pow2(img.shape[1])):
        raise UnsupportedError(f"image dims must be powers of two, got {img.shape}")
    return img


def highfreq_component(img, spec: HighpassSpec | None = None) -> np.ndarray:
    img = _check(img)
    out = ifft2(fft2(img) * highpass_mask(*img.shape, spec))
    scale = max(float(np.linalg.norm(img)), 1e-300)
    resid = float(np.linalg.norm(out.imag))
    if resid > 1e-9 * scale:
        raise AssertionError(f"high-pass output has imaginary residue {resid:.3e}")
    return out.real


def _bands(*imgs, spec=None) -> list[np.ndarray]:
    imgs = [_check(a) for a in imgs]
    if any(a.shape != imgs[0].shape for a in imgs):
        raise ShapeError("noise images differ in shape")
    return [highfreq_component(a, spec).reshape(-1) for a in imgs]


def _norm(v: np.ndarray, what: str) -> float:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise DegenerateInputError(f"{what} has no high-frequency energy")
    return n


def cosine_corr_highfreq(n1, n2, spec: HighpassSpec | None = None) -> float:
    h1, h2 = _bands(n1, n2, spec=spec)
    c = float(np.dot(h1, h2)) / (_norm(h1, "first image") * _norm(h2, "second image"))
    return min(1.0, max(-1.0, c))


def projection_pct(r, onto, spec: HighpassSpec | None = None) -> float:
    """Scalar projection coefficient of ``r`` on ``onto``, in percent of ``onto``."""
    hr, ho = _bands(r, onto, spec=spec)
    return 100.0 * float(np.dot(hr, ho)) / _norm(ho, "projection target") ** 2


def residual_energy_pct(r, a, t, spec: HighpassSpec | None = None) -> float:
    """Energy left in ``r`` after removing its projections on ``a`` and on ``t`` separately."""
    hr, ha, ht = _bands(r, a, t, spec=spec)
    nr = _norm(hr, "removed noise")
    e = hr - (np.dot(hr, ha) / _norm(ha, "added noise") ** 2) * ha \
        - (np.dot(hr, ht) / _norm(ht, "target noise") ** 2) * ht
    return 100.0 * float(np.dot(e, e)) / nr ** 2


REPORT_FIELDS = ["cos_ra", "cos_rt", "cos_ta", "proj_added_pct", "proj_target_pct", "residual_pct"]


@dataclass
class NoiseReport:
    pair_id: str = ""
    cos_ra: float = math.nan
    cos_rt: float = math.nan
    cos_ta: float = math.nan
    proj_added_pct: float = math.nan
    proj_target_pct: float = math.nan
    residual_pct: float = math.nan
    errors: dict[str, str] = field(default_factory=dict, compare=False)

    def values(self) -> list[float]:
        return [getattr(self, f) for f in REPORT_FIELDS]


def analyze_pair(pair: TrainingPair, denoised, spec: HighpassSpec | None = None,
                 pair_id: str = "") -> NoiseReport:
    """Fill a :class:`NoiseReport`; a degenerate field is NaN with its reason in ``errors``."""
    removed = np.asarray(pair.ldct, dtype=np.float64) - np.asarray(denoised, dtype=np.float64)
    added, target = pair.added_noise, pair.target_noise
    jobs = {
        "cos_ra": lambda: cosine_corr_highfreq(removed, added, spec),
        "cos_rt": lambda: cosine_corr_highfreq(removed, target, spec),
        "cos_ta": lambda: cosine_corr_highfreq(target, added, spec),
        "proj_added_pct": lambda: projection_pct(removed, added, spec),
        "proj_target_pct": lambda: projection_pct(removed, target, spec),
        "residual_pct": lambda: residual_energy_pct(removed, added, target, spec),
    }
    rep = NoiseReport(pair_id)
    for name, job in jobs.items():
        try:
            setattr(rep, name, job())
        except DegenerateInputError as exc:
            rep.errors[name] = str(exc)
    return rep


def ensemble_mean(reports: list[NoiseReport], pair_id: str = "MEAN") -> NoiseReport:
    out = NoiseReport(pair_id)
    for f in REPORT_FIELDS:
        vals = [getattr(r, f) for r in reports if not math.isnan(getattr(r, f))]
        setattr(out, f, float(np.mean(vals)) if vals else math.nan)
    return out


def write_noise_csv(reports: list[NoiseReport], path: str, with_mean: bool = True) -> None:
    rows = list(reports) + ([ensemble_mean(reports)] if with_mean and reports else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", *REPORT_FIELDS])
        for r in rows:
            w.writerow([r.pair_id, *(repr(float(v)) for v in r.values())])


def read_noise_csv(path: str) -> list[NoiseReport]:
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["pair_id", *REPORT_FIELDS]:
            raise FormatError(f"unexpected noise CSV header {header}")
        return [NoiseReport(rec[0], *(float(v) for v in rec[1:])) for rec in reader]
