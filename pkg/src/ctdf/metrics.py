"""RMSE, global SSIM and CNR, plus per-slice evaluation reports.

All metrics operate on stored-HU images (HU + 1000).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigError, DegenerateInputError, FormatError, ShapeError

PAPER = "paper-global"
COVARIANCE = "covariance-global"


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("images are empty")
    return a, b


def rmse(a, b) -> float:
    a, b = _pair(a, b)
    d = (a - b).reshape(-1)
    return math.sqrt(float(np.dot(d, d)) / d.size)


@dataclass
class SsimParams:
    a1: float = 1e-4
    a2: float = 9e-4
    mode: str = PAPER

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0):
            raise ConfigError("SSIM stabilisers a1, a2 must be > 0")
        if self.mode not in (PAPER, COVARIANCE):
            raise ConfigError(f"unknown SSIM mode {self.mode!r}")


def ssim(a, b, p: SsimParams | None = None) -> float:
    """Whole-image SSIM.

    ``paper-global`` uses the product of standard deviations in the
    structure term; ``covariance-global`` uses the covariance.
    """
    p = p or SsimParams()
    a, b = _pair(a, b)
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    var_a, var_b = float(np.mean(da * da)), float(np.mean(db * db))
    # sqrt(v * v) == v exactly, so ssim(x, x) collapses to 1 without round-off
    if p.mode == PAPER:
        cross = math.sqrt(var_a * var_b)
    else:
        cross = float(np.mean(da * db))
    num = (2 * mu_a * mu_b + p.a1) * (2 * cross + p.a2)
    den = (mu_a ** 2 + mu_b ** 2 + p.a1) * (var_a + var_b + p.a2)
    return float(num / den)


@dataclass(frozen=True)
class Roi:
    row: int
    col: int
    height: int
    width: int
    role: str = "foreground"

    def extract(self, img: np.ndarray) -> np.ndarray:
        h, w = img.shape
        if self.height * self.width < 4:
            raise ShapeError("ROI area must be >= 4 pixels")
        if self.row < 0 or self.col < 0 or self.row + self.height > h or self.col + self.width > w:
            raise ShapeError(f"ROI {self} exceeds image bounds {img.shape}")
        return img[self.row:self.row + self.height, self.col:self.col + self.width]


def cnr(img, fg: Roi, bg: Roi) -> float:
    """``2|mu_fg - mu_bg| / |sigma_fg - sigma_bg|`` with population deviations."""
    img = np.asarray(img, dtype=np.float64)
    f, b = fg.extract(img), bg.extract(img)
    denom = abs(float(f.std()) - float(b.std()))
    if denom < 1e-9:
        raise DegenerateInputError("CNR undefined for equal ROI deviations")
    return 2.0 * abs(float(f.mean()) - float(b.mean())) / denom


@dataclass
class SliceMetrics:
    id: str
    rmse_ldct: float
    rmse_out: float
    ssim_paper_ldct: float
    ssim_paper_out: float
    ssim_cov_ldct: float
    ssim_cov_out: float
    cnr_ldct: float | None = field(default=None, compare=False)
    cnr_out: float | None = field(default=None, compare=False)


CSV_FIELDS = ["id", "rmse_ldct", "rmse_out", "ssim_paper_ldct", "ssim_paper_out",
              "ssim_cov_ldct", "ssim_cov_out"]


def slice_metrics(slice_id: str, ldct, denoised, ndct) -> SliceMetrics:
    paper, cov = SsimParams(mode=PAPER), SsimParams(mode=COVARIANCE)
    return SliceMetrics(slice_id, rmse(ldct, ndct), rmse(denoised, ndct),
                        ssim(ldct, ndct, paper), ssim(denoised, ndct, paper),
                        ssim(ldct, ndct, cov), ssim(denoised, ndct, cov))


@dataclass
class MetricsReport:
    rows: list[SliceMetrics]

    def mean(self) -> SliceMetrics:
        if not self.rows:
            raise ConfigError("report has no rows")
        vals = {f: float(np.mean([getattr(r, f) for r in self.rows])) for f in CSV_FIELDS[1:]}
        return SliceMetrics("MEAN", **vals)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in [*self.rows, self.mean()]:
            w.writerow([r.id] + [repr(float(getattr(r, f))) for f in CSV_FIELDS[1:]])
        return buf.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> tuple["MetricsReport", SliceMetrics | None]:
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != CSV_FIELDS:
            raise FormatError(f"unexpected metrics CSV header {header}")
        rows, mean = [], None
        for rec in reader:
            m = SliceMetrics(rec[0], *(float(v) for v in rec[1:]))
            if m.id == "MEAN":
                mean = m
            else:
                rows.append(m)
        return cls(rows), mean

    @classmethod
    def read_csv(cls, path: str):
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


def evaluate_manifest(manifest, denoise: Callable[[np.ndarray], np.ndarray],
                      stems: Iterable[str] | None = None, workers: int = 1) -> MetricsReport:
    """Score ``denoise`` on every validation slice of ``manifest`` against its NDCT."""
    from concurrent.futures import ThreadPoolExecutor

    from .fileio import load_pair_images

    stems = list(manifest.val if stems is None else stems)
    if not stems:
        raise ConfigError("validation manifest is empty")

    def one(stem: str) -> SliceMetrics:
        imgs = load_pair_images(manifest.path(stem), ("ldct", "ndct"))
        return slice_metrics(stem, imgs["ldct"], denoise(imgs["ldct"]), imgs["ndct"])

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(one, stems))
    else:
        rows = [one(s) for s in stems]
    return MetricsReport(rows)


def write_curves_csv(report: MetricsReport, path: str) -> None:
    """Slice index against RMSE/SSIM, the data behind the per-slice curves figure."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "id", "rmse_ldct", "rmse_out", "ssim_ldct", "ssim_out"])
        for i, r in enumerate(report.rows):
            w.writerow([i, r.id, repr(r.rmse_ldct), repr(r.rmse_out),
                        repr(r.ssim_paper_ldct), repr(r.ssim_paper_out)])
