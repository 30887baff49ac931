"""Normalization, paired augmentation and train/validation manifests."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, FormatError
from .sim import TrainingPair, sample_bilinear
from .tensor import Tensor

SCALE = 2000.0


def normalize(img: np.ndarray, dtype=np.float64) -> Tensor:
    img = np.asarray(img)
    return Tensor((img / SCALE).astype(dtype)[None, None])


def denormalize(t: Tensor) -> np.ndarray:
    return t.data[0, 0].astype(np.float64) * SCALE


@dataclass
class AugmentParams:
    max_translate: int = 16
    rotate_range: float = 10.0  # degrees, symmetric
    target_size: int = 64

    def validate(self) -> None:
        if self.max_translate < 0 or self.max_translate >= self.target_size:
            raise ConfigError("max_translate must lie in [0, target_size)")
        if self.rotate_range < 0:
            raise ConfigError("rotate_range must be >= 0")

    @classmethod
    def for_size(cls, size: int) -> "AugmentParams":
        return cls(max_translate=size // 4, rotate_range=10.0, target_size=size)


@dataclass(frozen=True)
class Transform:
    dy: int
    dx: int
    degrees: float


def draw_transform(p: AugmentParams, seed) -> Transform:
    rng = seed if isinstance(seed, np.random.Generator) else rngmod.stream(seed, rngmod.AUGMENT)
    dy, dx = (int(v) for v in rng.integers(-p.max_translate, p.max_translate + 1, size=2))
    deg = float(rng.uniform(-p.rotate_range, p.rotate_range)) if p.rotate_range > 0 else 0.0
    return Transform(dy, dx, deg)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image centre with bilinear resampling and zero fill."""
    if degrees == 0.0:
        return img
    h, w = img.shape
    cr, cc = (h - 1) / 2, (w - 1) / 2
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    y, x = cr - rows, cols - cc
    th = math.radians(degrees)
    # inverse map: rotate output coordinates back by -theta
    xs = x * math.cos(th) + y * math.sin(th)
    ys = -x * math.sin(th) + y * math.cos(th)
    return sample_bilinear(img, cr - ys, xs + cc)


def place(img: np.ndarray, size: int, dy: int, dx: int) -> np.ndarray:
    """Centre ``img`` on a zero canvas of ``size``, shifted by (dy, dx), cropping overflow."""
    h, w = img.shape
    out = np.zeros((size, size), dtype=img.dtype)
    top = (size - h) // 2 + dy
    left = (size - w) // 2 + dx
    r0, r1 = max(top, 0), min(top + h, size)
    c0, c1 = max(left, 0), min(left + w, size)
    if r0 < r1 and c0 < c1:
        out[r0:r1, c0:c1] = img[r0 - top:r1 - top, c0 - left:c1 - left]
    return out


def apply_transform(img: np.ndarray, tf: Transform, size: int) -> np.ndarray:
    return place(rotate(img, tf.degrees), size, tf.dy, tf.dx)


def augment(pair: TrainingPair, p: AugmentParams, seed, return_transform: bool = False):
    """Apply one random rigid transform to every image of ``pair``.

    Noise fields are recomputed from the transformed images, not resampled.
    """
    p.validate()
    tf = draw_transform(p, seed)
    if tf == Transform(0, 0, 0.0) and pair.ldct.shape == (p.target_size, p.target_size):
        out = pair
    else:
        out = TrainingPair.from_images(*(apply_transform(a, tf, p.target_size)
                                         for a in (pair.ldct, pair.ndct, pair.clean)))
    return (out, tf) if return_transform else out


@dataclass
class DatasetManifest:
    train: list[str]
    val: list[str]
    seed: int = 0
    root: str = field(default=".", compare=False)

    def __post_init__(self):
        if set(self.train) & set(self.val):
            raise ConfigError("train and validation stems overlap")

    @property
    def entries(self) -> list[str]:
        return self.train + self.val

    def path(self, stem: str) -> str:
        return os.path.join(self.root, stem)

    def dumps(self) -> str:
        lines = [f"# seed={self.seed}", "[train]", *self.train, "[val]", *self.val]
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def read(cls, path: str) -> "DatasetManifest":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        m = cls.loads(text)
        m.root = os.path.dirname(os.path.abspath(path))
        return m

    @classmethod
    def loads(cls, text: str) -> "DatasetManifest":
        seed, section = 0, None
        sections: dict[str, list[str]] = {"train": [], "val": []}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key.strip() == "seed":
                    seed = int(val)
                continue
            if line in ("[train]", "[val]"):
                section = line[1:-1]
                continue
            if section is None:
                raise FormatError(f"manifest entry {line!r} before any section header")
            sections[section].append(line)
        return cls(sections["train"], sections["val"], seed)


def split_manifest(stems: list[str], ratio: float = 0.8, seed: int = 0) -> DatasetManifest:
    if not stems:
        raise ConfigError("cannot split an empty stem list")
    if not 0 < ratio < 1:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    order = rngmod.stream(seed, rngmod.SPLIT).permutation(len(stems))
    shuffled = [stems[i] for i in order]
    n_train = math.ceil(ratio * len(stems) - 1e-9)
    return DatasetManifest(shuffled[:n_train], shuffled[n_train:], seed)
