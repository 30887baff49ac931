"""On-disk formats: CTSL slice files, paired-slice stems and 8-bit PGM previews.

Slice layout (little-endian): ``b"CTSL"``, version u16, h u32, w u32,
dtype u8 (0 = float32, 1 = float64), then ``h*w`` raw samples row-major.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import DataIOError, FormatError
from .sim import TrainingPair

SLICE_MAGIC = b"CTSL"
SLICE_VERSION = 1
_HEADER = struct.Struct("<4sHIIB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
PAIR_SUFFIXES = ("ldct", "ndct", "clean", "anoise", "tnoise")


def encode_slice(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError(f"slice must be 2-D, got shape {img.shape}")
    code = 0 if img.dtype == np.float32 else 1
    data = np.ascontiguousarray(img, dtype=_DTYPES[code])
    return _HEADER.pack(SLICE_MAGIC, SLICE_VERSION, img.shape[0], img.shape[1], code) + data.tobytes()


def decode_slice(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise FormatError("slice file truncated before header end")
    magic, version, h, w, code = _HEADER.unpack_from(blob)
    if magic != SLICE_MAGIC:
        raise FormatError(f"bad slice magic {magic!r}")
    if version != SLICE_VERSION:
        raise FormatError(f"unsupported slice version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown slice dtype code {code}")
    dt = _DTYPES[code]
    need = _HEADER.size + h * w * dt.itemsize
    if len(blob) != need:
        raise FormatError(f"slice payload is {len(blob)} bytes, expected {need}")
    arr = np.frombuffer(blob, dtype=dt, offset=_HEADER.size).reshape(h, w)
    return arr.astype(dt.newbyteorder("="))


def write_slice(path: str, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_slice(img))


def read_slice(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            return decode_slice(fh.read())
    except FileNotFoundError:
        raise DataIOError(f"missing slice file {path}") from None


def write_pair(stem: str, pair: TrainingPair) -> None:
    for suffix, img in pair.images().items():
        write_slice(f"{stem}.{suffix}", img)


def load_pair_images(stem: str, suffixes=PAIR_SUFFIXES) -> dict[str, np.ndarray]:
    missing = [s for s in suffixes if not os.path.exists(f"{stem}.{s}")]
    if missing:
        raise DataIOError(f"stem {os.path.basename(stem)!r} is missing {', '.join('.' + m for m in missing)}")
    return {s: read_slice(f"{stem}.{s}") for s in suffixes}


def read_pair(stem: str) -> TrainingPair:
    imgs = load_pair_images(stem)
    return TrainingPair(imgs["ldct"], imgs["ndct"], imgs["clean"], imgs["anoise"], imgs["tnoise"])


def to_gray8(img: np.ndarray, lo: float, hi: float, log: bool = False) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if log:
        img, lo, hi = np.log10(np.maximum(img, 1e-300)), np.log10(lo), np.log10(hi)
    scaled = (img - lo) / (hi - lo)
    return np.round(np.clip(scaled, 0.0, 1.0) * 255).astype(np.uint8)


def write_pgm(path: str, gray: np.ndarray) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path: str) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=pos + 1)
    if pixels.size != w * h:
        raise FormatError("PGM payload size mismatch")
    return pixels.reshape(h, w), maxval
