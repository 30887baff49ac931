"""Binary checkpoints.

Layout (little-endian): ``b"CTDN"``, version u16, JSON header (u32 length +
UTF-8, sorted keys), iteration u64, parameter count u32, then per parameter:
name (u16 length + UTF-8), dtype u8, ndim u8, dims u32 each, raw data.
A trailing u8 flags optimizer state: step u64 followed by the first- and
second-moment arrays in parameter order.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .arch import ModelGraph, build_model, config_from_meta
from .errors import ConfigError, DataIOError, FormatError
from .optim import AdamState

MAGIC = b"CTDN"
VERSION = 1
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class Checkpoint:
    graph: ModelGraph
    iteration: int = 0
    state: AdamState | None = None
    run_hash: str = ""


def _write_array(out: io.BufferedIOBase, arr: np.ndarray) -> None:
    out.write(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())


def dumps(ckpt: Checkpoint) -> bytes:
    g = ckpt.graph
    header = {"kind": g.meta["kind"], "config": g.meta["config"], "config_hash": g.meta["config_hash"],
              "dtype": g.meta["dtype"], "run_hash": ckpt.run_hash}
    blob = json.dumps(header, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob)
    out.write(struct.pack("<QI", ckpt.iteration, len(g.params)))
    for name, arr in g.params.items():
        raw = name.encode()
        out.write(struct.pack("<HBB", len(raw), _CODES[arr.dtype], arr.ndim) + raw)
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        _write_array(out, arr)
    st = ckpt.state
    if st is not None and st.m:
        out.write(struct.pack("<BQ", 1, st.t))
        for table in (st.m, st.v):
            for name in g.params:
                _write_array(out, table[name])
    else:
        out.write(struct.pack("<B", 0))
    return out.getvalue()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob, self.pos = blob, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("checkpoint truncated")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: np.dtype, shape) -> np.ndarray:
        n = int(np.prod(shape)) * dtype.itemsize
        return np.frombuffer(self.take(n), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def loads(blob: bytes) -> Checkpoint:
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise FormatError("not a ctdf checkpoint (bad magic)")
    version, hlen = r.unpack("<HI")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    header = json.loads(r.take(hlen))
    kind, cfg = config_from_meta(header)
    g = build_model(kind, cfg, dtype=np.dtype(header["dtype"]))
    if g.meta["config_hash"] != header["config_hash"]:
        raise FormatError("checkpoint architecture hash does not match its stored config")
    iteration, count = r.unpack("<QI")
    params = {}
    for _ in range(count):
        nlen, code, ndim = r.unpack("<HBB")
        name = r.take(nlen).decode()
        shape = r.unpack(f"<{ndim}I")
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code} for {name}")
        params[name] = r.array(_DTYPES[code], shape)
    if list(params) != list(g.params) or any(params[k].shape != g.params[k].shape for k in params):
        raise FormatError("checkpoint parameters do not match the architecture")
    g.params.update(params)
    state = None
    (flag,) = r.unpack("<B")
    if flag:
        (t,) = r.unpack("<Q")
        m = {k: r.array(_DTYPES[_CODES[p.dtype]], p.shape) for k, p in g.params.items()}
        v = {k: r.array(_DTYPES[_CODES[p.dtype]], p.shape) for k, p in g.params.items()}
        state = AdamState(m, v, t)
    if r.pos != len(blob):
        raise FormatError("trailing bytes after checkpoint payload")
    return Checkpoint(g, iteration, state, header.get("run_hash", ""))


def save(path: str, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path: str, expect_hash: str | None = None) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            ckpt = loads(fh.read())
    except FileNotFoundError:
        raise DataIOError(f"checkpoint not found: {path}") from None
    if expect_hash is not None and ckpt.run_hash != expect_hash:
        raise ConfigError("checkpoint was trained with a different configuration (hash mismatch)")
    return ckpt
