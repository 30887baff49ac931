"""HRNet and UNet denoisers as explicit computation graphs.

A :class:`ModelGraph` is a topologically ordered node list plus a flat
``name -> ndarray`` parameter map. ``model_forward`` executes it and
optionally records a tape; ``model_backward`` walks the tape in reverse.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, ContractError, CtdfError, ShapeError
from .layers import (Conv2dParams, InstanceNormParams, bilinear_backward, bilinear_upsample,
                     conv2d_backward, conv2d_forward, instance_norm_backward, instance_norm_forward,
                     relu_backward, relu_forward)
from .tensor import Tensor, concat_channels, split_channels


# The predictor sees the fused features plus the input image itself. Its input
# channel starts as an exact pass-through (centre tap 1) and the feature weights
# start small, so the untrained model is close to ReLU(input) and training
# learns the correction rather than rebuilding absolute intensities that every
# instance norm discards.
OUTPUT_GAIN = 0.01


@dataclass
class HrnetConfig:
    branches: int = 4
    channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    stages: int = 4
    input_skip: bool = True
    convs_per_stage: int = 2

    def validate(self) -> None:
        if self.branches < 2:
            raise ConfigError("HRNet needs at least 2 branches")
        if len(self.channels) != self.branches:
            raise ConfigError(f"{len(self.channels)} channel widths given for {self.branches} branches")
        if min(self.channels) < 1:
            raise ConfigError("channel widths must be >= 1")
        if self.stages < self.branches:
            raise ConfigError(f"stages ({self.stages}) must be >= branches ({self.branches}); "
                              "one branch is added per stage boundary")
        if self.convs_per_stage != 2:
            raise ConfigError("convs_per_stage is fixed at 2")


@dataclass
class UnetConfig:
    init_channels: int = 32
    max_channels: int = 512
    input_size: int = 64

    def validate(self) -> None:
        s = self.input_size
        if s < 8 or s & (s - 1):
            raise ConfigError(f"UNet input_size must be a power of two >= 8, got {s}")
        if self.init_channels < 1 or self.max_channels < self.init_channels:
            raise ConfigError("UNet needs 1 <= init_channels <= max_channels")


@dataclass
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    block: str | None = None
    attrs: dict[str, Any] = field(default_factory=dict)


@dataclass
class ModelGraph:
    nodes: list[Node]
    params: dict[str, np.ndarray]
    meta: dict[str, Any]

    def __post_init__(self):
        self.validate()

    @property
    def output(self) -> int:
        return self.nodes[-1].id

    def validate(self) -> None:
        if not self.nodes or self.nodes[0].op != "input":
            raise ContractError("graph must start with an input node")
        for k, node in enumerate(self.nodes):
            if node.id != k:
                raise ContractError(f"node ids must be dense and ordered (node {node.id} at {k})")
            if any(i >= node.id for i in node.inputs):
                raise ContractError(f"node {node.id} reads a later node")
            for key in _param_keys(node):
                if key not in self.params:
                    raise ContractError(f"node {node.id} references missing parameter {key!r}")
        consumed = {i for n in self.nodes for i in n.inputs}
        sinks = [n.id for n in self.nodes if n.id not in consumed]
        if sinks != [self.output]:
            raise ContractError(f"graph must have exactly one output node, found {sinks}")

    def find(self, **tags) -> list[Node]:
        return [n for n in self.nodes if all(n.attrs.get(k) == v for k, v in tags.items())]


def _param_keys(node: Node) -> list[str]:
    if node.op == "conv":
        return [f"{node.block}.weight", f"{node.block}.bias"]
    if node.op == "inorm":
        return [f"{node.block}.gamma", f"{node.block}.beta"]
    return []


def config_hash(kind: str, cfg: Any) -> str:
    blob = json.dumps({"kind": kind, "config": asdict(cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


class _Builder:
    def __init__(self, kind: str, cfg: Any, seed: int, dtype):
        self.nodes: list[Node] = []
        self.params: dict[str, np.ndarray] = {}
        self.rng = rngmod.stream(seed, rngmod.INIT)
        self.dtype = np.dtype(dtype)
        self.meta = {"kind": kind, "config": asdict(cfg), "config_hash": config_hash(kind, cfg),
                     "dtype": self.dtype.name}

    def add(self, op: str, inputs, block=None, **attrs) -> int:
        node = Node(len(self.nodes), op, tuple(inputs), block, attrs)
        self.nodes.append(node)
        return node.id

    def input(self, channels: int = 1) -> int:
        return self.add("input", (), channels=channels)

    def conv(self, x: int, c_in: int, c_out: int, block: str, k: int = 3, stride: int = 1,
             gain: float = 1.0, bias: float = 0.0, **tags) -> int:
        fan_in = c_in * k * k
        bound = gain * math.sqrt(6.0 / fan_in)
        self.params[f"{block}.weight"] = self.rng.uniform(-bound, bound, (c_out, c_in, k, k)).astype(self.dtype)
        self.params[f"{block}.bias"] = np.full(c_out, bias, dtype=self.dtype)
        return self.add("conv", (x,), block, stride=stride, pad=k // 2, c_out=c_out, **tags)

    def predictor(self, x: int, c_in: int, block: str, pass_through: bool) -> int:
        """3x3 conv to one channel; the last input channel is the image when ``pass_through``."""
        y = self.conv(x, c_in, 1, block, gain=OUTPUT_GAIN)
        if pass_through:
            w = self.params[f"{block}.weight"]
            w[:, -1] = 0
            w[0, -1, 1, 1] = 1
        else:
            # no pass-through: centre the output on water (1000 stored / 2000) so the
            # final ReLU does not start dead
            self.params[f"{block}.bias"][:] = 0.5
        return y

    def inorm(self, x: int, c: int, block: str, **tags) -> int:
        self.params[f"{block}.gamma"] = np.ones(c, dtype=self.dtype)
        self.params[f"{block}.beta"] = np.zeros(c, dtype=self.dtype)
        return self.add("inorm", (x,), block, **tags)

    def relu(self, x: int, **tags) -> int:
        return self.add("relu", (x,), **tags)

    def conv_norm(self, x, c_in, c_out, block, stride=1, k=3, relu=True, norm=True, **tags) -> int:
        y = self.conv(x, c_in, c_out, f"{block}.conv", k=k, stride=stride)
        if norm:
            y = self.inorm(y, c_out, f"{block}.norm")
        if relu:
            y = self.relu(y)
        self.nodes[y].attrs.update(tags)
        return y

    def upsample(self, x: int, factor: int, **tags) -> int:
        return self.add("upsample", (x,), factor=factor, **tags)

    def graph(self) -> ModelGraph:
        return ModelGraph(self.nodes, self.params, self.meta)


def build_hrnet(cfg: HrnetConfig | None = None, seed: int = 0, dtype=np.float32) -> ModelGraph:
    cfg = cfg or HrnetConfig()
    cfg.validate()
    ch = cfg.channels
    b = _Builder("hrnet", cfg, seed, dtype)
    x = b.input()
    feats = [b.conv_norm(x, 1, ch[0], "stem", branch=0, stage=-1)]
    for s in range(cfg.stages):
        for i in range(len(feats)):
            for layer in range(cfg.convs_per_stage):
                feats[i] = b.conv_norm(feats[i], ch[i], ch[i], f"s{s}.b{i}.l{layer}",
                                       branch=i, stage=s, role="body")
        if len(feats) > 1:
            feats = _fuse(b, feats, ch, s)
        if len(feats) < cfg.branches:
            j = len(feats)
            feats.append(b.conv_norm(feats[j - 1], ch[j - 1], ch[j], f"s{s}.new{j}", stride=2,
                                     branch=j, stage=s, role="spawn"))
    ups = [f if i == 0 else b.upsample(f, 2 ** i) for i, f in enumerate(feats)]
    c_cat = sum(ch[:cfg.branches])
    if cfg.input_skip:
        ups.append(x)
        c_cat += 1
    cat = b.add("concat", ups) if len(ups) > 1 else ups[0]
    y = b.predictor(cat, c_cat, "predictor", pass_through=cfg.input_skip)
    b.relu(y, role="output")
    g = b.graph()
    g.meta["divisor"] = 2 ** (cfg.branches - 1)
    return g


def _fuse(b: _Builder, feats: list[int], ch: list[int], s: int) -> list[int]:
    out = []
    for j in range(len(feats)):
        terms = []
        for i, src in enumerate(feats):
            block = f"s{s}.fuse{i}to{j}"
            if i == j:
                terms.append(src)
            elif i < j:
                y = src
                for step, c in enumerate(range(i, j)):
                    last = c + 1 == j
                    y = b.conv_norm(y, ch[c], ch[c + 1], f"{block}.d{step}", stride=2, relu=not last)
                terms.append(y)
            else:
                y = b.upsample(src, 2 ** (i - j))
                terms.append(b.conv_norm(y, ch[i], ch[j], f"{block}.up", k=1, relu=False))
        total = b.add("add", terms)
        out.append(b.relu(total, branch=j, stage=s, role="fused"))
    return out


def unet_layout(cfg: UnetConfig) -> list[tuple[int, int]]:
    """Encoder ladder as ``(channels, spatial size)`` per stride-2 layer."""
    cfg.validate()
    depth = int(math.log2(cfg.input_size))
    return [(min(cfg.init_channels * 2 ** k, cfg.max_channels), cfg.input_size >> (k + 1))
            for k in range(depth)]


def build_unet(cfg: UnetConfig | None = None, seed: int = 0, dtype=np.float32) -> ModelGraph:
    cfg = cfg or UnetConfig()
    layout = unet_layout(cfg)
    b = _Builder("unet", cfg, seed, dtype)
    x = b.input()
    skips = []
    prev, c_prev = x, 1
    for k, (c, size) in enumerate(layout):
        # instance norm over a 1x1 plane would zero the feature, so the bottleneck skips it
        prev = b.conv_norm(prev, c_prev, c, f"enc{k}", stride=2, norm=size > 1,
                           role="encoder", level=k, size=size)
        skips.append((prev, c))
        c_prev = c
    d, c_d = skips[-1]
    for k in range(len(layout) - 2, -1, -1):
        skip, c_skip = skips[k]
        up = b.upsample(d, 2)
        cat = b.add("concat", (up, skip))
        d = b.conv_norm(cat, c_d + c_skip, c_skip, f"dec{k}", role="decoder", level=k)
        c_d = c_skip
    up = b.upsample(d, 2)
    cat = b.add("concat", (up, x))
    y = b.predictor(cat, c_d + 1, "out", pass_through=True)
    b.relu(y, role="output")
    g = b.graph()
    g.meta["input_size"] = cfg.input_size
    return g


def build_model(kind: str, cfg: Any, seed: int = 0, dtype=np.float32) -> ModelGraph:
    if kind == "hrnet":
        return build_hrnet(cfg, seed, dtype)
    if kind == "unet":
        return build_unet(cfg, seed, dtype)
    raise ConfigError(f"unknown model kind {kind!r}")


def config_from_meta(meta: dict) -> tuple[str, Any]:
    kind = meta["kind"]
    if kind == "hrnet":
        return kind, HrnetConfig(**meta["config"])
    if kind == "unet":
        return kind, UnetConfig(**meta["config"])
    raise ConfigError(f"unknown model kind {kind!r}")


def count_params(g: ModelGraph) -> int:
    return int(sum(p.size for p in g.params.values()))


def check_input(g: ModelGraph, x: Tensor) -> None:
    if x.c != 1:
        raise ShapeError(f"model input must have 1 channel, got {x.c}")
    if g.meta["kind"] == "hrnet":
        d = g.meta["divisor"]
        if x.h % d or x.w % d:
            raise ConfigError(f"input {x.h}x{x.w} is not divisible by {d}; pad to a multiple of {d}")
    elif g.meta["kind"] == "unet":
        s = g.meta["input_size"]
        if (x.h, x.w) != (s, s):
            raise ConfigError(f"UNet built for {s}x{s} input, got {x.h}x{x.w}")


class Tape:
    """Saved intermediates of one recorded forward pass; consumed by one backward."""

    def __init__(self, graph: ModelGraph, values: list, saved: dict):
        self.graph = graph
        self.values = values
        self.saved = saved
        self.used = False


def _conv_params(g: ModelGraph, node: Node) -> Conv2dParams:
    return Conv2dParams(g.params[f"{node.block}.weight"], g.params[f"{node.block}.bias"],
                        stride=node.attrs["stride"], pad=node.attrs["pad"])


def _norm_params(g: ModelGraph, node: Node) -> InstanceNormParams:
    return InstanceNormParams(g.params[f"{node.block}.gamma"], g.params[f"{node.block}.beta"])


def _last_use(g: ModelGraph) -> list[int]:
    last = list(range(len(g.nodes)))
    for n in g.nodes:
        for i in n.inputs:
            last[i] = max(last[i], n.id)
    return last


def model_forward(g: ModelGraph, x: Tensor, record: bool = False) -> tuple[Tensor, Tape | None]:
    check_input(g, x)
    values: list[Tensor | None] = [None] * len(g.nodes)
    saved: dict[int, Any] = {}
    last = None if record else _last_use(g)
    for node in g.nodes:
        ins = [values[i] for i in node.inputs]
        try:
            values[node.id] = _run(g, node, ins, x, saved)
        except CtdfError as exc:
            raise type(exc)(f"node {node.id} ({node.op} {node.block or ''}): {exc}") from exc
        if last is not None:
            for i in node.inputs:
                if last[i] == node.id:
                    values[i] = None
    y = values[g.output]
    return y, (Tape(g, values, saved) if record else None)


def _run(g, node, ins, x, saved):
    op = node.op
    if op == "input":
        return x
    if op == "conv":
        return conv2d_forward(ins[0], _conv_params(g, node))
    if op == "inorm":
        out, st = instance_norm_forward(ins[0], _norm_params(g, node))
        saved[node.id] = st
        return out
    if op == "relu":
        return relu_forward(ins[0])
    if op == "upsample":
        f = node.attrs["factor"]
        return bilinear_upsample(ins[0], ins[0].h * f, ins[0].w * f)
    if op == "add":
        acc = ins[0].data.copy()
        for t in ins[1:]:
            if t.shape != ins[0].shape:
                raise ShapeError(f"add: {t.shape} vs {ins[0].shape}")
            acc += t.data
        return Tensor(acc)
    if op == "concat":
        return concat_channels(ins)
    raise ContractError(f"unknown op {op!r}")


def model_backward(g: ModelGraph, tape: Tape | None, grad_y: Tensor,
                   return_input_grad: bool = False):
    """Accumulate parameter gradients in reverse topological order.

    Returns ``{param_name: grad}``, or ``(grads, grad_input)`` when
    ``return_input_grad`` is set.
    """
    if tape is None:
        raise ContractError("model_backward needs a tape; call model_forward(record=True)")
    if tape.graph is not g:
        raise ContractError("tape was recorded on a different graph")
    if tape.used:
        raise ContractError("tape is stale: it was already consumed by a backward pass")
    vals = tape.values
    if grad_y.shape != vals[g.output].shape:
        raise ShapeError(f"grad_y shape {grad_y.shape} != output shape {vals[g.output].shape}")
    tape.used = True
    grads: list[Tensor | None] = [None] * len(g.nodes)
    grads[g.output] = grad_y
    pgrads: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in g.params.items()}

    def push(i: int, t: Tensor) -> None:
        grads[i] = t if grads[i] is None else Tensor(grads[i].data + t.data)

    for node in reversed(g.nodes):
        gy = grads[node.id]
        if gy is None or node.op == "input":
            continue
        op = node.op
        if op == "conv":
            lg = conv2d_backward(vals[node.inputs[0]], _conv_params(g, node), gy)
            pgrads[f"{node.block}.weight"] += lg.grad_params["weight"]
            pgrads[f"{node.block}.bias"] += lg.grad_params["bias"]
            push(node.inputs[0], lg.grad_input)
        elif op == "inorm":
            lg = instance_norm_backward(tape.saved[node.id], gy)
            pgrads[f"{node.block}.gamma"] += lg.grad_params["gamma"]
            pgrads[f"{node.block}.beta"] += lg.grad_params["beta"]
            push(node.inputs[0], lg.grad_input)
        elif op == "relu":
            push(node.inputs[0], relu_backward(vals[node.inputs[0]], gy))
        elif op == "upsample":
            src = vals[node.inputs[0]]
            push(node.inputs[0], bilinear_backward((src.h, src.w), gy))
        elif op == "add":
            for i in node.inputs:
                push(i, gy)
        elif op == "concat":
            sizes = [vals[i].c for i in node.inputs]
            for i, part in zip(node.inputs, split_channels(gy, sizes)):
                push(i, part)
        grads[node.id] = None if node.id != 0 else grads[node.id]
    if return_input_grad:
        gx = grads[0] if grads[0] is not None else Tensor(np.zeros_like(vals[0].data))
        return pgrads, gx
    return pgrads
