"""Run configuration: flat ``key = value`` files with ``[section]`` headers.

Unknown sections or keys are rejected so a typo never silently falls back to
a default.
"""
from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field

from .arch import HrnetConfig, UnetConfig
from .dataset import AugmentParams
from .errors import ConfigError
from .optim import AdamHyper, LrSchedule
from .sim import PhantomSpec, SimConfig

DESK_SCHEDULE = "0:1e-4, 1000:1e-5, 1500:1e-6"  # 100K schedule with milestones scaled to 2000


@dataclass
class Paths:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass
class RunConfig:
    model: str = "hrnet"
    hrnet: HrnetConfig = field(default_factory=HrnetConfig)
    unet: UnetConfig = field(default_factory=UnetConfig)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    lesion_fraction: float = 0.0
    sim: SimConfig = field(default_factory=SimConfig)
    augment: AugmentParams = field(default_factory=AugmentParams)
    adam: AdamHyper = field(default_factory=AdamHyper)
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule.parse(DESK_SCHEDULE))
    iterations: int = 2000
    checkpoint_every: int = 500
    log_every: int = 50
    seed: int = 0
    dtype: str = "float32"
    n_train: int = 200
    n_val: int = 40
    paths: Paths = field(default_factory=Paths)
    warnings: list[str] = field(default_factory=list, compare=False)

    @property
    def arch(self):
        return self.hrnet if self.model == "hrnet" else self.unet

    def validate(self) -> None:
        if self.model not in ("hrnet", "unet"):
            raise ConfigError(f"model.kind must be hrnet or unet, got {self.model!r}")
        if self.iterations < 1:
            raise ConfigError("run.iterations must be >= 1")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("run.checkpoint_every and run.log_every must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("run.dtype must be float32 or float64")
        if self.n_train < 1 or self.n_val < 1:
            raise ConfigError("data.n_train and data.n_val must be >= 1")
        if not 0 <= self.lesion_fraction <= 1:
            raise ConfigError("sim.lesion_fraction must lie in [0, 1]")
        self.unet.input_size = self.phantom.size
        self.augment.target_size = self.augment.target_size or self.phantom.size
        self.arch.validate()
        self.phantom.validate()
        self.sim.validate()
        self.augment.validate()
        if self.augment.target_size != self.phantom.size:
            raise ConfigError("augment.target_size must equal sim.size")
        d = 2 ** (self.hrnet.branches - 1)
        if self.model == "hrnet" and self.phantom.size % d:
            raise ConfigError(f"sim.size {self.phantom.size} is not divisible by {d} "
                              f"({self.hrnet.branches} HRNet branches)")
        late = [i for i, _ in self.schedule.milestones if i >= self.iterations]
        self.warnings = [f"lr milestone at iteration {i} is never reached ({self.iterations} iterations)"
                         for i in late]

    def canonical(self) -> str:
        """Text of every setting that changes training results (paths and lengths excluded)."""
        parser = to_parser(self)
        for sec, keys in (("run", ("iterations", "checkpoint_every", "log_every")),
                          ("data", ("n_train", "n_val"))):
            for k in keys:
                parser.remove_option(sec, k)
        parser.remove_section("paths")
        lines = []
        for sec in parser.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in parser.items(sec)]
        return "\n".join(lines)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


# section -> key -> (attribute path, parser)
_SCHEMA = {
    "run": {"seed": ("seed", int), "iterations": ("iterations", int),
            "checkpoint_every": ("checkpoint_every", int), "log_every": ("log_every", int),
            "dtype": ("dtype", str)},
    "model": {"kind": ("model", str), "branches": ("hrnet.branches", int),
              "channels": ("hrnet.channels", _ints), "stages": ("hrnet.stages", int),
              "input_skip": ("hrnet.input_skip", _bool),
              "init_channels": ("unet.init_channels", int), "max_channels": ("unet.max_channels", int)},
    "sim": {"size": ("phantom.size", int), "n_ellipses": ("phantom.n_ellipses", int),
            "lesion_fraction": ("lesion_fraction", float), "I0": ("sim.I0", float),
            "dose_fraction": ("sim.dose_fraction", float), "n_angles": ("sim.n_angles", int),
            "n_det": ("sim.n_det", int)},
    "augment": {"max_translate": ("augment.max_translate", int),
                "rotate_range": ("augment.rotate_range", float),
                "target_size": ("augment.target_size", int)},
    "optim": {"beta1": ("adam.beta1", float), "beta2": ("adam.beta2", float),
              "eps": ("adam.eps", float), "schedule": ("schedule", LrSchedule.parse)},
    "data": {"n_train": ("n_train", int), "n_val": ("n_val", int)},
    "paths": {"data_dir": ("paths.data_dir", str), "checkpoint_dir": ("paths.checkpoint_dir", str),
              "report_dir": ("paths.report_dir", str)},
}


def _set(obj, path: str, value) -> None:
    *head, last = path.split(".")
    for part in head:
        obj = getattr(obj, part)
    setattr(obj, last, value)


def _get(obj, path: str):
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _fmt(value) -> str:
    if isinstance(value, LrSchedule):
        return value.format()
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}".replace("\n", " ")) from None
    cfg = RunConfig()
    cfg.augment.target_size = 0
    for sec in parser.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown config key {sec}.{key}")
            path, conv = _SCHEMA[sec][key]
            try:
                _set(cfg, path, conv(raw))
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {raw!r} ({exc})") from None
    if "augment" not in parser or "max_translate" not in parser["augment"]:
        cfg.augment.max_translate = cfg.phantom.size // 4
    cfg.validate()
    return cfg


def load(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None


def to_parser(cfg: RunConfig) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec, keys in _SCHEMA.items():
        parser.add_section(sec)
        for key, (path, _) in keys.items():
            parser.set(sec, key, _fmt(_get(cfg, path)))
    return parser


def dumps(cfg: RunConfig) -> str:
    parts = []
    for sec, items in to_parser(cfg).items():
        if sec == "DEFAULT":
            continue
        parts.append(f"[{sec}]\n" + "".join(f"{k} = {v}\n" for k, v in items.items()))
    return "\n".join(parts)


def resolve(cfg: RunConfig, base: str) -> Paths:
    return Paths(*(os.path.join(base, p) for p in
                   (cfg.paths.data_dir, cfg.paths.checkpoint_dir, cfg.paths.report_dir)))
