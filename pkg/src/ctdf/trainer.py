"""Batch commands: data generation, training, inference, evaluation and noise analysis."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import checkpoint as ckptmod
from . import rng as rngmod
from .arch import ModelGraph, build_model, check_input, model_backward, model_forward
from .config import Paths, RunConfig, resolve
from .dataset import DatasetManifest, augment, denormalize, normalize, split_manifest
from .errors import ConfigError, CtdfError, DataIOError
from .fft import fft2
from .fileio import (load_pair_images, read_pair, read_slice, to_gray8, write_pair, write_pgm,
                     write_slice)
from .metrics import MetricsReport, evaluate_manifest, write_curves_csv
from .noise import (HighpassSpec, NoiseReport, analyze_pair, ensemble_mean, highfreq_component,
                    highpass_mask, write_noise_csv)
from .optim import AdamState, adam_step, lr_at, mse_loss
from .sim import gen_pair
from .tensor import Tensor

log = logging.getLogger("ctdf")

MANIFEST = "manifest.txt"
LAST = "last.ctdn"
RUNLOG = "runlog.csv"


class TrainingDiverged(CtdfError, RuntimeError):
    pass


def workers() -> int:
    try:
        return max(1, int(os.environ.get("CTDF_THREADS", "1")))
    except ValueError:
        raise ConfigError("CTDF_THREADS must be an integer") from None


def stem_name(i: int) -> str:
    return f"pair_{i:05d}"


def cmd_gen_data(cfg: RunConfig, base: str = ".") -> DatasetManifest:
    if cfg.n_train < 1 or cfg.n_val < 1:
        raise ConfigError("n_train and n_val must both be >= 1")
    paths = resolve(cfg, base)
    try:
        os.makedirs(paths.data_dir, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create data directory {paths.data_dir}: {exc}") from None
    total = cfg.n_train + cfg.n_val
    stems = [stem_name(i) for i in range(total)]

    def one(i: int) -> None:
        lesion = rngmod.stream(cfg.seed, rngmod.PHANTOM, i, 1).random() < cfg.lesion_fraction
        pair = gen_pair(replace(cfg.phantom, lesion=bool(lesion)), cfg.sim, cfg.seed, i)
        try:
            write_pair(os.path.join(paths.data_dir, stems[i]), pair)
        except OSError as exc:
            raise DataIOError(f"cannot write {stems[i]}: {exc}") from None

    with ThreadPoolExecutor(workers()) as ex:
        list(ex.map(one, range(total)))
    manifest = split_manifest(stems, cfg.n_train / total, cfg.seed)
    manifest.root = paths.data_dir
    manifest.write(os.path.join(paths.data_dir, MANIFEST))
    log.info("wrote %d pairs (%d train / %d val) to %s", total, len(manifest.train),
             len(manifest.val), paths.data_dir)
    return manifest


def load_manifest(paths: Paths) -> DatasetManifest:
    path = os.path.join(paths.data_dir, MANIFEST)
    if not os.path.exists(path):
        raise DataIOError(f"no dataset manifest at {path}; run gen-data first")
    return DatasetManifest.read(path)


@dataclass
class TrainResult:
    checkpoint: str
    runlog: str
    graph: ModelGraph
    losses: list[float]


def _grad_norms(grads: dict) -> str:
    norms = sorted(((float(np.linalg.norm(g)), k) for k, g in grads.items()), reverse=True)[:5]
    return ", ".join(f"{k}={n:.3e}" for n, k in norms)


def cmd_train(cfg: RunConfig, base: str = ".", resume: bool = False,
              on_sample: Callable | None = None) -> TrainResult:
    """Minimise per-pixel MSE between the model output on LDCT and the NDCT target.

    ``on_sample(iteration, x, y, pair)`` is called with every training sample.
    """
    paths = resolve(cfg, base)
    manifest = load_manifest(paths)
    if not manifest.train:
        raise ConfigError("manifest has no training stems")
    for w in cfg.warnings:
        log.warning(w)
    train = [read_pair(manifest.path(s)) for s in manifest.train]
    os.makedirs(paths.checkpoint_dir, exist_ok=True)
    last_path = os.path.join(paths.checkpoint_dir, LAST)
    log_path = os.path.join(paths.checkpoint_dir, RUNLOG)
    dtype = np.dtype(cfg.dtype)
    run_hash = cfg.hash()

    if resume and os.path.exists(last_path):
        ck = ckptmod.load(last_path, expect_hash=run_hash)
        g, state, start = ck.graph, ck.state or AdamState(), ck.iteration
        with open(log_path, encoding="utf-8") as fh:
            kept = [ln for ln in fh.read().splitlines()[1:] if int(ln.split(",")[0]) < start]
        log.info("resuming from iteration %d", start)
    else:
        g = build_model(cfg.model, cfg.arch, seed=cfg.seed, dtype=dtype)
        state, start, kept = AdamState(), 0, []

    losses: list[float] = []
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,lr,loss\n")
        for ln in kept:
            fh.write(ln + "\n")
        pending: list[str] = []
        for it in range(start, cfg.iterations):
            r = rngmod.stream(cfg.seed, rngmod.TRAIN_DRAW, it)
            pair = augment(train[int(r.integers(len(train)))], cfg.augment, r)
            x = normalize(pair.ldct, dtype)
            y = normalize(pair.ndct, dtype)
            if on_sample is not None:
                on_sample(it, x, y, pair)
            lr = lr_at(it, cfg.schedule)
            out, tape = model_forward(g, x, record=True)
            loss, grad = mse_loss(out, y)
            grads = model_backward(g, tape, grad)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at iteration {it} (lr={lr!r}); "
                                       f"largest grad norms: {_grad_norms(grads)}")
            adam_step(g.params, grads, state, cfg.adam, lr=lr)
            losses.append(loss)
            pending.append(f"{it},{lr!r},{loss!r}\n")
            done = it + 1
            if done % cfg.log_every == 0 or done == cfg.iterations:
                fh.writelines(pending)
                fh.flush()
                pending.clear()
                log.info("iter %d lr %.1e loss %.6f", done, lr, float(np.mean(losses[-cfg.log_every:])))
            if done % cfg.checkpoint_every == 0 or done == cfg.iterations:
                ck = ckptmod.Checkpoint(g, done, state, run_hash)
                ckptmod.save(os.path.join(paths.checkpoint_dir, f"iter_{done:06d}.ctdn"), ck)
                ckptmod.save(last_path, ck)
    os.makedirs(paths.report_dir, exist_ok=True)
    if losses:
        from .plotting import plot_loss
        plot_loss(np.arange(start, start + len(losses)), np.asarray(losses),
                  os.path.join(paths.report_dir, f"train_loss_{cfg.model}.png"), f"{cfg.model} training loss")
    return TrainResult(last_path, log_path, g, losses)


def make_denoiser(g: ModelGraph) -> Callable[[np.ndarray], np.ndarray]:
    dtype = np.dtype(g.meta["dtype"])

    def run(img: np.ndarray) -> np.ndarray:
        out, _ = model_forward(g, normalize(img, dtype))
        return denormalize(out)

    return run


def cmd_denoise(checkpoint_path: str, inputs: list[str], out_dir: str | None = None) -> list[str]:
    g = ckptmod.load(checkpoint_path).graph
    run = make_denoiser(g)
    written = []
    for path in inputs:
        img = read_slice(path)
        check_input(g, Tensor(np.zeros((1, 1) + img.shape)))
        out = run(img).astype(img.dtype)
        dest_dir = out_dir or os.path.dirname(path) or "."
        os.makedirs(dest_dir, exist_ok=True)
        name = os.path.basename(path)
        stem = name.rsplit(".", 1)[0] if "." in name else name
        dest = os.path.join(dest_dir, stem + ".denoised")
        write_slice(dest, out)
        written.append(dest)
    return written


def _checkpoint_for(cfg: RunConfig, base: str, checkpoint_path: str | None) -> str:
    return checkpoint_path or os.path.join(resolve(cfg, base).checkpoint_dir, LAST)


def cmd_eval(cfg: RunConfig, base: str = ".", checkpoint_path: str | None = None,
             label: str | None = None) -> MetricsReport:
    paths = resolve(cfg, base)
    manifest = load_manifest(paths)
    if not manifest.val:
        raise ConfigError("validation manifest is empty")
    g = ckptmod.load(_checkpoint_for(cfg, base, checkpoint_path)).graph
    report = evaluate_manifest(manifest, make_denoiser(g), workers=workers())
    label = label or g.meta["kind"]
    os.makedirs(paths.report_dir, exist_ok=True)
    report.write_csv(os.path.join(paths.report_dir, f"metrics_{label}.csv"))
    write_curves_csv(report, os.path.join(paths.report_dir, f"curves_{label}.csv"))
    from .plotting import plot_curves
    plot_curves({label: report}, os.path.join(paths.report_dir, f"curves_{label}.png"))
    return report


def spectrum_window(h: int, w: int) -> tuple[float, float]:
    """Display window for |FFT| magnitudes, scaled from [1e4, 1e5] at 512x512."""
    k = math.sqrt(h * w) / 512
    return 1e4 * k, 1e5 * k


def write_noise_previews(prefix: str, ldct, removed, spec: HighpassSpec) -> list[str]:
    hf = highfreq_component(removed, spec)
    mag = np.abs(fft2(removed))
    masked = mag * highpass_mask(*removed.shape, spec)
    lo, hi = spectrum_window(*removed.shape)
    out = []
    for name, gray in (("removed", to_gray8(removed, -50, 50)),
                       ("highfreq", to_gray8(hf, -50, 50)),
                       ("spectrum", to_gray8(np.fft.fftshift(mag), lo, hi, log=True)),
                       ("masked", to_gray8(np.fft.fftshift(masked), lo, hi, log=True))):
        path = f"{prefix}.{name}.pgm"
        write_pgm(path, gray)
        out.append(path)
    return out


def cmd_noise_analyze(cfg: RunConfig, base: str = ".", checkpoint_path: str | None = None,
                      oracle: bool = False, n_previews: int = 4,
                      spec: HighpassSpec | None = None) -> tuple[list[NoiseReport], NoiseReport]:
    """Noise decomposition over the validation pairs.

    ``oracle`` replaces the model with a denoiser that returns the NDCT image.
    """
    spec = spec or HighpassSpec()
    paths = resolve(cfg, base)
    manifest = load_manifest(paths)
    if not manifest.val:
        raise ConfigError("validation manifest is empty")
    if oracle:
        label, denoise = "oracle", None
    else:
        g = ckptmod.load(_checkpoint_for(cfg, base, checkpoint_path)).graph
        label, denoise = g.meta["kind"], make_denoiser(g)
    out_dir = os.path.join(paths.report_dir, f"noise_{label}")
    os.makedirs(out_dir, exist_ok=True)

    def one(stem: str):
        pair = read_pair(manifest.path(stem))
        den = pair.ndct if denoise is None else denoise(pair.ldct)
        return pair, den, analyze_pair(pair, den, spec, pair_id=stem)

    with ThreadPoolExecutor(workers()) as ex:
        results = list(ex.map(one, manifest.val))
    reports = [r for _, _, r in results]
    mean = ensemble_mean(reports)
    write_noise_csv(reports, os.path.join(paths.report_dir, f"noise_{label}.csv"))
    for stem, (pair, den, _) in zip(manifest.val[:n_previews], results):
        write_noise_previews(os.path.join(out_dir, stem), pair.ldct, pair.ldct - den, spec)
    if results:
        from .plotting import plot_noise_panel
        pair, den, rep = results[0]
        removed = pair.ldct - den
        mag = np.abs(fft2(removed))
        plot_noise_panel(pair.ldct, removed, mag, highfreq_component(removed, spec),
                         mag * highpass_mask(*removed.shape, spec), mean,
                         os.path.join(paths.report_dir, f"noise_{label}.png"),
                         spec_window=spectrum_window(*removed.shape))
    return reports, mean
