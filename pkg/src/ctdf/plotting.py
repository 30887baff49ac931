"""Report figures rendered next to the CSV outputs (Agg backend, PNG files)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}
NOISE_WINDOW = (-50.0, 50.0)  # HU
IMAGE_WINDOW = (-160.0, 240.0)  # HU


def _save(fig, path: str) -> str:
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss(iterations, losses, path: str, title: str = "training loss") -> str:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.semilogy(iterations, losses, lw=0.6, color="0.6", label="per iteration")
        if len(losses) >= 50:
            k = 50
            smooth = np.convolve(losses, np.ones(k) / k, mode="valid")
            ax.semilogy(iterations[k - 1:], smooth, lw=1.2, color="C0", label="50-iteration mean")
        ax.set_xlabel("iteration")
        ax.set_ylabel("MSE (normalized units)")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_curves(reports: dict, path: str) -> str:
    """Per-slice RMSE and SSIM; ``reports`` maps a label to a MetricsReport.

    The LDCT curve is taken from the first report.
    """
    with plt.rc_context(RC):
        fig, (ax_r, ax_s) = plt.subplots(1, 2, figsize=(8, 3))
        first = next(iter(reports.values()))
        idx = np.arange(len(first.rows))
        ax_r.plot(idx, [r.rmse_ldct for r in first.rows], "r-", lw=1, label="LDCT")
        ax_s.plot(idx, [r.ssim_paper_ldct for r in first.rows], "r-", lw=1, label="LDCT")
        styles = ["g--", "b-.", "m:", "c--"]
        for (label, rep), style in zip(reports.items(), styles):
            ax_r.plot(idx, [r.rmse_out for r in rep.rows], style, lw=1, label=label)
            ax_s.plot(idx, [r.ssim_paper_out for r in rep.rows], style, lw=1, label=label)
        ax_r.set_xlabel("slice index")
        ax_r.set_ylabel("RMSE (HU)")
        ax_s.set_xlabel("slice index")
        ax_s.set_ylabel("SSIM")
        ax_r.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_denoised(panels: dict, path: str, window=IMAGE_WINDOW) -> str:
    """Side-by-side slices (stored-HU) shown in an HU display window."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(2.2 * len(panels), 2.4))
        for ax, (label, img) in zip(np.atleast_1d(axes), panels.items()):
            ax.imshow(np.asarray(img) - 1000.0, cmap="gray", vmin=window[0], vmax=window[1])
            ax.set_title(label)
            ax.axis("off")
        return _save(fig, path)


def plot_noise_panel(ldct, removed, spectrum, highfreq, masked, report, path: str,
                     spec_window=(1e4, 1e5)) -> str:
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, 3, figsize=(8, 5.4))
        a = axes.ravel()
        a[0].imshow(np.asarray(ldct) - 1000.0, cmap="gray", vmin=IMAGE_WINDOW[0], vmax=IMAGE_WINDOW[1])
        a[0].set_title("LDCT")
        a[1].imshow(removed, cmap="gray", vmin=NOISE_WINDOW[0], vmax=NOISE_WINDOW[1])
        a[1].set_title("removed noise")
        shown = np.fft.fftshift(np.maximum(spectrum, spec_window[0]))
        a[2].imshow(np.log10(shown), cmap="gray", vmin=np.log10(spec_window[0]), vmax=np.log10(spec_window[1]))
        a[2].set_title("|FFT| of removed noise")
        names = ["removed/added", "removed/target", "target/added"]
        vals = [report.cos_ra, report.cos_rt, report.cos_ta]
        a[3].bar(names, vals, color=["C0", "C1", "C2"])
        a[3].axhline(0, color="k", lw=0.6)
        a[3].set_ylim(-1, 1)
        a[3].set_title("high-frequency cosine")
        a[3].tick_params(axis="x", labelrotation=20)
        a[4].imshow(highfreq, cmap="gray", vmin=NOISE_WINDOW[0], vmax=NOISE_WINDOW[1])
        a[4].set_title("high-frequency removed noise")
        shown = np.fft.fftshift(np.maximum(masked, spec_window[0]))
        a[5].imshow(np.log10(shown), cmap="gray", vmin=np.log10(spec_window[0]), vmax=np.log10(spec_window[1]))
        a[5].set_title("masked spectrum")
        for ax in (a[0], a[1], a[2], a[4], a[5]):
            ax.axis("off")
        fig.tight_layout()
        return _save(fig, path)


def plot_comparison(summary: dict, path: str) -> str:
    """Bar chart of mean validation RMSE/SSIM per method (LDCT plus each model)."""
    with plt.rc_context(RC):
        labels = list(summary)
        fig, (ax_r, ax_s) = plt.subplots(1, 2, figsize=(6, 2.8))
        ax_r.bar(labels, [summary[k]["rmse"] for k in labels], color="C0")
        ax_r.set_ylabel("RMSE vs NDCT (HU)")
        ax_s.bar(labels, [summary[k]["ssim"] for k in labels], color="C1")
        ax_s.set_ylabel("SSIM vs NDCT")
        lo = min(summary[k]["ssim"] for k in labels)
        ax_s.set_ylim(max(0.0, lo - 0.05), 1.0)
        fig.tight_layout()
        return _save(fig, path)
