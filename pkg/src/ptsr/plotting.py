"""Figures written next to the CSV reports."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_log(rows: list[dict], path) -> None:
    """Loss curves (L_D, L_G, L_R) and learning rate against step."""
    steps = [int(r["step"]) for r in rows]
    fig, (ax_loss, ax_lr) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for key in ("L_D", "L_G", "L_R"):
        ax_loss.plot(steps, [float(r[key]) for r in rows], label=key, lw=1)
    ax_loss.set_yscale("log")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(frameon=False)
    ax_lr.plot(steps, [float(r["lr"]) for r in rows], color="k", lw=1)
    ax_lr.set_yscale("log")
    ax_lr.set_ylabel("learning rate")
    ax_lr.set_xlabel("step")
    _finish(fig, path)


def plot_metric_report(rows: list[dict], path, title: str = "") -> None:
    """Per-image PSNR and SSIM bars with the dataset mean as a dashed line."""
    per_image = [r for r in rows if r["image_id"] != "mean"]
    mean = next((r for r in rows if r["image_id"] == "mean"), None)
    names = [r["image_id"] for r in per_image]
    x = np.arange(len(names))
    fig, axes = plt.subplots(1, 2, figsize=(max(6, 0.35 * len(names) + 4), 3.5))
    for ax, key, label in ((axes[0], "psnr_db", "PSNR (dB)"), (axes[1], "ssim", "SSIM")):
        vals = [float(r[key]) for r in per_image]
        ax.bar(x, vals, color="0.6")
        if mean is not None:
            ax.axhline(float(mean[key]), color="C3", ls="--", lw=1)
        ax.set_ylabel(label)
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=90, fontsize=6)
    if title:
        fig.suptitle(title)
    _finish(fig, path)


def save_heatmap(heat: np.ndarray, path, cmap: str = "jet") -> None:
    """Colour-mapped activation map (blue = least, red = most) with a colour bar."""
    fig, ax = plt.subplots(figsize=(4, 4 * heat.shape[0] / max(heat.shape[1], 1) + 0.3))
    im = ax.imshow(heat, cmap=cmap, vmin=0.0, vmax=1.0)
    ax.set_axis_off()
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    _finish(fig, path)
