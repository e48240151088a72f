"""Figures written to files next to the CSV outputs (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}
LABELS = {"vit_b16": "ViT-B/16", "ci2p_vit": "CI2P-ViT", "ci2p_vit_ds": "CI2P-ViT-ds"}


def flops_bar_chart(rows: list[dict], path) -> Path:
    """Grouped bars of total GFLOPs per image size, as produced by ``flops.reduction_rows``."""
    path = Path(path)
    variants = list(LABELS)
    width = 0.8 / len(variants)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for j, v in enumerate(variants):
            xs = [i + (j - 1) * width for i in range(len(rows))]
            ys = [r[f"{v}_gflops"] for r in rows]
            bars = ax.bar(xs, ys, width, label=LABELS[v])
            ax.bar_label(bars, fmt="%.1f", fontsize=7, padding=1)
        ax.set_xticks(range(len(rows)), [f"{r['image_size']}²" for r in rows])
        ax.set_xlabel("input resolution")
        ax.set_ylabel("GFLOPs (1 MAC = 1 FLOP)")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return path


def training_curves(history: list[dict], path) -> Path:
    """Loss and accuracy per epoch for each split."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        for split in ("train", "val"):
            rows = [r for r in history if r["split"] == split]
            if not rows:
                continue
            epochs = [r["epoch"] for r in rows]
            ax_loss.plot(epochs, [r["loss"] for r in rows], label=split)
            ax_acc.plot(epochs, [r["accuracy"] for r in rows], label=split)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("cross-entropy")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("top-1")
        ax_acc.set_ylim(0, 1.02)
        ax_acc.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return path


def codec_curves(history: list[dict], path) -> Path:
    """Distortion and rate per codec training step."""
    path = Path(path)
    steps = [r["step"] for r in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(steps, [r["d_mse"] for r in history], color="C0")
        ax.set_xlabel("step")
        ax.set_ylabel("MSE", color="C0")
        ax.set_yscale("log")
        ax2 = ax.twinx()
        ax2.plot(steps, [r["r_bpp"] for r in history], color="C1")
        ax2.set_ylabel("bits per pixel", color="C1")
        fig.savefig(path)
        plt.close(fig)
    return path
