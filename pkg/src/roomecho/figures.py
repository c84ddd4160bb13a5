"""Matplotlib figure rendering for the report paths (files only, Agg)."""

import matplotlib
matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(losses, path) -> None:
    steps = [r["step"] for r in losses]
    vals = [r["loss"] for r in losses]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, vals, lw=0.8, color="tab:blue", alpha=0.5, label="loss")
    if len(vals) >= 20:
        k = max(5, len(vals) // 40)
        kernel = np.ones(k) / k
        smooth = np.convolve(vals, kernel, mode="valid")
        ax.plot(steps[k - 1:], smooth, lw=1.6, color="tab:blue", label=f"mean({k})")
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.set_yscale("log")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_eval_summary(report: dict, path) -> None:
    rows = report["rows"]
    edt = [r["edt_err_s"] for r in rows]
    c50 = [r["c50_err_db"] for r in rows]
    t60 = [r["t60_err_pct"] for r in rows if r["t60_err_pct"] is not None]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for ax, vals, label in zip(
            axes, (edt, c50, t60),
            ("EDT error (s)", "C50 error (dB)", "T60 error (%)")):
        if vals:
            ax.hist(vals, bins=24, color="tab:gray")
            ax.axvline(np.mean(vals), color="tab:red", lw=1.2,
                       label=f"mean {np.mean(vals):.3g}")
            ax.legend(frameon=False, fontsize=8)
        ax.set_xlabel(label)
    axes[0].set_ylabel("examples")
    fig.suptitle(f"{report['method']} (K={report['k']}, {report['split_mode']})",
                 fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_acoustic_map(xs, ys, c50_pred, c50_gt, valid, path) -> None:
    """Side-by-side grayscale clarity maps; invalid cells masked out."""
    pred = np.where(valid, c50_pred, np.nan)
    gt = np.where(valid, c50_gt, np.nan)
    finite = np.concatenate([pred[np.isfinite(pred)], gt[np.isfinite(gt)]])
    vmin, vmax = (finite.min(), finite.max()) if finite.size else (0, 1)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    extent = (xs[0], xs[-1], ys[0], ys[-1])
    for ax, grid, title in zip(axes, (pred, gt), ("predicted C50", "true C50")):
        im = ax.imshow(grid.T, origin="lower", cmap="gray", vmin=vmin, vmax=vmax,
                       extent=extent, aspect="equal")
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("x (m)")
    axes[0].set_ylabel("y (m)")
    fig.colorbar(im, ax=axes, shrink=0.85, label="C50 (dB)")
    fig.savefig(path, dpi=150)
    plt.close(fig)
