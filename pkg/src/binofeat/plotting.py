"""Static figure emitters for loss curves, trajectories and inlier statistics."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def plot_loss(rows, path) -> None:
    ep = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("total", "metric_loss", "mask_loss"):
        ax.semilogy(ep, [max(r[key], 1e-12) for r in rows], label=key)
    ax2 = ax.twinx()
    ax2.step(ep, [r["lr"] for r in rows], "k:", where="post", label="lr")
    ax2.set_ylabel("learning rate")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_trajectory(est_poses, path, gt_poses=None, lost=None, plane=(0, 2)) -> None:
    """Top-down view; lost frames are marked with crosses."""
    i, j = plane
    pe = np.array([p.translation for p in est_poses]).reshape(-1, 3)
    fig, ax = plt.subplots(figsize=(5, 5))
    if gt_poses is not None:
        pg = np.array([p.translation for p in gt_poses]).reshape(-1, 3)
        ax.plot(pg[:, i], pg[:, j], "k--", lw=1, label="ground truth")
    ax.plot(pe[:, i], pe[:, j], "b-", lw=1.5, label="estimate")
    if lost is not None and np.any(lost):
        m = np.asarray(lost, dtype=bool)
        ax.plot(pe[m, i], pe[m, j], "rx", ms=8, label="track lost")
    ax.set_xlabel("xyz"[i] + " [m]")
    ax.set_ylabel("xyz"[j] + " [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_inliers(stats, path) -> None:
    """Keypoints per frame (line) and the inlier share of keypoints (filled, right axis)."""
    kp = np.array([s.keypoints for s in stats], dtype=np.float64)
    inl = np.array([s.inliers for s in stats], dtype=np.float64)
    frac = np.divide(inl, kp, out=np.zeros_like(inl), where=kp > 0)
    x = np.arange(len(stats))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(x, kp, "b-", label="keypoints")
    ax.set_xlabel("frame")
    ax.set_ylabel("keypoints")
    ax2 = ax.twinx()
    ax2.fill_between(x, 0, frac, color="tab:orange", alpha=0.4, label="inlier fraction")
    ax2.set_ylim(0, 1)
    ax2.set_ylabel("fraction used for tracking")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
