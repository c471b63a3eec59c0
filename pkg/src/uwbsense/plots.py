"""PNG figures for evaluation reports, drawn from the same arrays as the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    # fixed metadata keeps repeated renders byte-stable
    "svg.hashsalt": "uwbsense",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_cdf(cdf: np.ndarray, path: str | Path, p80: float | None = None) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.step(cdf[:, 0], cdf[:, 1], where="post", color="C0")
        if p80 is not None:
            ax.axvline(p80, color="C3", ls="--", lw=0.8, label=f"p80 = {p80:.3f} m")
            ax.legend(loc="lower right")
        ax.set_xlabel("localization error (m)")
        ax.set_ylabel("cumulative fraction")
        ax.set_ylim(0, 1.02)
        ax.set_xlim(left=0)
        return _save(fig, path)


def plot_trajectory(overlay: np.ndarray, path: str | Path, room: tuple[float, float] | None = None) -> Path:
    """Ground truth against smoothed predictions, from a trajectory overlay table."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 4.2))
        ax.plot(overlay[:, 1], overlay[:, 2], color="k", lw=1.0, label="ground truth")
        ax.plot(overlay[:, 3], overlay[:, 4], ".", color="C1", ms=2, alpha=0.4, label="raw estimate")
        ax.plot(overlay[:, 5], overlay[:, 6], color="C0", lw=1.0, label="smoothed estimate")
        if room is not None:
            w, l = room
            ax.plot([0, w, w, 0, 0], [0, 0, l, l, 0], color="0.5", lw=0.8)
            ax.set_xlim(-0.2, w + 0.2)
            ax.set_ylim(-0.2, l + 0.2)
        ax.set_aspect("equal")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.legend(loc="upper right", fontsize=7)
        return _save(fig, path)


def plot_confusion(cm: np.ndarray, path: str | Path, names=None) -> Path:
    cm = np.asarray(cm)
    names = list(names) if names is not None else [str(k) for k in range(len(cm))]
    rows = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)
    with plt.rc_context({**_RC, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(1.2 + 0.8 * len(cm), 1.0 + 0.8 * len(cm)))
        ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
        for i in range(len(cm)):
            for j in range(len(cm)):
                ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                        color="white" if frac[i, j] > 0.6 else "black")
        ax.set_xticks(range(len(cm)), names, rotation=30)
        ax.set_yticks(range(len(cm)), names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        return _save(fig, path)


def plot_history(history: list[dict], path: str | Path) -> Path:
    ep = [r["epoch"] for r in history]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(ep, [r["train_loss"] for r in history], label="train loss")
        ax.plot(ep, [r["val_loss"] for r in history], label="validation loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend()
        return _save(fig, path)
