"""Figures rendered to PNG with fixed metadata so reruns are byte-identical."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_METADATA = {"Software": None}
_STYLE = {"figure.dpi": 100, "font.size": 9, "axes.grid": True, "grid.alpha": 0.3}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata=_METADATA)
    plt.close(fig)
    return path


def chain_graph(P: np.ndarray, pi: np.ndarray, path) -> Path:
    """States on a circle, arrows for positive off-diagonal entries, node labels with weights."""
    P = np.asarray(P, dtype=float)
    K = P.shape[0]
    ang = np.pi / 2 - 2 * np.pi * np.arange(K) / K
    pos = np.c_[np.cos(ang), np.sin(ang)]
    with plt.rc_context(_STYLE | {"axes.grid": False}):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        for i in range(K):
            for j in range(K):
                if i == j or P[i, j] <= 0:
                    continue
                a, b = pos[i], pos[j]
                ax.annotate("", xy=b + 0.15 * (a - b), xytext=a + 0.15 * (b - a),
                            arrowprops={"arrowstyle": "->", "connectionstyle": "arc3,rad=0.15",
                                        "lw": 0.5 + 2 * P[i, j], "color": "0.35"})
            if P[i, i] > 0:
                ax.add_patch(plt.Circle(1.22 * pos[i], 0.1, fill=False, lw=0.5 + 2 * P[i, i], color="0.35"))
        ax.scatter(pos[:, 0], pos[:, 1], s=900, c="white", edgecolors="black", zorder=3)
        for i in range(K):
            ax.text(*pos[i], f"S{i + 1}\n{pi[i]:.3f}", ha="center", va="center", fontsize=8, zorder=4)
        ax.set_xlim(-1.5, 1.5)
        ax.set_ylim(-1.5, 1.5)
        ax.set_aspect("equal")
        ax.axis("off")
        ax.set_title("Switching chain (node label: stationary weight)")
        return _save(fig, path)


def fitted_curves(x, y, grid, curves: dict[str, np.ndarray], path, xlabel="T [K]",
                  ylabel="cp [kJ/(kg K)]") -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(x, y, "o", ms=4, color="black", label="data")
        for name, vals in curves.items():
            ax.plot(grid, vals, lw=1.4, label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def trajectories(series: dict[str, tuple[np.ndarray, np.ndarray]], path, ylabel="state") -> Path:
    """One panel per coordinate; ``series`` maps a label to ``(times, values)``."""
    t0, v0 = next(iter(series.values()))
    p = np.asarray(v0).reshape(len(t0), -1).shape[1]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(p, 1, figsize=(6, 1.8 + 1.4 * p), sharex=True, squeeze=False)
        for name, (t, vals) in series.items():
            vals = np.asarray(vals).reshape(len(t), -1)
            for j in range(p):
                axes[j, 0].plot(t, vals[:, j], lw=1.0, label=name)
        for j in range(p):
            axes[j, 0].set_ylabel(f"{ylabel} {j + 1}")
        axes[0, 0].legend(fontsize=7)
        axes[-1, 0].set_xlabel("t")
        fig.tight_layout()
        return _save(fig, path)


def ldp_table(eps, rescaled, action_value, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(eps, rescaled, "o-", label="-eps log P (Monte Carlo)")
        ax.axhline(action_value, color="black", ls="--", lw=1, label="minimum action")
        ax.set_xscale("log")
        ax.set_xlabel("eps")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)
