"""Matplotlib figures written next to the CSV/JSON outputs (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .detection import DetectionMatrix  # noqa: E402

# Fixed metadata keeps PNG bytes identical between runs.
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_detection_matrix(matrix: DetectionMatrix, path, title: str | None = None) -> Path:
    """3D-bar style heat map of a detection matrix, one cell per (sent, projector)."""
    c = matrix.canonical()
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(c.probabilities, vmin=0, vmax=1, cmap="viridis")
    n = len(c.row_labels)
    ax.set_xticks(range(n), c.col_labels, rotation=60, fontsize=7)
    ax.set_yticks(range(n), c.row_labels, fontsize=7)
    ax.set_xlabel("projector")
    ax.set_ylabel("sent state")
    d = c.d
    ax.axhline(d - 0.5, color="w", lw=0.8)
    ax.axvline(d - 0.5, color="w", lw=0.8)
    ax.set_title(title or f"d={d} ({c.provenance})", fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return _save(fig, path)


def plot_keyrate(rows, path, d: int = 4) -> Path:
    """Numeric bound against the analytic curve; ``rows`` are (Q, K_numeric, K_analytic)."""
    from .protocol import key_rate_analytic, threshold_q0

    rows = np.asarray(rows, dtype=float)
    q0 = threshold_q0(d)
    qq = np.linspace(0, min(q0 * 1.15, (d - 1) / d), 200)
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.plot(qq, [key_rate_analytic(q, d).R for q in qq], "k-", lw=1, label="analytic")
    ax.plot(rows[:, 0], rows[:, 1], "o", ms=4, label="dual bound")
    ax.axhline(0, color="0.6", lw=0.6)
    ax.axvline(q0, color="0.6", lw=0.6, ls=":")
    ax.set_xlabel("QBER Q")
    ax.set_ylabel("key rate (bits / sifted photon)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_structure_function(r, D, r0: float, path) -> Path:
    from .turbulence import kolmogorov_structure

    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.loglog(r, D, "o", ms=3, label="screens")
    ax.loglog(r, kolmogorov_structure(r, r0), "k-", lw=1, label="6.88 (r/r0)^(5/3)")
    ax.set_xlabel("separation r (m)")
    ax.set_ylabel("D(r) (rad^2)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_centroids(samples, path) -> Path:
    s = np.asarray(samples) * 1e3
    fig, ax = plt.subplots(figsize=(3.8, 3.6))
    ax.plot(s[:, 0], s[:, 1], ".", ms=2, alpha=0.6)
    ax.set_aspect("equal")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    fig.tight_layout()
    return _save(fig, path)


def plot_images(panels, path) -> Path:
    """Row of RGB panels; ``panels`` is a list of (title, array)."""
    fig, axes = plt.subplots(1, len(panels), figsize=(2.6 * len(panels), 2.4))
    for ax, (title, img) in zip(np.atleast_1d(axes), panels):
        ax.imshow(img, interpolation="nearest")
        ax.set_title(title, fontsize=8)
        ax.axis("off")
    fig.tight_layout()
    return _save(fig, path)
