"""Static figures for a registration run (loss trace and slice overlay)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .volume import Volume


def _checkerboard(a: np.ndarray, b: np.ndarray, tiles: int = 8) -> np.ndarray:
    ii, jj = np.indices(a.shape)
    size = max(1, min(a.shape) // tiles)
    return np.where(((ii // size) + (jj // size)) % 2 == 0, a, b)


def render_figures(out_dir, trace, fixed: Volume, warped: Volume) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for stage in dict.fromkeys(s for s, _, _ in trace):
        losses = [loss for s, _, loss in trace if s == stage]
        ax.plot(np.arange(1, len(losses) + 1), losses, label=stage)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    paths.append(out / "trace.png")
    fig.savefig(paths[-1], dpi=100)
    plt.close(fig)

    z = fixed.dims[2] // 2
    f, w = fixed.data[:, :, z].T, warped.data[:, :, z].T
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    for ax, img, title in zip(axes, (f, w, _checkerboard(f, w)), ("fixed", "warped moving", "checkerboard")):
        ax.imshow(img, cmap="gray", origin="lower")
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    paths.append(out / "overlay.png")
    fig.savefig(paths[-1], dpi=100)
    plt.close(fig)
    return paths
