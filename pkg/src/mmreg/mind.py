"""Modality independent neighbourhood descriptor (MIND), 6-neighbourhood variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .transform import to_tensor
from .volume import Volume

# six face neighbours as (axis, step)
OFFSETS = ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1))
PATCH_SIGMA = 0.5
VARIANCE_FLOOR = 1e-6

_side = np.exp(-1.0 / (2.0 * PATCH_SIGMA**2))
_W_SIDE = _side / (1.0 + 2.0 * _side)
_W_CENTER = 1.0 / (1.0 + 2.0 * _side)


@dataclass(frozen=True, eq=False)
class MindFeatures:
    """Descriptor channels stacked as ``(C, nx, ny, nz)``."""

    channels: np.ndarray

    @property
    def dims(self):
        return tuple(self.channels.shape[1:])


def shift_clamped(img: torch.Tensor, axis: int, step: int) -> torch.Tensor:
    """``out[x] = img[clamp(x + step * e_axis)]`` for a unit ``step``."""
    n = img.shape[axis]
    if n == 1:
        return img
    if step > 0:
        return torch.cat([img.narrow(axis, 1, n - 1), img.narrow(axis, n - 1, 1)], dim=axis)
    return torch.cat([img.narrow(axis, 0, 1), img.narrow(axis, 0, n - 1)], dim=axis)


def patch_smooth(img: torch.Tensor) -> torch.Tensor:
    """Separable 3-tap Gaussian (sigma 0.5 voxels) with edge replication."""
    for axis in range(img.dim()):
        img = _W_CENTER * img + _W_SIDE * (shift_clamped(img, axis, -1) + shift_clamped(img, axis, 1))
    return img


def mind_t(img: torch.Tensor) -> torch.Tensor:
    dist = torch.stack([patch_smooth((img - shift_clamped(img, axis, step)) ** 2) for axis, step in OFFSETS])
    var = torch.clamp(dist.mean(dim=0), min=VARIANCE_FLOOR)
    # exp(-D/V) divided by its per-voxel max
    return torch.exp(-(dist - dist.min(dim=0).values) / var)


def mind_features(vol: Volume) -> MindFeatures:
    with torch.no_grad():
        return MindFeatures(mind_t(to_tensor(vol.data)).numpy())
