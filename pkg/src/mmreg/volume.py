"""Dense 3D volumes, spatial normalization and pyramids.

Arrays are indexed ``data[x, y, z]``; world coordinates of voxel ``(i, j, k)``
are ``(i * sx, j * sy, k * sz)`` millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

Triple = tuple[float, float, float]


def _as_triple(values: Sequence[float], name: str, cast=float) -> tuple:
    if len(values) != 3:
        raise InvalidArgumentError(f"{name} must have 3 components, got {len(values)}")
    return tuple(cast(v) for v in values)


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar image with physical voxel spacing (mm).

    The array is stored as float64 and marked read-only; operations always
    return new volumes.
    """

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise InvalidArgumentError(f"volume data must be 3D, got shape {data.shape}")
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise InvalidArgumentError(f"spacing must be positive, got {spacing}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing)

    def __repr__(self):
        return f"Volume(dims={self.dims}, spacing={self.spacing})"


@dataclass(frozen=True)
class GridSpec:
    target_spacing: Triple = (1.0, 1.0, 2.5)
    target_dims: tuple[int, int, int] = (256, 256, 48)

    def __post_init__(self):
        spacing = _as_triple(self.target_spacing, "target_spacing")
        dims = _as_triple(self.target_dims, "target_dims", int)
        if min(spacing) <= 0 or min(dims) <= 0:
            raise InvalidArgumentError(f"grid components must be positive: {spacing}, {dims}")
        object.__setattr__(self, "target_spacing", spacing)
        object.__setattr__(self, "target_dims", dims)


def _linear_along(data: np.ndarray, axis: int, coords: np.ndarray) -> np.ndarray:
    """1D linear interpolation of ``data`` along ``axis`` at clamped ``coords``."""
    n = data.shape[axis]
    coords = np.clip(coords, 0.0, n - 1)
    lo = np.minimum(np.floor(coords).astype(np.intp), max(n - 2, 0))
    hi = np.minimum(lo + 1, n - 1)
    frac = coords - lo
    shape = [1, 1, 1]
    shape[axis] = -1
    frac = frac.reshape(shape)
    return (1.0 - frac) * np.take(data, lo, axis=axis) + frac * np.take(data, hi, axis=axis)


def resample(vol: Volume, target_spacing: Sequence[float]) -> Volume:
    """Trilinear resampling onto a grid with ``target_spacing``.

    Output voxel ``i`` sits at world position ``i * target`` and reads the
    input at voxel coordinate ``i * target / spacing``; samples past the last
    input voxel are clamped to the edge.
    """
    target = _as_triple(target_spacing, "target_spacing")
    if min(target) <= 0:
        raise InvalidArgumentError(f"target spacing must be positive, got {target}")
    if target == vol.spacing:
        return Volume(vol.data, target)
    out = vol.data
    for axis in range(3):
        n = vol.dims[axis]
        n_out = max(1, int(round(n * vol.spacing[axis] / target[axis])))
        coords = np.arange(n_out) * (target[axis] / vol.spacing[axis])
        out = _linear_along(out, axis, coords)
    return Volume(out, target)


def crop_or_pad(vol: Volume, target_dims: Sequence[int]) -> Volume:
    """Center the volume in a grid of ``target_dims``, zero padding or cropping per axis."""
    dims = _as_triple(target_dims, "target_dims", int)
    if min(dims) <= 0:
        raise InvalidArgumentError(f"target dims must be positive, got {dims}")
    out = np.zeros(dims)
    src, dst = [], []
    for n_in, n_out in zip(vol.dims, dims):
        offset = (n_out - n_in) // 2
        if offset >= 0:
            src.append(slice(0, n_in))
            dst.append(slice(offset, offset + n_in))
        else:
            start = (n_in - n_out) // 2  # mirrors the padding offset so pad/crop round-trips
            src.append(slice(start, start + n_out))
            dst.append(slice(0, n_out))
    out[tuple(dst)] = vol.data[tuple(src)]
    return Volume(out, vol.spacing)


def normalize_intensity(vol: Volume) -> Volume:
    lo = vol.data.min()
    hi = vol.data.max()
    if hi > lo:
        return vol.with_data((vol.data - lo) / (hi - lo))
    return vol.with_data(np.zeros(vol.dims))


def downsample2(vol: Volume) -> Volume:
    """Halve each dimension by averaging 2x2x2 blocks; an odd trailing slab is dropped."""
    if min(vol.dims) < 2:
        raise InvalidArgumentError(f"cannot downsample dims {vol.dims}: every axis needs >= 2 voxels")
    nx, ny, nz = (n // 2 for n in vol.dims)
    block = vol.data[: 2 * nx, : 2 * ny, : 2 * nz].reshape(nx, 2, ny, 2, nz, 2)
    spacing = tuple(2.0 * s for s in vol.spacing)
    return Volume(block.mean(axis=(1, 3, 5)), spacing)


def build_pyramid(vol: Volume, levels: int) -> list[Volume]:
    """Return ``levels`` volumes, coarsest first, ending with ``vol`` itself."""
    if levels < 1:
        raise InvalidArgumentError(f"levels must be >= 1, got {levels}")
    pyramid = [vol]
    for _ in range(levels - 1):
        if min(pyramid[0].dims) < 4:
            raise InvalidArgumentError(
                f"{levels} levels is too many for dims {vol.dims}: coarsest level would drop below 2 voxels"
            )
        pyramid.insert(0, downsample2(pyramid[0]))
    return pyramid


def pyramid_dims(dims: Sequence[int], levels: int) -> list[tuple[int, int, int]]:
    """Dims of each :func:`build_pyramid` level without touching any data."""
    out = [tuple(int(n) for n in dims)]
    for _ in range(levels - 1):
        if min(out[0]) < 4:
            raise InvalidArgumentError(f"{levels} levels is too many for dims {tuple(dims)}")
        out.insert(0, tuple(n // 2 for n in out[0]))
    return out
