"""Affine transforms, displacement fields and trilinear warping.

Sampling is backward: an output voxel ``x`` reads the source image at the
mapped position, with trilinear interpolation and zero outside the grid.
Displacements are in voxel units. The differentiable kernels work on float64
torch tensors so the losses can backpropagate into transform parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError
from .volume import Volume, _as_triple

DTYPE = torch.float64


@dataclass(frozen=True)
class AffineParams:
    """9-DOF affine: rotations (rad), translations (mm), per-axis scales."""

    rot: tuple[float, float, float] = (0.0, 0.0, 0.0)
    trans: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "rot", _as_triple(self.rot, "rot"))
        object.__setattr__(self, "trans", _as_triple(self.trans, "trans"))
        scale = _as_triple(self.scale, "scale")
        if min(scale) <= 0:
            raise InvalidArgumentError(f"scales must be positive, got {scale}")
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls()

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "AffineParams":
        v = [float(x) for x in v]
        if len(v) != 9:
            raise InvalidArgumentError(f"expected 9 parameters, got {len(v)}")
        return cls(tuple(v[0:3]), tuple(v[3:6]), tuple(v[6:9]))

    def to_vector(self) -> np.ndarray:
        return np.array(self.rot + self.trans + self.scale, dtype=np.float64)

    def is_identity(self) -> bool:
        return self == AffineParams()


@dataclass(frozen=True, eq=False)
class DeformationField:
    """Dense displacement field, ``disp[x, y, z] = (ux, uy, uz)`` in voxels."""

    disp: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        disp = np.array(self.disp, dtype=np.float64)
        if disp.ndim != 4 or disp.shape[-1] != 3:
            raise InvalidArgumentError(f"displacement array must be (nx, ny, nz, 3), got {disp.shape}")
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise InvalidArgumentError(f"spacing must be positive, got {spacing}")
        disp.flags.writeable = False
        object.__setattr__(self, "disp", disp)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.disp.shape[:3])

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0)) -> "DeformationField":
        return cls(np.zeros(tuple(dims) + (3,)), spacing)


@dataclass(frozen=True)
class MultiResField:
    """Residual displacement fields, coarsest level first."""

    residuals: list = field(default_factory=list)

    def __post_init__(self):
        if not self.residuals:
            raise InvalidArgumentError("a multi-resolution field needs at least one level")
        for coarse, fine in zip(self.residuals[:-1], self.residuals[1:]):
            expected = tuple(n // 2 for n in fine.dims)
            if coarse.dims != expected:
                raise InvalidArgumentError(
                    f"level dims {coarse.dims} inconsistent with finer level {fine.dims} (expected {expected})"
                )

    @property
    def levels(self) -> int:
        return len(self.residuals)

    @property
    def dims(self):
        return self.residuals[-1].dims


# -- matrices ---------------------------------------------------------------


def _rotation_np(rot) -> np.ndarray:
    rx, ry, rz = rot
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def volume_center(dims, spacing) -> np.ndarray:
    """World position (mm) of the geometric center of the voxel grid."""
    return (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0 * np.asarray(spacing)


def affine_matrix(p: AffineParams, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Homogeneous 4x4 ``T(c) T(t) Rz Ry Rx S T(-c)``."""
    c = np.asarray(center, dtype=np.float64)
    A = _rotation_np(p.rot) @ np.diag(p.scale)
    M = np.eye(4)
    M[:3, :3] = A
    M[:3, 3] = c + np.asarray(p.trans) - A @ c
    return M


def _rotation_t(rot: torch.Tensor) -> torch.Tensor:
    one = torch.ones((), dtype=rot.dtype)
    zero = torch.zeros((), dtype=rot.dtype)
    cx, sx = torch.cos(rot[0]), torch.sin(rot[0])
    cy, sy = torch.cos(rot[1]), torch.sin(rot[1])
    cz, sz = torch.cos(rot[2]), torch.sin(rot[2])
    Rx = torch.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx]).reshape(3, 3)
    Ry = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy]).reshape(3, 3)
    Rz = torch.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one]).reshape(3, 3)
    return Rz @ Ry @ Rx


# -- torch kernels ----------------------------------------------------------


def voxel_grid(dims) -> torch.Tensor:
    """Integer voxel coordinates as a float tensor of shape (nx, ny, nz, 3)."""
    axes = [torch.arange(n, dtype=DTYPE) for n in dims]
    return torch.stack(torch.meshgrid(*axes, indexing="ij"), dim=-1)


def sample_t(data: torch.Tensor, coords: torch.Tensor, border: bool = False) -> torch.Tensor:
    """Trilinear lookup of ``data`` at continuous voxel ``coords`` (..., 3).

    Points outside ``[0, n-1]`` on any axis read 0, or the nearest edge
    value when ``border`` is set. Differentiable in ``coords`` and ``data``.
    """
    dims = data.shape
    upper = torch.tensor([n - 1 for n in dims], dtype=coords.dtype)
    if border:
        c = torch.minimum(torch.maximum(coords, torch.zeros_like(upper)), upper)
        inside = None
    else:
        inside = ((coords >= 0) & (coords <= upper)).all(dim=-1)
        c = torch.where(inside.unsqueeze(-1), coords, torch.zeros_like(coords))
    lo = torch.minimum(torch.floor(c.detach()), (upper - 1).clamp(min=0))
    frac = c - lo
    lo = lo.long()
    hi = torch.minimum(lo + 1, upper.long())
    ny, nz = dims[1], dims[2]
    flat = data.reshape(-1)
    fx, fy, fz = frac.unbind(-1)
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    x0, y0, z0 = lo.unbind(-1)
    x1, y1, z1 = hi.unbind(-1)

    def at(ix, iy, iz):
        return flat[(ix * ny + iy) * nz + iz]

    out = (
        gx * (gy * (gz * at(x0, y0, z0) + fz * at(x0, y0, z1)) + fy * (gz * at(x0, y1, z0) + fz * at(x0, y1, z1)))
        + fx * (gy * (gz * at(x1, y0, z0) + fz * at(x1, y0, z1)) + fy * (gz * at(x1, y1, z0) + fz * at(x1, y1, z1)))
    )
    return out if inside is None else out * inside


def affine_coords_t(theta: torch.Tensor, dims, spacing, points: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Source voxel coordinates for backward affine warping.

    ``theta`` is the 9-vector ``[rot, trans(mm), scale]``. A target voxel at
    world ``x`` reads the source at ``M^-1 x``; the result is expressed as the
    voxel index plus a displacement so that the identity is exact. ``points``
    (voxel coordinates, (..., 3)) replaces the regular grid when given.
    """
    sp = torch.tensor(spacing, dtype=DTYPE)
    center = torch.as_tensor(volume_center(dims, spacing), dtype=DTYPE)
    R = _rotation_t(theta[0:3])
    A = R.transpose(0, 1) / theta[6:9].unsqueeze(1)  # S^-1 R^T
    grid = voxel_grid(dims) if points is None else points
    rel = grid * sp - center
    eye = torch.eye(3, dtype=DTYPE)
    disp_mm = rel @ (A - eye).transpose(0, 1) - A @ theta[3:6]
    return grid + disp_mm / sp


def upsample_field_t(disp: torch.Tensor, dims) -> torch.Tensor:
    """Trilinearly resize a (nx, ny, nz, 3) voxel-unit field and rescale its magnitudes."""
    src = disp.shape[:3]
    if tuple(src) == tuple(dims):
        return disp
    vol = disp.permute(3, 0, 1, 2).unsqueeze(0)
    up = F.interpolate(vol, size=tuple(dims), mode="trilinear", align_corners=False)
    ratio = torch.tensor([d / s for d, s in zip(dims, src)], dtype=disp.dtype)
    return up.squeeze(0).permute(1, 2, 3, 0) * ratio


def compose_t(residuals: Sequence[torch.Tensor]) -> torch.Tensor:
    dims = residuals[-1].shape[:3]
    total = residuals[-1]
    for r in residuals[:-1]:
        total = total + upsample_field_t(r, dims)
    return total


# -- public numpy API -------------------------------------------------------


def to_tensor(a) -> torch.Tensor:
    """Float64 tensor holding a private copy of ``a`` (volume arrays are read-only)."""
    return torch.from_numpy(np.array(a, dtype=np.float64))


_t = to_tensor


def trilinear_sample(vol: Volume, point) -> float:
    with torch.no_grad():
        return float(sample_t(_t(vol.data), _t(point).reshape(1, 3))[0])


def warp_affine(vol: Volume, p: AffineParams) -> Volume:
    if p.is_identity():
        return vol.with_data(vol.data)
    with torch.no_grad():
        coords = affine_coords_t(_t(p.to_vector()), vol.dims, vol.spacing)
        return vol.with_data(sample_t(_t(vol.data), coords).numpy())


def warp_dense(vol: Volume, field: DeformationField) -> Volume:
    if field.dims != vol.dims:
        raise InvalidArgumentError(f"field dims {field.dims} do not match volume dims {vol.dims}")
    with torch.no_grad():
        coords = voxel_grid(vol.dims) + _t(field.disp)
        return vol.with_data(sample_t(_t(vol.data), coords).numpy())


def warp_composed(vol: Volume, p: AffineParams, field: DeformationField) -> Volume:
    """Sample ``vol`` once at ``A(x + u(x))``: the affine, then the field, without resampling twice."""
    if field.dims != vol.dims:
        raise InvalidArgumentError(f"field dims {field.dims} do not match volume dims {vol.dims}")
    with torch.no_grad():
        points = voxel_grid(vol.dims) + _t(field.disp)
        if not p.is_identity():
            points = affine_coords_t(_t(p.to_vector()), vol.dims, vol.spacing, points)
        return vol.with_data(sample_t(_t(vol.data), points).numpy())


def affine_to_field(p: AffineParams, dims, spacing) -> DeformationField:
    """Voxel displacement field equivalent to backward-warping by ``p``."""
    with torch.no_grad():
        coords = affine_coords_t(_t(p.to_vector()), dims, spacing)
        disp = coords - voxel_grid(dims)
    return DeformationField(disp.numpy(), spacing)


def compose_multires(f: MultiResField) -> DeformationField:
    """Sum of all residual levels upsampled to the finest grid."""
    finest = f.residuals[-1]
    if len(f.residuals) == 1:
        return finest
    with torch.no_grad():
        total = compose_t([_t(r.disp) for r in f.residuals])
    return DeformationField(total.numpy(), finest.spacing)
