"""Overlap and deformation-quality metrics."""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .errors import InvalidArgumentError
from .transform import AffineParams, DeformationField, warp_affine, warp_dense, warp_composed
from .volume import Volume

LOG_J_FLOOR = 1e-6


def as_mask(vol: Volume) -> Volume:
    """Binarize at 0.5 so that any label volume can be used as a mask."""
    return vol.with_data((vol.data >= 0.5).astype(np.float64))


def dice(a: Volume, b: Volume) -> float:
    """Dice overlap of two binary masks; two empty masks score 1."""
    if a.dims != b.dims:
        raise InvalidArgumentError(f"mask dims differ: {a.dims} vs {b.dims}")
    A = a.data >= 0.5
    B = b.data >= 0.5
    denom = int(A.sum()) + int(B.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(A, B).sum()) / denom


Transform = Union[AffineParams, DeformationField]


def warp_mask(mask: Volume, transforms: Union[Transform, Sequence[Transform]]) -> Volume:
    """Backward-warp a mask through one transform or a chain, thresholding once at the end.

    A chain ``[affine, field]`` reproduces the registration pipeline: the
    mask is sampled once at ``affine(x + u(x))``.
    """
    if isinstance(transforms, (AffineParams, DeformationField)):
        transforms = [transforms]
    transforms = list(transforms)
    soft = mask.with_data(mask.data.astype(np.float64))
    if len(transforms) == 2 and isinstance(transforms[0], AffineParams) and isinstance(transforms[1], DeformationField):
        return as_mask(warp_composed(soft, transforms[0], transforms[1]))
    for t in transforms:
        if isinstance(t, AffineParams):
            soft = warp_affine(soft, t)
        elif isinstance(t, DeformationField):
            soft = warp_dense(soft, t)
        else:
            raise InvalidArgumentError(f"unsupported transform type {type(t).__name__}")
    return as_mask(soft)


def jacobian_determinant(field: DeformationField) -> np.ndarray:
    """``det(I + grad u)`` with central differences, one-sided at the borders."""
    if min(field.dims) < 2:
        raise InvalidArgumentError(f"field dims {field.dims} too small for finite differences")
    # grads[c][a] = d u_c / d x_a
    grads = [np.gradient(field.disp[..., c], axis=(0, 1, 2)) for c in range(3)]
    J = np.empty(field.dims + (3, 3))
    for c in range(3):
        for a in range(3):
            J[..., c, a] = grads[c][a] + (1.0 if a == c else 0.0)
    return np.linalg.det(J)


def jacobian_stats(field: DeformationField) -> tuple[float, float]:
    """Percentage of voxels with ``J <= 0`` and the std of ``log J`` over ``J > 1e-6``."""
    det = jacobian_determinant(field)
    folding = 100.0 * float(np.count_nonzero(det <= 0)) / det.size
    positive = det[det > LOG_J_FLOOR]
    sigma = float(np.std(np.log(positive))) if positive.size else 0.0
    return folding, sigma
