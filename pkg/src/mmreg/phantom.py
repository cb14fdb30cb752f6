"""Deterministic synthetic multi-modal volume pairs with known transforms."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgumentError
from .metrics import as_mask
from .transform import AffineParams, DeformationField, warp_affine, warp_dense
from .volume import Volume, normalize_intensity

REMAPS = ("identity", "inverse", "gamma", "sigmoid-bands")


@dataclass(frozen=True)
class BumpSpec:
    """Gaussian bump deformation; ``peak`` is the displacement (voxels) at its center."""

    center: tuple[float, float, float]
    radius: float
    peak: tuple[float, float, float]


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 32)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    n_blobs: int = 4
    modality_remap: str = "identity"
    gamma: float = 2.0
    transform: AffineParams = field(default_factory=AffineParams)
    bump: Optional[BumpSpec] = None
    noise: float = 0.02
    noise_smoothing: float = 1.0

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise InvalidArgumentError(f"invalid phantom dims {self.dims}")
        if self.modality_remap not in REMAPS:
            raise InvalidArgumentError(f"unknown remap {self.modality_remap!r}; choose from {REMAPS}")
        if self.noise < 0 or self.noise_smoothing < 0:
            raise InvalidArgumentError("noise amplitude and smoothing must be non-negative")
        if self.n_blobs < 1:
            raise InvalidArgumentError("a phantom needs at least one blob")
        if self.bump is not None and max(abs(p) for p in self.bump.peak) > min(self.dims) / 8:
            raise InvalidArgumentError(f"bump peak {self.bump.peak} exceeds dims/8 for dims {self.dims}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transform"] = asdict(self.transform)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        if "transform" in d:
            d["transform"] = AffineParams(**{k: tuple(v) for k, v in d["transform"].items()})
        if d.get("bump"):
            b = d["bump"]
            d["bump"] = BumpSpec(tuple(b["center"]), float(b["radius"]), tuple(b["peak"]))
        for key in ("dims", "spacing"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class PhantomPair:
    fixed: Volume
    moving: Volume
    fixed_mask: Volume
    moving_mask: Volume
    spec: PhantomSpec
    bump_field: Optional[DeformationField] = None


def remap(data: np.ndarray, kind: str, gamma: float = 2.0) -> np.ndarray:
    """Monotone or non-monotone intensity mapping imitating another modality."""
    if kind == "identity":
        return data
    if kind == "inverse":
        return 1.0 - data
    if kind == "gamma":
        return np.clip(data, 0.0, None) ** gamma
    if kind == "sigmoid-bands":
        # non-monotone: mid intensities bright, extremes dark
        return 1.0 / (1.0 + np.exp(-12.0 * (data - 0.2))) - 1.0 / (1.0 + np.exp(-12.0 * (data - 0.7)))
    raise InvalidArgumentError(f"unknown remap {kind!r}")


def _blobs(spec: PhantomSpec, rng: np.random.Generator):
    dims = np.asarray(spec.dims, dtype=np.float64)
    grid = np.stack(np.meshgrid(*[np.arange(n) for n in spec.dims], indexing="ij"), axis=-1)
    image = np.zeros(spec.dims)
    radii = []
    for _ in range(spec.n_blobs):
        sigma = rng.uniform(dims / 14, dims / 7)
        center = rng.uniform(0.35 * dims, 0.65 * dims)
        amplitude = rng.uniform(0.4, 1.0)
        rho2 = (((grid - center) / sigma) ** 2).sum(axis=-1)
        image += amplitude * np.exp(-0.5 * rho2)
        radii.append((np.prod(sigma), rho2))
    # the mask is the 2-sigma ellipsoid of the largest blob
    _, rho2 = max(radii, key=lambda t: t[0])
    return image, (rho2 <= 4.0).astype(np.float64)


def _texture(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance noise, optionally Gaussian-correlated.

    Correlated texture survives resampling nearly unchanged, so it is tracked
    like anatomy instead of being blurred away by interpolation.
    """
    white = rng.standard_normal(spec.dims)
    if spec.noise_smoothing == 0:
        return white
    smooth = gaussian_filter(white, spec.noise_smoothing, mode="wrap")
    return smooth / smooth.std()


def bump_field(bump: BumpSpec, dims, spacing) -> DeformationField:
    grid = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), axis=-1)
    weight = np.exp(-(((grid - np.asarray(bump.center)) ** 2).sum(axis=-1)) / (2.0 * bump.radius**2))
    return DeformationField(weight[..., None] * np.asarray(bump.peak, dtype=np.float64), spacing)


def generate_pair(spec: PhantomSpec) -> PhantomPair:
    """Build a fixed/moving pair and their masks.

    ``moving`` is the fixed image (noise included) warped by the ground-truth
    affine, then by the optional bump, then intensity-remapped; remapping
    last keeps the out-of-view background consistent with the remapped
    background. Identical seeds give bit-identical outputs.
    """
    rng = np.random.default_rng(spec.seed)
    clean, mask = _blobs(spec, rng)
    noisy = clean + spec.noise * float(clean.max()) * _texture(spec, rng)
    fixed = normalize_intensity(Volume(noisy, spec.spacing))
    fixed_mask = Volume(mask, spec.spacing)

    moving = warp_affine(fixed, spec.transform)
    soft_mask = warp_affine(fixed_mask, spec.transform)
    bump = None
    if spec.bump is not None:
        bump = bump_field(spec.bump, spec.dims, spec.spacing)
        moving = warp_dense(moving, bump)
        soft_mask = warp_dense(soft_mask, bump)
    moving = moving.with_data(remap(moving.data, spec.modality_remap, spec.gamma))
    return PhantomPair(fixed, moving, fixed_mask, as_mask(soft_mask), spec, bump)


def affine_recovery_error(recovered: AffineParams, truth: AffineParams, dims, spacing) -> tuple[float, float]:
    """How far ``recovered`` is from undoing ``truth``.

    Returns the rotation angle (degrees) of the residual transform's polar
    rotation factor and the residual displacement (voxels) at the volume
    center. A perfect registration composes with the ground truth to the identity.
    """
    from .transform import affine_matrix, volume_center

    c = volume_center(dims, spacing)
    residual = affine_matrix(recovered, c) @ affine_matrix(truth, c)
    u, _, vt = np.linalg.svd(residual[:3, :3])
    rot = u @ vt
    angle = np.degrees(np.arccos(np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)))
    shift_mm = residual[:3, :3] @ c + residual[:3, 3] - c
    return float(angle), float(np.linalg.norm(shift_mm / np.asarray(spacing)))
