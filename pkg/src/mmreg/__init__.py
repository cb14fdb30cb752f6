"""Training-free multi-modal 3D image registration.

Coarse 9-DOF affine alignment driven by variance-weighted mutual information,
followed by deformable refinement of multi-resolution residual displacement
fields under a search-based MIND similarity.
"""

from .volume import (
    GridSpec,
    Volume,
    build_pyramid,
    crop_or_pad,
    downsample2,
    normalize_intensity,
    resample,
)
from .transform import (
    AffineParams,
    DeformationField,
    MultiResField,
    affine_matrix,
    compose_multires,
    trilinear_sample,
    warp_affine,
    warp_composed,
    warp_dense,
)

__version__ = "0.1.0"

__all__ = [
    "AffineParams",
    "DeformationField",
    "GridSpec",
    "MultiResField",
    "Volume",
    "affine_matrix",
    "build_pyramid",
    "compose_multires",
    "crop_or_pad",
    "downsample2",
    "normalize_intensity",
    "resample",
    "trilinear_sample",
    "warp_affine",
    "warp_composed",
    "warp_dense",
]
