"""Variance-weighted mutual information (VWMI).

A joint weight map built from local standard deviations of both images
down-weights flat background before a Parzen-window joint histogram is
accumulated. The loss is ``1 - MI`` so that lower is better.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from scipy.ndimage import uniform_filter

from .errors import DegenerateWeightsError, InvalidArgumentError
from .transform import DTYPE, AffineParams, affine_coords_t, sample_t, to_tensor
from .volume import Volume

_TAPS = 6  # kernel support is (-3, 3) bin widths: at most 6 bin centers


@dataclass(frozen=True)
class HistogramConfig:
    bins: int = 32
    kernel_bandwidth: Optional[float] = None  # defaults to one bin width
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.bins < 2:
            raise InvalidArgumentError(f"bins must be >= 2, got {self.bins}")
        if self.kernel_bandwidth is not None and self.kernel_bandwidth <= 0:
            raise InvalidArgumentError(f"kernel bandwidth must be positive, got {self.kernel_bandwidth}")

    @property
    def bandwidth(self) -> float:
        return 1.0 / self.bins if self.kernel_bandwidth is None else float(self.kernel_bandwidth)

    def bin_centers(self) -> np.ndarray:
        return (np.arange(self.bins) + 0.5) / self.bins


@dataclass(frozen=True, eq=False)
class WeightMap:
    values: np.ndarray

    @classmethod
    def uniform(cls, dims) -> "WeightMap":
        return cls(np.ones(tuple(dims)))

    @property
    def dims(self):
        return tuple(self.values.shape)


def local_variance(vol: Volume, window: int = 7) -> Volume:
    """Variance over a cubic ``window`` around each voxel.

    Windows are truncated at the volume boundary, so border voxels use only
    the neighbours that exist.
    """
    if window < 3 or window % 2 == 0:
        raise InvalidArgumentError(f"window must be odd and >= 3, got {window}")
    data = vol.data - vol.data.min()
    count = uniform_filter(np.ones(vol.dims), size=window, mode="constant")
    mean = uniform_filter(data, size=window, mode="constant") / count
    mean_sq = uniform_filter(data * data, size=window, mode="constant") / count
    var = mean_sq - mean * mean
    # round-off guard: flat regions must come out exactly zero
    var[var < 1e-13 * max(1.0, float(mean_sq.max()))] = 0.0
    return vol.with_data(var)


def weight_map(fixed: Volume, moving: Volume, window: int = 7) -> WeightMap:
    """Normalized geometric mean of the two local standard deviations."""
    if fixed.dims != moving.dims:
        raise InvalidArgumentError(f"dims differ: {fixed.dims} vs {moving.dims}")
    var_f = local_variance(fixed, window).data
    var_m = local_variance(moving, window).data
    geo = np.sqrt(np.sqrt(var_f * var_m))
    peak = geo.max()
    if peak <= 0:
        return WeightMap(np.zeros(fixed.dims))
    return WeightMap(geo / peak)


# -- Parzen kernel ----------------------------------------------------------


def parzen_taps(values: torch.Tensor, cfg: HistogramConfig):
    """Sparse Parzen weights for each intensity sample.

    Returns ``(index, weight)`` of shape (N, 6): the bins each sample touches
    and its renormalized kernel weight there. The Gaussian is shifted down by
    its value at 3 bandwidths and clipped, so each sample's contribution is
    continuous in its intensity. Differentiable in ``values``.
    """
    width = 1.0 / cfg.bins
    h = cfg.bandwidth / width  # bandwidth in bin units
    reach = 3.0 * h
    t = values / width - 0.5  # continuous bin coordinate; centers sit at integers
    base = torch.floor(t.detach()) - (np.ceil(reach) - 1)
    ntaps = int(2 * np.ceil(reach))
    offsets = torch.arange(ntaps, dtype=values.dtype)
    centers = base.unsqueeze(-1) + offsets
    u = (centers - t.unsqueeze(-1)) / h
    k = torch.clamp(torch.exp(-0.5 * u * u) - np.exp(-4.5), min=0.0)
    valid = (centers >= 0) & (centers <= cfg.bins - 1)
    k = k * valid
    k = k / torch.clamp(k.sum(dim=-1, keepdim=True), min=1e-300)
    index = centers.long().clamp(0, cfg.bins - 1)
    return index, k


def joint_histogram_t(f_idx, f_w, m_values, weights, cfg: HistogramConfig) -> torch.Tensor:
    """Weighted joint histogram with fixed-image taps precomputed."""
    total = weights.sum()
    if not total > 0:
        raise DegenerateWeightsError("weight map sums to zero; histogram is undefined")
    m_idx, m_w = parzen_taps(m_values, cfg)
    bins = cfg.bins
    wf = f_w * (weights / total).unsqueeze(-1)
    P = torch.zeros(bins * bins, dtype=m_w.dtype)
    for a in range(f_idx.shape[1]):
        idx = (f_idx[:, a : a + 1] * bins + m_idx).reshape(-1)
        P = P.index_add(0, idx, (wf[:, a : a + 1] * m_w).reshape(-1))
    return P.reshape(bins, bins)


def mi_loss_t(P: torch.Tensor, eps: float) -> torch.Tensor:
    pf = P.sum(dim=1, keepdim=True)
    pm = P.sum(dim=0, keepdim=True)
    return 1.0 - (P * torch.log((P + eps) / (pf * pm + eps))).sum()


def overlap_taper_t(coords: torch.Tensor, dims) -> torch.Tensor:
    """1 for samples at least one voxel inside the moving grid, falling linearly to 0 at its faces."""
    upper = torch.tensor([n - 1 for n in dims], dtype=coords.dtype)
    margin = torch.minimum(coords, upper - coords)
    return torch.clamp(margin, 0.0, 1.0).prod(dim=-1)


class VWMIObjective:
    """VWMI of ``fixed`` against ``moving`` warped by a 9-DOF affine.

    The fixed-image Parzen taps and the weight map are computed once; calling
    the object with a 9-vector tensor returns a differentiable scalar loss.

    With ``overlap=True`` each voxel's weight is further multiplied by
    :func:`overlap_taper_t` of its sample position, so voxels that map outside
    the moving field of view drop out of the histogram instead of pairing the
    fixed image with zero fill.
    """

    def __init__(self, fixed: Volume, moving: Volume, m: WeightMap, cfg: HistogramConfig = HistogramConfig(), overlap: bool = False):
        if fixed.dims != moving.dims or m.dims != fixed.dims:
            raise InvalidArgumentError(f"dims differ: {fixed.dims}, {moving.dims}, {m.dims}")
        self.cfg = cfg
        self.dims = fixed.dims
        self.overlap = overlap
        self.spacing = fixed.spacing
        self.moving = to_tensor(moving.data)
        with torch.no_grad():
            self.f_idx, self.f_w = parzen_taps(to_tensor(fixed.data.reshape(-1)), cfg)
        self.weights = to_tensor(m.values.reshape(-1))
        if not self.weights.sum() > 0:
            raise DegenerateWeightsError("weight map sums to zero; histogram is undefined")

    def __call__(self, theta: torch.Tensor) -> torch.Tensor:
        coords = affine_coords_t(theta, self.dims, self.spacing)
        warped = sample_t(self.moving, coords).reshape(-1)
        weights = self.weights
        if self.overlap:
            weights = weights * overlap_taper_t(coords, self.dims).reshape(-1)
        P = joint_histogram_t(self.f_idx, self.f_w, warped, weights, self.cfg)
        return mi_loss_t(P, self.cfg.epsilon)

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        t = torch.tensor(np.asarray(theta, dtype=np.float64), requires_grad=True)
        loss = self(t)
        loss.backward()
        return float(loss.detach()), t.grad.numpy().copy()


def _flat(vol: Volume) -> torch.Tensor:
    return to_tensor(vol.data.reshape(-1))


def weighted_joint_histogram(fixed: Volume, moving: Volume, m: WeightMap, cfg: HistogramConfig = HistogramConfig()) -> np.ndarray:
    if fixed.dims != moving.dims or m.dims != fixed.dims:
        raise InvalidArgumentError(f"dims differ: {fixed.dims}, {moving.dims}, {m.dims}")
    with torch.no_grad():
        f_idx, f_w = parzen_taps(_flat(fixed), cfg)
        P = joint_histogram_t(f_idx, f_w, _flat(moving), to_tensor(m.values.reshape(-1)), cfg)
    return P.numpy()


def vwmi_loss(fixed: Volume, moving_warped: Volume, m: WeightMap, cfg: HistogramConfig = HistogramConfig()) -> float:
    P = to_tensor(weighted_joint_histogram(fixed, moving_warped, m, cfg))
    return float(mi_loss_t(P, cfg.epsilon))


def vwmi_gradient(fixed: Volume, moving: Volume, m: WeightMap, p: AffineParams, cfg: HistogramConfig = HistogramConfig()) -> np.ndarray:
    """Gradient of ``vwmi_loss(fixed, warp_affine(moving, p))`` w.r.t. ``[rot, trans, scale]``.

    The weight map is held fixed.
    """
    return VWMIObjective(fixed, moving, m, cfg).value_and_grad(p.to_vector())[1]
