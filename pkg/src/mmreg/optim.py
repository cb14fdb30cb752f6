"""Adam-driven optimization for the coarse affine and deformable stages."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .config import RegistrationConfig, StageSchedule
from .errors import InvalidArgumentError, NumericalError
from .smind import DeformObjective
from .transform import AffineParams, DeformationField, MultiResField, volume_center, warp_affine
from .volume import Volume, downsample2, pyramid_dims
from .vwmi import VWMIObjective, WeightMap, weight_map

log = logging.getLogger(__name__)

# (stage, iteration, loss) rows
Trace = list


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise InvalidArgumentError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, step=t)


class EarlyStopping:
    """Stop once the best loss has not improved by ``min_delta`` for ``patience`` iterations."""

    def __init__(self, patience: int, min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.wait = 0

    def update(self, loss: float) -> bool:
        if loss < self.best - self.min_delta:
            self.best = loss
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


def run_adam(
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    schedule: StageSchedule,
    stage: str = "",
    trace: Optional[Trace] = None,
) -> tuple[np.ndarray, float, int]:
    """Minimize with Adam and early stopping; returns (best params, best loss, iterations run)."""
    x = np.array(x0, dtype=np.float64)
    state = AdamState.zeros(x.size, schedule.lr)
    stopper = EarlyStopping(schedule.patience, schedule.min_delta)
    best_x, best_loss = x.copy(), np.inf
    it = 0
    for it in range(1, schedule.max_iters + 1):
        loss, grad = value_and_grad(x)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericalError(f"{stage or 'optimizer'}: non-finite loss or gradient at iteration {it}")
        if trace is not None:
            trace.append((stage, it, loss))
        if loss < best_loss:
            best_x, best_loss = x.copy(), loss
        if stopper.update(loss):
            log.debug("%s: early stop at iteration %d (best %.6g)", stage, it, best_loss)
            break
        x, state = adam_step(state, x, grad)
    return best_x, best_loss, it


def gradient_check(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    grad: np.ndarray,
    h: float = 1e-3,
    components=None,
    scale_floor: float = 0.0,
) -> dict:
    """Compare ``grad`` against central differences of ``f`` at ``x``.

    Relative error per component is ``|g - fd| / max(|g|, |fd|, floor)`` (0
    when the denominator vanishes), where ``floor = scale_floor * max|fd|``.
    A small floor keeps components that happen to be near zero from turning
    finite-difference truncation error into a huge ratio. ``components``
    restricts the check to selected flat indices.
    """
    if h <= 0:
        raise InvalidArgumentError(f"step must be positive, got {h}")
    if scale_floor < 0:
        raise InvalidArgumentError(f"scale_floor must be non-negative, got {scale_floor}")
    x = np.array(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    idx = np.arange(x.size) if components is None else np.asarray(components)
    fd = np.empty(len(idx))
    flat = x.reshape(-1)
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        fd[n] = (up - down) / (2.0 * h)
    g = grad[idx]
    scale = np.maximum(np.maximum(np.abs(g), np.abs(fd)), scale_floor * np.abs(fd).max(initial=0.0))
    rel = np.where(scale > 0, np.abs(g - fd) / np.where(scale > 0, scale, 1.0), 0.0)
    return {"index": idx, "analytic": g, "numeric": fd, "relative_error": rel,
            "max": float(rel.max()), "mean": float(rel.mean())}


# -- coarse stage -----------------------------------------------------------


def _weights_or_uniform(fixed: Volume, moving: Volume, window: int) -> WeightMap:
    m = weight_map(fixed, moving, window)
    if not m.values.sum() > 0:
        log.warning("degenerate VWMI weight map (flat images); falling back to uniform weights")
        return WeightMap.uniform(fixed.dims)
    return m


def coarse_register(fixed: Volume, moving: Volume, cfg: RegistrationConfig = RegistrationConfig(), trace: Optional[Trace] = None) -> AffineParams:
    """Two-phase VWMI affine registration of ``moving`` onto ``fixed``.

    Phase A fits rotation and translation on 2x downsampled volumes with unit
    scales; phase B refines all nine parameters at full resolution. Each phase
    uses a weight map computed once from the unregistered pair at its own
    resolution, and only voxels overlapping the moving field of view count.
    Translations are optimized in units of the half field of view so one
    learning rate serves every parameter.
    """
    if fixed.dims != moving.dims:
        raise InvalidArgumentError(f"dims differ: {fixed.dims} vs {moving.dims}")
    extent = np.maximum(volume_center(fixed.dims, fixed.spacing), 1e-6)
    schedule = cfg.coarse_schedule

    def to_theta(z):
        return np.concatenate([z[0:3], z[3:6] * extent, z[6:9] if z.size == 9 else np.ones(3)])

    def wrap(obj, n):
        def value_and_grad(z):
            loss, g = obj.value_and_grad(to_theta(z))
            g = np.concatenate([g[0:3], g[3:6] * extent, g[6:9]])
            return loss, g[:n]
        return value_and_grad

    can_halve = min(fixed.dims) >= 2
    fixed_a = downsample2(fixed) if can_halve else fixed
    moving_a = downsample2(moving) if can_halve else moving
    obj_a = VWMIObjective(fixed_a, moving_a, _weights_or_uniform(fixed_a, moving_a, cfg.window), cfg.histogram, overlap=True)
    z_a, _, _ = run_adam(wrap(obj_a, 6), np.zeros(6), schedule, "coarse-A", trace)
    p_a = AffineParams.from_vector(to_theta(z_a))

    m_b = _weights_or_uniform(fixed, moving, cfg.window)
    obj_b = VWMIObjective(fixed, moving, m_b, cfg.histogram, overlap=True)
    z0 = np.concatenate([z_a, np.ones(3)])
    z_b, _, _ = run_adam(wrap(obj_b, 9), z0, schedule, "coarse-B", trace)
    return AffineParams.from_vector(to_theta(z_b))


# -- deformable stage -------------------------------------------------------


def deformable_register(
    fixed: Volume,
    moving: Volume,
    cfg: RegistrationConfig = RegistrationConfig(),
    trace: Optional[Trace] = None,
    affine: Optional[AffineParams] = None,
) -> MultiResField:
    """Jointly optimize residual displacement fields on ``cfg.levels`` grids.

    With ``affine`` the field is a residual on top of it: the result ``u``
    maps a fixed voxel ``x`` to ``affine(x + u(x))`` in the original moving
    image, the same map as warping by the affine and then by ``u``.
    """
    if fixed.dims != moving.dims:
        raise InvalidArgumentError(f"dims differ: {fixed.dims} vs {moving.dims}")
    dims = pyramid_dims(fixed.dims, cfg.levels)
    shapes = [d + (3,) for d in dims]
    sizes = [int(np.prod(s)) for s in shapes]
    splits = np.cumsum(sizes)[:-1]
    obj = DeformObjective(fixed, moving, cfg.deform, affine=affine)

    def unpack(x):
        return [part.reshape(s) for part, s in zip(np.split(x, splits), shapes)]

    def value_and_grad(x):
        loss, grads = obj.value_and_grad(unpack(x))
        return loss, np.concatenate([g.reshape(-1) for g in grads])

    x, _, _ = run_adam(value_and_grad, np.zeros(sum(sizes)), cfg.deform_schedule, "deformable", trace)
    levels = len(dims)
    spacings = [tuple(s * 2 ** (levels - 1 - l) for s in fixed.spacing) for l in range(levels)]
    return MultiResField([DeformationField(a, sp) for a, sp in zip(unpack(x), spacings)])
