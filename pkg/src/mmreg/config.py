"""Registration hyperparameters and their flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, InvalidArgumentError
from .smind import DeformLossConfig, SMindConfig
from .volume import GridSpec
from .vwmi import HistogramConfig


@dataclass(frozen=True)
class StageSchedule:
    lr: float
    max_iters: int
    patience: int
    min_delta: float = 1e-5

    def __post_init__(self):
        if self.lr <= 0 or self.max_iters < 1 or self.patience < 1 or self.min_delta < 0:
            raise InvalidArgumentError(f"invalid stage schedule: {self}")


@dataclass(frozen=True)
class RegistrationConfig:
    bins: int = 32
    window: int = 7
    epsilon: float = 1e-7
    r: int = 4
    tau: float = 0.05
    sigma: float = 2.0
    lam: float = 1.0
    coarse_lr: float = 0.01
    coarse_iters: int = 500
    coarse_patience: int = 25
    deform_lr: float = 0.01
    deform_iters: int = 200
    deform_patience: int = 20
    min_delta: float = 1e-5
    levels: int = 3
    target_spacing: tuple = (1.0, 1.0, 2.5)
    target_dims: tuple = (256, 256, 48)
    preprocess: bool = True

    def __post_init__(self):
        # sub-configs validate their own invariants
        self.histogram
        self.deform
        self.coarse_schedule
        self.deform_schedule
        self.grid
        if self.window < 3 or self.window % 2 == 0:
            raise InvalidArgumentError(f"window must be odd and >= 3, got {self.window}")
        if self.epsilon <= 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def histogram(self) -> HistogramConfig:
        return HistogramConfig(bins=self.bins, epsilon=self.epsilon)

    @property
    def smind(self) -> SMindConfig:
        return SMindConfig(r=self.r, tau=self.tau, sigma=self.sigma)

    @property
    def deform(self) -> DeformLossConfig:
        return DeformLossConfig(smind=self.smind, lam=self.lam, levels=self.levels)

    @property
    def coarse_schedule(self) -> StageSchedule:
        return StageSchedule(self.coarse_lr, self.coarse_iters, self.coarse_patience, self.min_delta)

    @property
    def deform_schedule(self) -> StageSchedule:
        return StageSchedule(self.deform_lr, self.deform_iters, self.deform_patience, self.min_delta)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.target_spacing, self.target_dims)

    def replace(self, **changes) -> "RegistrationConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RegistrationConfig)}
_TUPLE_TYPES = {"target_spacing": float, "target_dims": int}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return repr(value)


def _parse(name: str, text: str, lineno: int):
    kind = _FIELDS[name].type
    try:
        if name in _TUPLE_TYPES:
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != 3:
                raise ValueError("expected 3 comma-separated values")
            return tuple(_TUPLE_TYPES[name](p) for p in parts)
        if kind == "bool":
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError("expected true or false")
            return lowered in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        return float(text)
    except ValueError as exc:
        raise FormatError(f"line {lineno}: bad value for {name!r}: {text!r} ({exc})") from None


def dumps_config(cfg: RegistrationConfig) -> str:
    lines = [f"{name} = {_format(getattr(cfg, name))}" for name in _FIELDS]
    return "\n".join(lines) + "\n"


def loads_config(text: str) -> RegistrationConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "lambda":
            key = "lam"
        if key not in _FIELDS:
            raise FormatError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse(key, value, lineno)
    try:
        return RegistrationConfig(**values)
    except InvalidArgumentError as exc:
        raise FormatError(f"invalid configuration: {exc}") from None


def load_config(path) -> RegistrationConfig:
    return loads_config(Path(path).read_text())


def save_config(cfg: RegistrationConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))
