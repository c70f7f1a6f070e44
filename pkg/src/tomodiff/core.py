"""Core array-backed types: volumes, tilt angle grids, tilt series, uncertainty maps.

Axis convention, fixed project-wide: volume axis 0 is depth (the slice
index), axis 1 is height (the tilt-axis direction), axis 2 is width.
Projection frames are indexed (tilt, height, width).

Values are stored as 32-bit floats; reductions accumulate in 64 bits.
All types are immutable after construction (backing arrays are marked
read-only); derive modified instances with ``with_data``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

DTYPE = np.float32

# Tolerance absorbing float division noise in floor(range/step).
_COUNT_EPS = 1e-9


def _readonly_f32(arr: np.ndarray, name: str, ndim: int) -> np.ndarray:
    a = np.ascontiguousarray(arr, dtype=DTYPE)
    if a.ndim != ndim:
        raise ValidationError(f"{name} must have {ndim} axes, got shape {a.shape}")
    if a.size == 0:
        raise ValidationError(f"{name} must be non-empty, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValidationError(f"{name} contains non-finite values")
    a.setflags(write=False)
    return a


def _check_finite_scalar(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value}")
    return value


@dataclass(frozen=True)
class Volume:
    """Dense 3D scalar grid of shape (depth, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _readonly_f32(self.data, "Volume", 3))

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume":
        """Copy-and-replace: a new Volume with the same validation applied."""
        return Volume(np.array(data, dtype=DTYPE))

    @classmethod
    def zeros(cls, shape: tuple[int, int, int]) -> "Volume":
        return cls(np.zeros(shape, dtype=DTYPE))


@dataclass(frozen=True)
class AngleSpec:
    """Tilt geometry: total angular span, increment, and optional center offset.

    The derived angle list starts at ``center - range/2`` and advances by
    ``step`` while staying within the span, i.e. it is truncated below
    ``center + range/2`` when the span is not an integer multiple of the
    step (acquisition never tilts past the stated limit). Angles are in
    degrees; projection kernels convert to radians internally.
    """

    range_deg: float
    step_deg: float
    center_deg: float = 0.0

    def __post_init__(self):
        rng = _check_finite_scalar(self.range_deg, "range_deg")
        step = _check_finite_scalar(self.step_deg, "step_deg")
        center = _check_finite_scalar(self.center_deg, "center_deg")
        if rng < 0:
            raise ValidationError(f"range_deg must be >= 0, got {rng}")
        if step <= 0:
            raise ValidationError(f"step_deg must be > 0, got {step}")
        object.__setattr__(self, "range_deg", rng)
        object.__setattr__(self, "step_deg", step)
        object.__setattr__(self, "center_deg", center)

    @property
    def n_tilts(self) -> int:
        return int(math.floor(self.range_deg / self.step_deg + _COUNT_EPS)) + 1

    def angles(self) -> np.ndarray:
        """Tilt angles in degrees, strictly increasing, float64."""
        start = self.center_deg - self.range_deg / 2.0
        return start + self.step_deg * np.arange(self.n_tilts, dtype=np.float64)


def angle_list(spec: AngleSpec) -> list[float]:
    """The derived tilt angles of ``spec`` as a plain list of degrees."""
    return [float(a) for a in spec.angles()]


@dataclass(frozen=True)
class TiltSeries:
    """A stack of projection frames, one per tilt angle, shape (T, H, W)."""

    spec: AngleSpec
    frames: np.ndarray

    def __post_init__(self):
        frames = _readonly_f32(self.frames, "TiltSeries frames", 3)
        if frames.shape[0] != self.spec.n_tilts:
            raise ValidationError(
                f"frame count {frames.shape[0]} does not match the "
                f"{self.spec.n_tilts} angles derived from the AngleSpec"
            )
        object.__setattr__(self, "frames", frames)

    @property
    def n_tilts(self) -> int:
        return self.frames.shape[0]

    @property
    def det_height(self) -> int:
        return self.frames.shape[1]

    @property
    def det_width(self) -> int:
        return self.frames.shape[2]

    def with_frames(self, frames: np.ndarray) -> "TiltSeries":
        return TiltSeries(self.spec, np.array(frames, dtype=DTYPE))


@dataclass(frozen=True)
class UncertaintyMap:
    """Per-voxel weights in [0, 1], same shape as the volume they describe."""

    data: np.ndarray

    def __post_init__(self):
        data = _readonly_f32(self.data, "UncertaintyMap", 3)
        lo, hi = float(data.min()), float(data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"uncertainty values must lie in [0, 1], got [{lo}, {hi}]")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def constant(cls, value: float, shape: tuple[int, int, int]) -> "UncertaintyMap":
        return cls(np.full(shape, value, dtype=DTYPE))
