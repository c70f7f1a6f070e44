"""Noise schedules, the deterministic denoising update, and the guided loop.

The reconstruction loop draws a Gaussian volume, computes the filtered
back-projection of the measurements once as the conditioning volume, and
then walks the schedule from pure noise to a clean sample. At every step
two noise estimates (conditional and unconditional) are mixed with the
guidance scale, the clean estimate is pulled toward data consistency by the
gradient projector, and the projected and unprojected estimates are fused
per voxel by the uncertainty map before re-noising at the next level.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import DTYPE, TiltSeries, UncertaintyMap, Volume
from .denoiser import DenoiseRequest
from .errors import DenoiserError, SamplingError, ValidationError
from .projector import ProjectorConfig, project, residual_norm
from .radon import fbp
from .uncertainty import compute_uncertainty

# Smallest alpha used by the discrete schedule; the update divides by it.
ALPHA_FLOOR = 1e-3

SCHEDULE_KINDS = ("linear", "cosine")

ProgressHook = Callable[[int, float, float], None]


def _alpha_curve(kind: str, t: np.ndarray) -> np.ndarray:
    if kind == "cosine":
        return np.cos(0.5 * np.pi * t)
    if kind == "linear":
        return np.sqrt(1.0 - t)
    raise ValidationError(f"unknown schedule kind {kind!r}, expected one of {SCHEDULE_KINDS}")


@dataclass(frozen=True)
class NoiseSchedule:
    """Discretized variance-preserving schedule: times descending 1 -> 0.

    ``alphas``/``betas`` satisfy ``alpha**2 + beta**2 == 1`` at every entry;
    alpha rises to 1 as t falls to 0. The first entry is floored at
    ``ALPHA_FLOOR`` (with beta recomputed) because the update divides by
    alpha. ``query`` evaluates the underlying continuous curve instead,
    without the floor.
    """

    kind: str
    times: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def query(self, t: float) -> tuple[float, float]:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ValidationError(f"t must lie in [0, 1], got {t}")
        alpha = float(_alpha_curve(self.kind, np.float64(t)))
        return alpha, math.sqrt(max(0.0, 1.0 - alpha * alpha))

    @classmethod
    def from_times(cls, times: np.ndarray, kind: str = "cosine") -> "NoiseSchedule":
        times = np.asarray(times, dtype=np.float64)
        if times.ndim != 1 or len(times) < 2:
            raise ValidationError("times must be a 1D array with at least 2 entries")
        if times[0] != 1.0 or times[-1] != 0.0 or not np.all(np.diff(times) < 0):
            raise ValidationError("times must decrease strictly from 1 to 0")
        alphas = np.maximum(_alpha_curve(kind, times), ALPHA_FLOOR)
        betas = np.sqrt(np.maximum(0.0, 1.0 - alphas * alphas))
        for a in (times, alphas, betas):
            a.setflags(write=False)
        return cls(kind=kind, times=times, alphas=alphas, betas=betas)


def make_schedule(n_steps: int, kind: str = "cosine") -> NoiseSchedule:
    """Uniformly spaced schedule with ``n_steps`` denoising updates."""
    if n_steps < 2:
        raise ValidationError(f"n_steps must be >= 2, got {n_steps}")
    return NoiseSchedule.from_times(np.linspace(1.0, 0.0, n_steps + 1), kind)


def ddim_step(
    x_t: np.ndarray,
    eps: np.ndarray,
    alpha_t: float,
    beta_t: float,
    alpha_prev: float,
    beta_prev: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One deterministic denoising update.

    Returns ``(x_t0, x_prev)`` where ``x_t0 = (x_t - beta_t * eps) / alpha_t``
    is the clean estimate and ``x_prev = alpha_prev * x_t0 + beta_prev * eps``
    re-noises it at the next level.
    """
    if not alpha_t > 0:
        raise ValidationError(
            "alpha_t must be positive; schedules floor the first step to avoid the singularity"
        )
    x_t0 = (x_t - DTYPE(beta_t) * eps) / DTYPE(alpha_t)
    x_prev = DTYPE(alpha_prev) * x_t0 + DTYPE(beta_prev) * eps
    return x_t0, x_prev


def cfg_mix(eps_uncond: np.ndarray, eps_cond: np.ndarray, scale: float) -> np.ndarray:
    """Classifier-free guidance: ``(1 - s) * eps_uncond + s * eps_cond``."""
    if eps_uncond.shape != eps_cond.shape:
        raise ValidationError(
            f"shape mismatch: {eps_uncond.shape} vs {eps_cond.shape}"
        )
    s = DTYPE(scale)
    return (DTYPE(1.0) - s) * eps_uncond + s * eps_cond


@dataclass(frozen=True)
class GuidanceConfig:
    """Everything the guided loop needs besides the measurements and denoiser."""

    cfg_scale: float = 1.5
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    schedule: NoiseSchedule = field(default_factory=lambda: make_schedule(50))
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.cfg_scale):
            raise ValidationError(f"cfg_scale must be finite, got {self.cfg_scale}")


def _resolve_shape(y: TiltSeries, denoiser, depth: int | None) -> tuple[int, int, int]:
    h, w = y.det_height, y.det_width
    declared = getattr(denoiser, "shape", None)
    if declared is not None:
        if declared[1:] != (h, w):
            raise ValidationError(
                f"denoiser shape {declared} does not match detector {h}x{w}"
            )
        if depth is not None and depth != declared[0]:
            raise ValidationError(
                f"requested depth {depth} conflicts with denoiser depth {declared[0]}"
            )
        return tuple(declared)
    if depth is None:
        raise ValidationError(
            "reconstruction depth is not implied by the tilt series; pass depth= "
            "or use a denoiser that declares its shape"
        )
    return (int(depth), h, w)


def _resolve_uncertainty(u, y: TiltSeries, shape) -> np.ndarray:
    if u is None:
        return compute_uncertainty(y, shape[0]).data
    if isinstance(u, UncertaintyMap):
        umap = u.data
    elif np.isscalar(u):
        return UncertaintyMap.constant(float(u), shape).data
    else:
        umap = UncertaintyMap(np.asarray(u, dtype=DTYPE)).data
    if umap.shape != shape:
        raise ValidationError(f"uncertainty shape {umap.shape} != volume shape {shape}")
    return umap


def _sample(
    y: TiltSeries,
    denoiser,
    cfg: GuidanceConfig,
    depth: int | None,
    u,
    mode: str,
    on_step: ProgressHook | None,
) -> Volume:
    shape = _resolve_shape(y, denoiser, depth)
    sched = cfg.schedule
    cond = fbp(y, shape[0], filter="ramp_hann").data
    umap = _resolve_uncertainty(u, y, shape) if mode == "fused" else None

    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(shape, dtype=DTYPE)
    started = time.monotonic()

    for k in range(sched.n_steps):
        t = float(sched.times[k])
        alpha_t, beta_t = float(sched.alphas[k]), float(sched.betas[k])
        alpha_p, beta_p = float(sched.alphas[k + 1]), float(sched.betas[k + 1])

        def _predict(condition):
            req = DenoiseRequest(
                x_t=x,
                condition=condition,
                t=t,
                theta_deg=y.spec.range_deg,
                dtheta_deg=y.spec.step_deg,
                alpha_t=alpha_t,
                beta_t=beta_t,
            )
            try:
                return np.asarray(denoiser.predict_noise(req), dtype=DTYPE)
            except Exception as exc:
                raise DenoiserError(str(exc), step=k) from exc

        eps_uncond = _predict(None)
        eps_cond = _predict(cond)
        eps = cfg_mix(eps_uncond, eps_cond, cfg.cfg_scale)

        x_t0, _ = ddim_step(x, eps, alpha_t, beta_t, alpha_p, beta_p)
        if not np.isfinite(x_t0).all():
            raise SamplingError(k)

        residuals: list[float] = []
        if mode == "plain":
            blend = x_t0
        else:
            projected = project(
                Volume(x_t0),
                y,
                cfg.projector,
                on_step=lambda _i, r: residuals.append(r),
            ).data
            if mode == "projected":
                blend = projected
            else:
                blend = umap * x_t0 + (DTYPE(1.0) - umap) * projected

        x = DTYPE(alpha_p) * blend + DTYPE(beta_p) * eps
        if not np.isfinite(x).all():
            raise SamplingError(k)
        if on_step is not None:
            res = residuals[-1] if residuals else residual_norm(Volume(x_t0), y)
            on_step(k, res, time.monotonic() - started)

    return Volume(x)


def guided_sample(
    y: TiltSeries,
    denoiser,
    cfg: GuidanceConfig,
    depth: int | None = None,
    u=None,
    on_step: ProgressHook | None = None,
) -> Volume:
    """Projector-guided, uncertainty-fused reconstruction from pure noise.

    ``u`` overrides the uncertainty map: None computes it from ``y`` (needs
    at least two tilts), a scalar forces a constant map (0 trusts the
    projector everywhere, 1 ignores it), and an array or
    :class:`UncertaintyMap` is used as given. Deterministic for a fixed
    seed, denoiser, and inputs. ``on_step(step, residual, elapsed_s)``
    reports progress after every update.
    """
    return _sample(y, denoiser, cfg, depth, u, "fused", on_step)


def sample_ddim_plain(
    y: TiltSeries,
    denoiser,
    cfg: GuidanceConfig,
    depth: int | None = None,
    on_step: ProgressHook | None = None,
) -> Volume:
    """The unprojected update: guidance mixing only, no data-consistency pull."""
    return _sample(y, denoiser, cfg, depth, None, "plain", on_step)


def sample_ddim_projected(
    y: TiltSeries,
    denoiser,
    cfg: GuidanceConfig,
    depth: int | None = None,
    on_step: ProgressHook | None = None,
) -> Volume:
    """The fully projected update: every clean estimate is replaced by its projection."""
    return _sample(y, denoiser, cfg, depth, None, "projected", on_step)
