"""Data-consistency projector and SART-style iterative reconstruction.

The projector runs gradient descent on ``||y - A x||^2``; the descent
direction is ``dx = A^T (y - A x)`` and the update is ``x <- x + lam * dx``.
With ``lam <= 1 / ||A^T A||`` the data residual is non-increasing, which is
the contract the guided sampler relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DTYPE, AngleSpec, TiltSeries, Volume
from .errors import DivergenceError, ValidationError
from .radon import back_project, forward_project, plane_matrix

StepHook = Callable[[int, float], None]

# Relative slack when deciding whether the residual grew; float64 chains
# wobble at ~1e-16 around a converged plateau.
_GROWTH_SLACK = 1e-12


@dataclass(frozen=True)
class ProjectorConfig:
    """Gradient iterations per projector call and the step size.

    ``lam=None`` selects 1/L automatically, with L the power-iteration
    estimate of the operator norm of A^T A for the geometry at hand.
    """

    n_steps: int = 5
    lam: float | None = None

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValidationError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.lam is not None:
            lam = float(self.lam)
            if not math.isfinite(lam) or lam <= 0:
                raise ValidationError(f"lam must be positive and finite, got {lam}")
            object.__setattr__(self, "lam", lam)


def estimate_operator_norm(
    spec: AngleSpec, depth: int, width: int, n_iter: int = 20, tol: float = 1e-3
) -> float:
    """Power-iteration estimate of ``||A^T A||`` (largest eigenvalue).

    The full operator is a height-fold block repetition of the plane system,
    so the spectrum equals that of the plane operator. Deterministic: starts
    from a constant vector, which has nonzero overlap with the leading
    eigenvector because the matrix entries are nonnegative.
    """
    mat = plane_matrix(spec, depth, width)
    v = np.full(mat.shape[1], 1.0 / math.sqrt(mat.shape[1]))
    lam_prev = 0.0
    for _ in range(n_iter):
        w = mat.T @ (mat @ v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - lam_prev) <= tol * norm:
            lam_prev = norm
            break
        lam_prev = norm
    return lam_prev


def default_step_size(spec: AngleSpec, depth: int, width: int) -> float:
    """1/L: the largest step size with a guaranteed non-increasing residual."""
    norm = estimate_operator_norm(spec, depth, width)
    if norm <= 0.0:
        raise ValidationError("operator norm estimate is zero; cannot pick a step size")
    return 1.0 / norm


def consistency_gradient(x: Volume, y: TiltSeries) -> Volume:
    """``A^T (y - A x)``: the direction that reduces the data residual."""
    _check_shapes(x, y)
    resid = y.frames.astype(np.float64) - forward_project(x, y.spec).frames
    return back_project(TiltSeries(y.spec, resid.astype(DTYPE)), x.depth)


def residual_norm(x: Volume, y: TiltSeries) -> float:
    """``||y - A x||`` accumulated in float64."""
    _check_shapes(x, y)
    diff = y.frames.astype(np.float64) - forward_project(x, y.spec).frames
    return float(np.sqrt(np.sum(diff * diff)))


def project(
    x: Volume,
    y: TiltSeries,
    cfg: ProjectorConfig = ProjectorConfig(),
    on_step: StepHook | None = None,
) -> Volume:
    """Pull ``x`` toward consistency with the measured tilts ``y``.

    Runs ``cfg.n_steps`` updates ``x <- x + lam * A^T (y - A x)`` and returns
    the final iterate; the data residual never exceeds that of ``x`` for the
    default step size. Raises :class:`DivergenceError` if the residual grows
    for 3 consecutive steps (a sign that ``lam`` exceeds the stable range).
    ``on_step(k, residual)`` is invoked after every update when given.
    """
    _check_shapes(x, y)
    d, h, w = x.shape
    t = y.n_tilts
    lam = cfg.lam if cfg.lam is not None else default_step_size(y.spec, d, w)
    mat = plane_matrix(y.spec, d, w)

    cur = x.data.astype(np.float64).transpose(0, 2, 1).reshape(d * w, h)
    target = y.frames.astype(np.float64).transpose(0, 2, 1).reshape(t * w, h)
    resid = target - mat @ cur
    prev = float(np.sqrt(np.sum(resid * resid)))
    grows = 0
    for k in range(cfg.n_steps):
        cur = cur + lam * (mat.T @ resid)
        resid = target - mat @ cur
        res = float(np.sqrt(np.sum(resid * resid)))
        if res > prev * (1.0 + _GROWTH_SLACK):
            grows += 1
            if grows >= 3:
                raise DivergenceError(k)
        else:
            grows = 0
        prev = res
        if on_step is not None:
            on_step(k, res)
    out = cur.reshape(d, w, h).transpose(0, 2, 1)
    return Volume(out.astype(DTYPE))


def sart(
    y: TiltSeries,
    depth: int,
    iters: int,
    lam: float | None = None,
    x0: Volume | None = None,
    on_step: StepHook | None = None,
) -> Volume:
    """Gradient-descent reconstruction from scratch; the classic iterative baseline.

    Identical to :func:`project` starting from ``x0`` (zero volume by
    default) with ``n_steps=iters`` -- one code path, so the two cannot
    drift apart.
    """
    if iters < 1:
        raise ValidationError(f"iters must be >= 1, got {iters}")
    if x0 is None:
        t, h, w = y.frames.shape
        x0 = Volume.zeros((depth, h, w))
    elif x0.depth != depth:
        raise ValidationError(f"x0 depth {x0.depth} does not match requested depth {depth}")
    return project(x0, y, ProjectorConfig(n_steps=iters, lam=lam), on_step=on_step)


def _check_shapes(x: Volume, y: TiltSeries) -> None:
    t, h, w = y.frames.shape
    if (x.height, x.width) != (h, w):
        raise ValidationError(
            f"volume cross-section {x.height}x{x.width} does not match detector {h}x{w}"
        )
