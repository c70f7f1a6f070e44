"""Per-voxel uncertainty from cross-tilt disagreement.

For every tilt, each voxel reads back the measured value along its own ray
(back-projection of values: the adjoint smear divided by the voxel's
geometric footprint). Each read-back volume is min-max normalized to
[0, 1], and the population variance of the per-tilt values at every voxel
is divided by ``(T + 1) / (4 T)``. Voxels on which all tilts agree get
weight 0; voxels whose tilts disagree approach 1. The map is computed once
per reconstruction, before sampling starts, and reused at every diffusion
step.
"""

from __future__ import annotations

import numpy as np

from .core import DTYPE, AngleSpec, TiltSeries, UncertaintyMap
from .errors import ValidationError
from .radon import plane_matrix


def variance_ceiling(n_tilts: int) -> float:
    """The normalizer ``(T + 1) / (4 T)`` for values confined to [0, 1]."""
    return (n_tilts + 1) / (4.0 * n_tilts)


def per_tilt_backprojections(y: TiltSeries, depth: int) -> np.ndarray:
    """Stack of per-tilt value back-projections, each min-max normalized to [0, 1].

    Shape (T, depth, H, W). Dividing the adjoint by its all-ones response
    turns scatter mass into read-back values, so a constant frame reads back
    as exactly that constant. A tilt that reads back constant normalizes to
    all zeros.
    """
    t, h, w = y.frames.shape
    stack = np.empty((t, depth, h, w), dtype=DTYPE)
    for i, angle in enumerate(y.spec.angles()):
        single = AngleSpec(range_deg=0.0, step_deg=y.spec.step_deg, center_deg=float(angle))
        mat = plane_matrix(single, depth, w)
        footprint = np.asarray(mat.sum(axis=0)).ravel()  # per-voxel scatter mass
        sino = y.frames[i].astype(np.float64).T.reshape(w, h)
        values = mat.T @ sino
        covered = footprint > 1e-9
        values[covered] = values[covered] / footprint[covered, None]
        # Voxels outside this tilt's beam carry no reading; fill neutrally so
        # they contribute no spurious cross-tilt variance.
        values[~covered] = values[covered].mean() if covered.any() else 0.0
        b = values.reshape(depth, w, h).transpose(0, 2, 1)
        lo, hi = b.min(), b.max()
        # Relative floor keeps float round-off in a constant read-back from
        # being stretched to full scale.
        if hi - lo > 1e-7 * max(abs(hi), abs(lo), 1e-30):
            b = (b - lo) / (hi - lo)
        else:
            b = np.zeros_like(b)
        stack[i] = b.astype(DTYPE)
    return stack


def uncertainty_from_stack(stack: np.ndarray) -> UncertaintyMap:
    """Normalized population variance over the tilt axis of ``stack``.

    ``stack`` has shape (T, ...) with values in [0, 1]; T >= 2. The result
    is clamped to [0, 1] to absorb round-off above the ceiling.
    """
    t = stack.shape[0]
    if t < 2:
        raise ValidationError(f"uncertainty needs at least 2 tilts, got {t}")
    var = np.var(stack.astype(np.float64), axis=0)
    u = np.clip(var / variance_ceiling(t), 0.0, 1.0)
    return UncertaintyMap(u.astype(DTYPE))


def compute_uncertainty(y: TiltSeries, depth: int) -> UncertaintyMap:
    """Uncertainty weights for a reconstruction of the given depth from ``y``.

    Tilts whose read-back is constant have no contrast to normalize and
    carry no disagreement evidence, so they are left out of the variance;
    with fewer than two informative tilts every voxel gets weight 0.
    """
    if y.n_tilts < 2:
        raise ValidationError(
            f"uncertainty is undefined for {y.n_tilts} tilt(s); need at least 2"
        )
    stack = per_tilt_backprojections(y, depth)
    informative = stack.reshape(y.n_tilts, -1).max(axis=1) > 0
    if int(informative.sum()) < 2:
        return UncertaintyMap(np.zeros(stack.shape[1:], dtype=DTYPE))
    return uncertainty_from_stack(stack[informative])
