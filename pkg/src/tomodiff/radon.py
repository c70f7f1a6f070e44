"""Matrix-free parallel-beam projector, its exact adjoint, and filtered back-projection.

Geometry: single-axis tilting about the height axis (volume axis 1). Rays
stay inside one depth-by-width plane per height row, so the 3D transform
decomposes into H independent 2D problems sharing one system matrix. A
tilt of 0 degrees integrates straight down the depth axis; the detector
then equals the (height, width) face of the volume.

Rays are sampled with unit step and bilinear interpolation in the plane,
zero outside the volume. The per-plane operator is assembled once as a
sparse matrix (64-bit weights) and cached, which makes the adjoint the
literal matrix transpose: scatter of exactly the forward weights. Detector
pixel spacing equals voxel spacing equals 1.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy import sparse

from .core import DTYPE, AngleSpec, TiltSeries, Volume
from .errors import ValidationError

FILTERS = ("ramp", "ramp_hann", "none")

# Guard against absurd allocation requests before building system matrices.
_MAX_PLANE_VOXELS = 1 << 26


def _angles_key(spec: AngleSpec) -> tuple[float, ...]:
    return tuple(float(a) for a in spec.angles())


@functools.lru_cache(maxsize=16)
def _plane_system(depth: int, width: int, angles_deg: tuple[float, ...]) -> sparse.csr_matrix:
    """Sparse (n_angles * width) x (depth * width) matrix of one 2D plane problem.

    Row ``a * width + u`` holds the bilinear sampling weights of the ray at
    tilt ``angles_deg[a]`` hitting detector pixel ``u``.
    """
    if depth < 1 or width < 1:
        raise ValidationError(f"plane dimensions must be positive, got {depth}x{width}")
    if depth * width > _MAX_PLANE_VOXELS:
        raise ValidationError(f"plane {depth}x{width} exceeds the supported size")

    cz = (depth - 1) / 2.0
    cx = (width - 1) / 2.0
    cu = (width - 1) / 2.0
    half_diag = math.hypot(depth, width) / 2.0
    n_half = int(math.ceil(half_diag)) + 1
    s = np.arange(-n_half, n_half + 1, dtype=np.float64)  # unit steps along the ray
    u = np.arange(width, dtype=np.float64) - cu           # detector offsets

    rows_all, cols_all, vals_all = [], [], []
    for a, ang in enumerate(angles_deg):
        phi = math.radians(ang)
        dirz, dirx = math.cos(phi), math.sin(phi)
        # Detector axis is the ray direction rotated by 90 degrees.
        pz = cz + u[:, None] * (-dirx) + s[None, :] * dirz
        px = cx + u[:, None] * dirz + s[None, :] * dirx

        z0 = np.floor(pz)
        x0 = np.floor(px)
        fz = pz - z0
        fx = px - x0
        z0 = z0.astype(np.int64)
        x0 = x0.astype(np.int64)

        row = np.broadcast_to((a * width + np.arange(width))[:, None], pz.shape)
        for dz, dx, w in (
            (0, 0, (1 - fz) * (1 - fx)),
            (0, 1, (1 - fz) * fx),
            (1, 0, fz * (1 - fx)),
            (1, 1, fz * fx),
        ):
            zi = z0 + dz
            xi = x0 + dx
            ok = (zi >= 0) & (zi < depth) & (xi >= 0) & (xi < width) & (w > 0)
            rows_all.append(row[ok])
            cols_all.append((zi[ok] * width + xi[ok]))
            vals_all.append(w[ok])

    mat = sparse.coo_matrix(
        (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(len(angles_deg) * width, depth * width),
        dtype=np.float64,
    )
    return mat.tocsr()


def plane_matrix(spec: AngleSpec, depth: int, width: int) -> sparse.csr_matrix:
    """The cached per-plane system matrix for a given geometry (read-only use)."""
    return _plane_system(depth, width, _angles_key(spec))


def forward_project(volume: Volume, spec: AngleSpec) -> TiltSeries:
    """Line-integral projection of ``volume`` at every angle of ``spec``.

    Returns a tilt series with frames of shape (height, width); linear in
    the volume and deterministic.
    """
    d, h, w = volume.shape
    mat = _plane_system(d, w, _angles_key(spec))
    planes = volume.data.transpose(0, 2, 1).reshape(d * w, h)  # (voxel, row)
    sino = mat @ planes                                        # (angle*det, row) float64
    t = spec.n_tilts
    frames = sino.reshape(t, w, h).transpose(0, 2, 1)
    return TiltSeries(spec, frames.astype(DTYPE))


def back_project(tilts: TiltSeries, depth: int) -> Volume:
    """Exact adjoint of :func:`forward_project` for a given reconstruction depth.

    Satisfies ``<A x, y> == <x, A^T y>`` up to float32 storage rounding.
    The depth is not recoverable from the tilt series and must be supplied.
    """
    if depth < 1:
        raise ValidationError(f"depth must be positive, got {depth}")
    t, h, w = tilts.frames.shape
    mat = _plane_system(depth, w, _angles_key(tilts.spec))
    sino = tilts.frames.transpose(0, 2, 1).reshape(t * w, h)
    planes = mat.T @ sino
    vol = planes.reshape(depth, w, h).transpose(0, 2, 1)
    return Volume(vol.astype(DTYPE))


def _ramp_filter(n_fft: int, kind: str) -> np.ndarray:
    freqs = np.fft.rfftfreq(n_fft)
    filt = 2.0 * np.abs(freqs)
    if kind == "ramp_hann":
        filt *= 0.5 * (1.0 + np.cos(2.0 * np.pi * freqs))
    return filt


def fbp(tilts: TiltSeries, depth: int, filter: str = "ramp") -> Volume:
    """Filtered back-projection: the analytic inverse-Radon estimate.

    Each frame is filtered row-by-row along the width axis in the frequency
    domain (zero-padded to the next power of two >= 2 * width to suppress
    circular wrap-around), back-projected, and scaled by pi / (2 T).
    ``filter`` is one of "ramp", "ramp_hann", or "none" (no filtering,
    back-projection and scaling only).
    """
    if filter not in FILTERS:
        raise ValidationError(f"unknown filter {filter!r}, expected one of {FILTERS}")
    t, h, w = tilts.frames.shape
    if filter != "none":
        if w < 2:
            raise ValidationError("filtering requires frames at least 2 pixels wide")
        n_fft = 1 << max(1, int(math.ceil(math.log2(2 * w))))
        filt = _ramp_filter(n_fft, filter)
        spectrum = np.fft.rfft(tilts.frames.astype(np.float64), n=n_fft, axis=2)
        filtered = np.fft.irfft(spectrum * filt, n=n_fft, axis=2)[:, :, :w]
        tilts = TiltSeries(tilts.spec, filtered.astype(DTYPE))
    vol = back_project(tilts, depth)
    scale = math.pi / (2.0 * t)
    return Volume(vol.data * DTYPE(scale))
