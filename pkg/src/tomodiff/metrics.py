"""Reconstruction quality: quartile alignment, RMSE, PSNR, volumetric SSIM.

Limited-angle reconstructions often differ from the reference by a global
grayscale shift, so a linear map taking the reconstruction's first and
third quartiles onto the reference's is applied before the metrics when
alignment is enabled. Quartiles use the sorted-with-linear-interpolation
convention (positions 0.25*(n-1) and 0.75*(n-1)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Volume
from .errors import ValidationError

# 3D SSIM window: 7 taps per axis, Gaussian weighted.
_SSIM_RADIUS = 3
_SSIM_SIGMA = 1.5
_C1_FRAC = 0.01
_C2_FRAC = 0.03


@dataclass(frozen=True)
class MetricReport:
    """RMSE, PSNR (math.inf for exact matches), SSIM, and the alignment flag."""

    rmse: float
    psnr: float
    ssim: float
    aligned: bool

    def to_text(self) -> str:
        return (
            f"rmse={self.rmse!r}\n"
            f"psnr={'inf' if math.isinf(self.psnr) else repr(self.psnr)}\n"
            f"ssim={self.ssim!r}\n"
            f"aligned={'true' if self.aligned else 'false'}\n"
        )

    def to_record(self) -> dict:
        return {
            "rmse": self.rmse,
            "psnr": None if math.isinf(self.psnr) else self.psnr,
            "psnr_inf": math.isinf(self.psnr),
            "ssim": self.ssim,
            "aligned": self.aligned,
        }


def quartiles(data: np.ndarray) -> tuple[float, float]:
    q1, q3 = np.quantile(data.astype(np.float64), [0.25, 0.75])
    return float(q1), float(q3)


def quartile_map(recon: Volume, reference: Volume) -> tuple[float, float]:
    """Coefficients (a, b) so that a * recon + b matches the reference quartiles."""
    rq1, rq3 = quartiles(recon.data)
    fq1, fq3 = quartiles(reference.data)
    if rq3 <= rq1:
        raise ValidationError(
            "reconstruction histogram is degenerate (Q3 <= Q1); cannot align"
        )
    a = (fq3 - fq1) / (rq3 - rq1)
    b = fq1 - a * rq1
    return a, b


def align_quartiles(recon: Volume, reference: Volume) -> Volume:
    """Affine-map ``recon`` so its Q1/Q3 land on the reference's."""
    a, b = quartile_map(recon, reference)
    return Volume((a * recon.data.astype(np.float64) + b).astype(np.float32))


def _local_mean(data: np.ndarray) -> np.ndarray:
    x = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / _SSIM_SIGMA) ** 2)
    kernel /= kernel.sum()
    out = data
    for axis in range(data.ndim):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="reflect")
    return out


def ssim3d(x: np.ndarray, y: np.ndarray, peak: float) -> float:
    """Mean structural similarity over Gaussian-weighted 7x7x7 windows."""
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    c1 = (_C1_FRAC * peak) ** 2
    c2 = (_C2_FRAC * peak) ** 2
    mx = _local_mean(x)
    my = _local_mean(y)
    vx = _local_mean(x * x) - mx * mx
    vy = _local_mean(y * y) - my * my
    cov = _local_mean(x * y) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def evaluate(recon: Volume, reference: Volume, align: bool = True) -> MetricReport:
    """Compute the metric triple, optionally after quartile alignment.

    The PSNR peak is the reference's dynamic range, which alignment leaves
    untouched. A constant reference has no range and is rejected.
    """
    if recon.shape != reference.shape:
        raise ValidationError(f"shape mismatch: {recon.shape} vs {reference.shape}")
    ref = reference.data.astype(np.float64)
    peak = float(ref.max() - ref.min())
    if peak <= 0:
        raise ValidationError("reference volume is constant; metrics are undefined")
    if align:
        recon = align_quartiles(recon, reference)
    rec = recon.data.astype(np.float64)
    diff = rec - ref
    rmse = float(np.sqrt(np.mean(diff * diff)))
    psnr = math.inf if rmse == 0.0 else 20.0 * math.log10(peak / rmse)
    return MetricReport(
        rmse=rmse, psnr=psnr, ssim=ssim3d(rec, ref, peak), aligned=align
    )
