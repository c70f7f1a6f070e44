"""Synthetic data: contrast mapping, acquisition sampling, phantoms, datasets.

The contrast model maps a nonnegative density volume to dark-field-style
projections: the density is raised elementwise to an exponent, projected,
and attenuated through ``k * (1 - exp(-c * r))``. The three composite
parameters absorb the underlying beam/material constants; they are fitted
by histogram matching rather than measured individually.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import DTYPE, AngleSpec, TiltSeries, Volume
from .errors import ValidationError
from .io import save_tilts, save_volume
from .radon import forward_project

_QUANTUM_DEG = 0.5


@dataclass(frozen=True)
class ContrastParams:
    """Composite contrast model: attenuation ``c``, exponent ``gamma``, scale ``k``.

    Defaults are placeholders for quick experiments; fit them against real
    projection histograms before drawing quantitative conclusions.
    ``noise_sigma`` adds optional Gaussian detector noise after the mapping.
    """

    c: float = 0.02
    gamma: float = 0.8
    k: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        for name in ("c", "gamma", "k"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)
        ns = float(self.noise_sigma)
        if not (math.isfinite(ns) and ns >= 0):
            raise ValidationError(f"noise_sigma must be >= 0, got {ns}")
        object.__setattr__(self, "noise_sigma", ns)


def synthesize_haadf(
    volume: Volume,
    spec: AngleSpec,
    params: ContrastParams = ContrastParams(),
    seed: int | None = None,
) -> TiltSeries:
    """Project a density volume through the saturating contrast model.

    Noiseless output lies in ``[0, k)``; Gaussian noise with
    ``params.noise_sigma`` is added afterwards when nonzero (seeded).
    """
    if float(volume.data.min()) < 0:
        raise ValidationError("density volume must be nonnegative")
    powered = Volume(np.power(volume.data.astype(np.float64), params.gamma).astype(DTYPE))
    line = forward_project(powered, spec).frames.astype(np.float64)
    frames = params.k * (1.0 - np.exp(-params.c * line))
    if params.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        frames = frames + rng.normal(0.0, params.noise_sigma, size=frames.shape)
    return TiltSeries(spec, frames.astype(DTYPE))


class AcquisitionSampler:
    """Draws (range, step) pairs uniformly from intervals, quantized to 0.5 deg.

    Stateful: repeated calls advance one seeded generator, so a fixed seed
    reproduces the whole sequence. The range is drawn before the step.
    """

    def __init__(
        self,
        range_interval: tuple[float, float] = (6.0, 14.0),
        step_interval: tuple[float, float] = (1.0, 3.0),
        seed: int = 0,
    ):
        for name, (lo, hi) in (("range", range_interval), ("step", step_interval)):
            if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo <= hi):
                raise ValidationError(f"invalid {name} interval [{lo}, {hi}]")
        self.range_interval = (float(range_interval[0]), float(range_interval[1]))
        self.step_interval = (float(step_interval[0]), float(step_interval[1]))
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)

    def sample(self) -> AngleSpec:
        rng_deg = _quantize(self._rng.uniform(*self.range_interval))
        step_deg = max(_quantize(self._rng.uniform(*self.step_interval)), _QUANTUM_DEG)
        return AngleSpec(range_deg=rng_deg, step_deg=step_deg)


def _quantize(v: float) -> float:
    return round(v / _QUANTUM_DEG) * _QUANTUM_DEG


def sample_acquisition(sampler: AcquisitionSampler) -> AngleSpec:
    """Draw the next acquisition geometry from ``sampler``."""
    return sampler.sample()


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for organelle-like test volumes: shells plus bright blobs.

    Shells are axis-aligned ellipsoids with a bright membrane of relative
    thickness ``membrane_frac`` and a dimmer interior; blobs are small solid
    ellipsoids. ``background_level``/``background_texture`` add a smooth
    cytoplasm-like random field beneath the objects (both default to 0, so
    an empty spec yields an all-zero volume). Count ranges are inclusive.
    All generated values lie in [0, 1]; ``dims`` is (depth, height, width).
    """

    dims: tuple[int, int, int]
    n_shells: tuple[int, int] = (1, 2)
    shell_axis_frac: tuple[float, float] = (0.45, 0.8)
    membrane_frac: float = 0.18
    n_blobs: tuple[int, int] = (2, 6)
    blob_radius_frac: tuple[float, float] = (0.05, 0.12)
    membrane_level: tuple[float, float] = (0.75, 1.0)
    interior_level: tuple[float, float] = (0.25, 0.45)
    blob_level: tuple[float, float] = (0.55, 0.9)
    background_level: float = 0.0
    background_texture: float = 0.0
    smooth_sigma: float = 0.6
    seed: int = 0

    def __post_init__(self):
        d, h, w = self.dims
        if min(d, h, w) < 1:
            raise ValidationError(f"dims must be positive, got {self.dims}")
        if not 0 < self.membrane_frac < 1:
            raise ValidationError(f"membrane_frac must lie in (0, 1), got {self.membrane_frac}")
        for name in ("n_shells", "n_blobs"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValidationError(f"invalid {name} range ({lo}, {hi})")


def generate_phantom(spec: PhantomSpec) -> Volume:
    """Reproducible random phantom per ``spec``; same seed, same voxels."""
    rng = np.random.default_rng(spec.seed)
    d, h, w = spec.dims
    half = np.array([(d - 1) / 2.0, (h - 1) / 2.0, (w - 1) / 2.0])
    coords = np.meshgrid(
        np.arange(d, dtype=np.float64),
        np.arange(h, dtype=np.float64),
        np.arange(w, dtype=np.float64),
        indexing="ij",
        sparse=True,
    )
    vol = np.zeros(spec.dims, dtype=np.float64)
    if spec.background_level > 0 or spec.background_texture > 0:
        field = rng.standard_normal(spec.dims)
        field = ndimage.gaussian_filter(field, sigma=3.0)
        scale = float(np.abs(field).max())
        if scale > 0:
            field /= scale
        vol += np.clip(spec.background_level + spec.background_texture * field, 0.0, 1.0)

    def norm2(center, axes):
        acc = 0.0
        for c, ctr, ax in zip(coords, center, axes):
            acc = acc + ((c - ctr) / max(ax, 1e-6)) ** 2
        return acc

    n_shells = int(rng.integers(spec.n_shells[0], spec.n_shells[1] + 1))
    for _ in range(n_shells):
        center = np.array(
            [rng.uniform(0.35, 0.65) * (dim - 1) for dim in spec.dims]
        )
        axes = np.array(
            [rng.uniform(*spec.shell_axis_frac) * hx for hx in half]
        )
        membrane = float(rng.uniform(*spec.membrane_level))
        interior = float(rng.uniform(*spec.interior_level))
        outer = norm2(center, axes)
        inner = norm2(center, axes * (1.0 - spec.membrane_frac))
        vol = np.maximum(vol, np.where(inner <= 1.0, interior, 0.0))
        vol = np.maximum(vol, np.where((outer <= 1.0) & (inner > 1.0), membrane, 0.0))

    n_blobs = int(rng.integers(spec.n_blobs[0], spec.n_blobs[1] + 1))
    for _ in range(n_blobs):
        center = np.array([rng.uniform(0.15, 0.85) * (dim - 1) for dim in spec.dims])
        radius = rng.uniform(*spec.blob_radius_frac) * float(min(half) * 2 + 1)
        level = float(rng.uniform(*spec.blob_level))
        r2 = norm2(center, np.full(3, max(radius, 0.75)))
        vol = np.maximum(vol, np.where(r2 <= 1.0, level, 0.0))

    if spec.smooth_sigma > 0:
        vol = ndimage.gaussian_filter(vol, spec.smooth_sigma)
    return Volume(np.clip(vol, 0.0, 1.0).astype(DTYPE))


def ellipsoid_phantom(
    dims: tuple[int, int, int],
    axes_frac: tuple[float, float, float] = (0.7, 0.7, 0.7),
    value: float = 1.0,
    edge_sigma: float = 1.0,
) -> Volume:
    """Deterministic centered ellipsoid with softened edges, values in [0, value]."""
    d, h, w = dims
    zz, yy, xx = np.meshgrid(
        np.arange(d, dtype=np.float64),
        np.arange(h, dtype=np.float64),
        np.arange(w, dtype=np.float64),
        indexing="ij",
        sparse=True,
    )
    az = axes_frac[0] * (d - 1) / 2.0 + 1e-9
    ay = axes_frac[1] * (h - 1) / 2.0 + 1e-9
    ax = axes_frac[2] * (w - 1) / 2.0 + 1e-9
    r2 = (
        ((zz - (d - 1) / 2.0) / az) ** 2
        + ((yy - (h - 1) / 2.0) / ay) ** 2
        + ((xx - (w - 1) / 2.0) / ax) ** 2
    )
    vol = np.where(r2 <= 1.0, float(value), 0.0)
    if edge_sigma > 0:
        vol = ndimage.gaussian_filter(vol, edge_sigma)
    return Volume(np.clip(vol, 0.0, float(value)).astype(DTYPE))


# --------------------------------------------------------------------------
# Histogram fitting


def tilt_histogram(tilts: TiltSeries, edges: np.ndarray) -> np.ndarray:
    """Fraction of all detector pixels falling in each bin (out-of-range pixels
    lose mass, which penalizes badly scaled candidates during fitting)."""
    counts, _ = np.histogram(tilts.frames, bins=edges)
    return counts / tilts.frames.size


def fit_contrast(
    real_hist: tuple[np.ndarray, np.ndarray],
    sim_vol: Volume,
    spec: AngleSpec,
    c_grid: np.ndarray | None = None,
    gamma_grid: np.ndarray | None = None,
    k_grid: np.ndarray | None = None,
) -> tuple[ContrastParams, float]:
    """Grid-search (c, gamma, k) so synthetic projections match a target histogram.

    ``real_hist`` is ``(bin_edges, probabilities)``. Returns the best
    parameters and the achieved L1 distance between the normalized
    histograms (0 = identical, 2 = disjoint).
    """
    edges, probs = np.asarray(real_hist[0], dtype=np.float64), np.asarray(
        real_hist[1], dtype=np.float64
    )
    if len(edges) != len(probs) + 1 or len(probs) < 1:
        raise ValidationError("histogram must be (edges, probs) with len(edges) == len(probs)+1")
    if probs.sum() <= 0:
        raise ValidationError("target histogram is empty")
    if float(sim_vol.data.max()) <= 0:
        raise ValidationError("simulation volume is all zeros; histograms are uninformative")

    if c_grid is None:
        c_grid = np.geomspace(0.005, 0.08, 6)
    if gamma_grid is None:
        gamma_grid = np.linspace(0.5, 1.2, 6)
    if k_grid is None:
        k_grid = np.linspace(0.5, 1.5, 5)

    best: tuple[float, ContrastParams] | None = None
    for gamma in gamma_grid:
        for c in c_grid:
            for k in k_grid:
                params = ContrastParams(c=float(c), gamma=float(gamma), k=float(k))
                synth = tilt_histogram(synthesize_haadf(sim_vol, spec, params), edges)
                dist = float(np.abs(synth - probs).sum())
                if best is None or dist < best[0]:
                    best = (dist, params)
    return best[1], best[0]


# --------------------------------------------------------------------------
# Dataset manifests


def write_manifest(path: Path | str, records: list[dict]) -> None:
    """Line-delimited JSON, one record per sample, keys sorted."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path: Path | str) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def make_dataset(
    out_dir: Path | str,
    n_samples: int,
    dims: tuple[int, int, int],
    sampler: AcquisitionSampler | None = None,
    params: ContrastParams = ContrastParams(),
    seed: int = 0,
    phantom: PhantomSpec | None = None,
) -> Path:
    """Generate phantom volumes plus simulated tilt series and index them.

    Writes ``vol_NNNN.tdvol`` / ``tilt_NNNN.tdtlt`` pairs and a
    ``manifest.jsonl`` whose records carry the acquisition angles, contrast
    parameters, and per-sample seed. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if sampler is None:
        sampler = AcquisitionSampler(seed=seed)
    records = []
    for i in range(n_samples):
        sample_seed = seed + i
        pspec = (
            PhantomSpec(dims=dims, seed=sample_seed)
            if phantom is None
            else replace(phantom, seed=sample_seed)
        )
        vol = generate_phantom(pspec)
        acq = sampler.sample()
        tilts = synthesize_haadf(vol, acq, params, seed=sample_seed)
        vol_name = f"vol_{i:04d}.tdvol"
        tilt_name = f"tilt_{i:04d}.tdtlt"
        save_volume(vol, out_dir / vol_name, meta={"seed": str(sample_seed)})
        save_tilts(tilts, out_dir / tilt_name, meta={"source_depth": str(dims[0])})
        records.append(
            {
                "id": i,
                "volume": vol_name,
                "tilts": tilt_name,
                "range_deg": acq.range_deg,
                "step_deg": acq.step_deg,
                "center_deg": acq.center_deg,
                "c": params.c,
                "gamma": params.gamma,
                "k": params.k,
                "noise_sigma": params.noise_sigma,
                "seed": sample_seed,
            }
        )
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest
