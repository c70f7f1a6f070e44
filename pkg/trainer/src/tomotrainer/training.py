"""Training loop: noise prediction with conditional dropout on simulator datasets.

Each sample pairs a ground-truth volume with its simulated tilt series.
The conditioning volume is the filtered back-projection of the tilts,
obtained by invoking the reconstruction CLI (the trainer talks to the
toolkit only through its public surfaces) and cached beside the manifest.
Per step: draw a time, noise the volume to that level, drop the condition
with probability ``uncond_prob``, and regress the injected noise.
"""

from __future__ import annotations

import math
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .files import load_volume, read_manifest
from .model import ConditionalDenoiser

DEFAULT_CLI = (sys.executable, "-m", "tomodiff")


@dataclass
class TrainConfig:
    manifest: Path
    checkpoint: Path
    epochs: int = 1
    batch_size: int = 1
    lr: float = 1e-2
    uncond_prob: float = 0.2
    schedule: str = "cosine"
    seed: int = 0
    base_channels: int = 32
    cli: tuple[str, ...] = DEFAULT_CLI

    def __post_init__(self):
        if not 0.0 <= self.uncond_prob <= 1.0:
            raise ValueError(f"uncond_prob must lie in [0, 1], got {self.uncond_prob}")
        self.manifest = Path(self.manifest)
        self.checkpoint = Path(self.checkpoint)


@dataclass
class TrainResult:
    checkpoint: Path
    losses: list[float]
    eval_before: float
    eval_after: float
    n_uncond: int
    n_total: int


def alpha_beta(kind: str, t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if kind == "cosine":
        alpha = torch.cos(0.5 * math.pi * t)
    elif kind == "linear":
        alpha = torch.sqrt(1.0 - t)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return alpha, torch.sqrt(torch.clamp(1.0 - alpha * alpha, min=0.0))


def compute_conditioning(manifest: Path, cli: tuple[str, ...]) -> list[dict]:
    """Resolve every manifest record to (x0, cond, theta, dtheta) arrays.

    The FBP conditioning volume is produced by the toolkit CLI with the
    same filter the guided sampler uses, cached as
    ``fbp_cache/<tilts>.fbp.tdvol`` next to the manifest; the CLI output is
    deterministic, so the cache never goes stale for a fixed dataset.
    """
    manifest = Path(manifest)
    base = manifest.parent
    cache = base / "fbp_cache"
    cache.mkdir(exist_ok=True)
    samples = []
    for rec in read_manifest(manifest):
        x0 = load_volume(base / rec["volume"])
        cond_path = cache / (Path(rec["tilts"]).stem + ".fbp.tdvol")
        if not cond_path.exists():
            cmd = [
                *cli,
                "reconstruct",
                "-i", str(base / rec["tilts"]),
                "--method", "fbp",
                "--filter", "ramp_hann",
                "--depth", str(x0.shape[0]),
                "-o", str(cond_path),
            ]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise RuntimeError(f"conditioning FBP failed: {proc.stderr.strip()}")
        cond = load_volume(cond_path)
        if cond.shape != x0.shape:
            raise ValueError(f"conditioning shape {cond.shape} != volume {x0.shape}")
        samples.append(
            {
                "x0": x0,
                "cond": cond,
                "theta": float(rec["range_deg"]),
                "dtheta": float(rec["step_deg"]),
            }
        )
    return samples


def _eval_loss(net, x0, cond, theta, dtheta, kind: str, seed: int) -> float:
    """Deterministic held-noise MSE over the whole dataset."""
    gen = torch.Generator().manual_seed(seed)
    t = 0.02 + 0.98 * torch.rand(x0.shape[0], generator=gen)
    eps = torch.randn(x0.shape, generator=gen)
    alpha, beta = alpha_beta(kind, t)
    x_t = alpha[:, None, None, None] * x0 + beta[:, None, None, None] * eps
    net.eval()
    with torch.no_grad():
        pred = net(x_t, cond, t, theta, dtheta)
        return float(nn.functional.mse_loss(pred, eps))


def train(cfg: TrainConfig) -> TrainResult:
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)

    samples = compute_conditioning(cfg.manifest, cfg.cli)
    if not samples:
        raise ValueError(f"manifest {cfg.manifest} lists no samples")
    depth, h, w = samples[0]["x0"].shape
    for s in samples:
        if s["x0"].shape != (depth, h, w):
            raise ValueError("all samples must share one volume shape")

    x0 = torch.from_numpy(np.stack([s["x0"] for s in samples]))
    cond = torch.from_numpy(np.stack([s["cond"] for s in samples]))
    theta = torch.tensor([s["theta"] for s in samples], dtype=torch.float32)
    dtheta = torch.tensor([s["dtheta"] for s in samples], dtype=torch.float32)

    net = ConditionalDenoiser(depth, cfg.base_channels)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed + 1)

    eval_before = _eval_loss(net, x0, cond, theta, dtheta, cfg.schedule, cfg.seed + 2)

    losses: list[float] = []
    n_uncond = 0
    n_total = 0
    n = x0.shape[0]
    for _epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, cb = x0[idx], cond[idx]
            tb = 0.02 + 0.98 * torch.rand(len(idx), generator=gen)
            eps = torch.randn(xb.shape, generator=gen)
            alpha, beta = alpha_beta(cfg.schedule, tb)
            x_t = alpha[:, None, None, None] * xb + beta[:, None, None, None] * eps
            drop = torch.rand(len(idx), generator=gen) < cfg.uncond_prob
            cb = torch.where(drop[:, None, None, None], torch.zeros_like(cb), cb)
            n_uncond += int(drop.sum())
            n_total += len(idx)

            net.train()
            pred = net(x_t, cb, tb, theta[idx], dtheta[idx])
            loss = nn.functional.mse_loss(pred, eps)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))

    eval_after = _eval_loss(net, x0, cond, theta, dtheta, cfg.schedule, cfg.seed + 2)

    cfg.checkpoint.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "state_dict": net.state_dict(),
            "dims": (depth, h, w),
            "base_channels": cfg.base_channels,
            "schedule": cfg.schedule,
            "losses": losses,
            "eval_before": eval_before,
            "eval_after": eval_after,
        },
        cfg.checkpoint,
    )
    return TrainResult(cfg.checkpoint, losses, eval_before, eval_after, n_uncond, n_total)
