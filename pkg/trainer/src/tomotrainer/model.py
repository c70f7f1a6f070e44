"""Toy conditional noise predictor: depth slices as channels of a 2D net.

A deliberately small residual conv net with one attention block at the
bottleneck (enough to mix information across the whole field of view) and
sinusoidal embeddings of the diffusion time and acquisition geometry
injected there through a 2-layer MLP. It makes no claim of architectural
fidelity to any production model; it exists so the serving path has real
learned weights behind it.
"""

from __future__ import annotations

import math

import torch
from torch import nn

N_FREQS = 8


class ScalarEmbedding(nn.Module):
    """Sinusoidal features of (t, theta_deg, dtheta_deg) -> embedding vector."""

    def __init__(self, dim: int):
        super().__init__()
        freqs = torch.exp(torch.linspace(0.0, math.log(100.0), N_FREQS))
        self.register_buffer("freqs", freqs)
        in_dim = 3 * 2 * N_FREQS
        self.mlp = nn.Sequential(nn.Linear(in_dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor, theta: torch.Tensor, dtheta: torch.Tensor) -> torch.Tensor:
        # angles arrive in degrees; squash to comparable magnitudes
        scalars = torch.stack([t, theta / 90.0, dtheta / 10.0], dim=1)  # (B, 3)
        phases = scalars[:, :, None] * self.freqs[None, None, :]
        feats = torch.cat([torch.sin(phases), torch.cos(phases)], dim=2)
        return self.mlp(feats.flatten(1))


class ResBlock(nn.Module):
    def __init__(self, channels: int, emb_dim: int | None = None):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(8, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.SiLU()
        self.emb_proj = nn.Linear(emb_dim, channels) if emb_dim else None

    def forward(self, x: torch.Tensor, emb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        if self.emb_proj is not None and emb is not None:
            h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return x + h


class BottleneckAttention(nn.Module):
    """Single self-attention block over the downsampled spatial grid."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(8, channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)  # (B, HW, C)
        mixed, _ = self.attn(tokens, tokens, tokens, need_weights=False)
        return x + mixed.transpose(1, 2).reshape(b, c, h, w)


class ConditionalDenoiser(nn.Module):
    """eps-prediction net over (x_t | condition) slice stacks.

    Input volumes have shape (B, depth, H, W) with H and W even; the two
    stacks are concatenated along the channel axis. The unconditional
    branch is an all-zero condition, matching how it is trained.
    """

    def __init__(self, depth: int, base_channels: int = 32):
        super().__init__()
        self.depth = depth
        self.base_channels = base_channels
        c, c2 = base_channels, 2 * base_channels
        self.embed = ScalarEmbedding(c2)
        self.stem = nn.Conv2d(2 * depth, c, 3, padding=1)
        self.enc = ResBlock(c)
        self.down = nn.Conv2d(c, c2, 3, stride=2, padding=1)
        self.mid1 = ResBlock(c2, emb_dim=c2)
        self.attn = BottleneckAttention(c2)
        self.mid2 = ResBlock(c2, emb_dim=c2)
        self.up = nn.ConvTranspose2d(c2, c, 2, stride=2)
        self.dec = ResBlock(c)
        self.head = nn.Sequential(nn.GroupNorm(8, c), nn.SiLU(), nn.Conv2d(c, depth, 3, padding=1))

    def forward(
        self,
        x_t: torch.Tensor,
        condition: torch.Tensor,
        t: torch.Tensor,
        theta_deg: torch.Tensor,
        dtheta_deg: torch.Tensor,
    ) -> torch.Tensor:
        if x_t.shape[-1] % 2 or x_t.shape[-2] % 2:
            raise ValueError(f"spatial dims must be even, got {tuple(x_t.shape[-2:])}")
        emb = self.embed(t, theta_deg, dtheta_deg)
        h = self.stem(torch.cat([x_t, condition], dim=1))
        skip = self.enc(h)
        h = self.down(skip)
        h = self.mid1(h, emb)
        h = self.attn(h)
        h = self.mid2(h, emb)
        h = self.up(h) + skip
        return self.head(self.dec(h))
