"""Small CPU-friendly networks shared by the denoiser, SR module and trainer.

All parameters are initialized from an explicit torch.Generator so that a
given seed reproduces identical weights across runs and platforms.
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def seeded_init_(module: nn.Module, seed: int) -> nn.Module:
    """He-style normal init of every parameter, drawn from one seeded stream."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            if p.dim() >= 2:
                fan_in = p[0].numel()
                std = math.sqrt(2.0 / fan_in)
                p.copy_(torch.randn(p.shape, generator=gen) * std)
            else:
                p.zero_()
    return module


class IdentityEncoder(nn.Module):
    """Pass-through single-channel feature extractor, for tests and ablations."""

    channels = 1

    def forward(self, x):
        return x

    def layer_maps(self, x):
        return [x]


class FrozenEncoder(nn.Module):
    """Fixed convolutional feature extractor phi: (B,1,H,W) -> (B,d,H,W).

    Weights are seed-pinned and never trained; the same instance provides the
    feature space for the SR grid, the content loss, and the hyperplane
    latents.
    """

    def __init__(self, channels: int = 8, hidden: int = 16, seed: int = 1234):
        super().__init__()
        self.channels = channels
        self.seed = seed
        self.conv1 = nn.Conv2d(1, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.conv3 = nn.Conv2d(hidden, channels, 3, padding=1)
        seeded_init_(self, seed)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x):
        h1 = F.relu(self.conv1(x))
        h2 = F.relu(self.conv2(h1))
        return self.conv3(h2)

    def layer_maps(self, x):
        h1 = F.relu(self.conv1(x))
        h2 = F.relu(self.conv2(h1))
        return [h1, h2, self.conv3(h2)]


class StepEmbedding(nn.Module):
    """Sinusoidal step encoding followed by a two-layer MLP."""

    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, out_dim), nn.SiLU(), nn.Linear(out_dim, out_dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(1000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
        )
        ang = t.float()[:, None] * freqs[None, :]
        enc = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)
        return self.mlp(enc)


class ConditionalUNet(nn.Module):
    """Noise predictor: (x_t, condition slice, step) -> predicted eps.

    Two-channel input (latent + condition), one down/up level, step embedding
    added as a per-channel bias at the bottleneck. Small enough to train on a
    couple of CPU cores in minutes.
    """

    def __init__(self, base: int = 16, emb_dim: int = 32, seed: int = 0):
        super().__init__()
        self.enc1 = nn.Sequential(
            nn.Conv2d(2, base, 3, padding=1), nn.SiLU(), nn.Conv2d(base, base, 3, padding=1), nn.SiLU()
        )
        self.down = nn.Conv2d(base, base * 2, 4, stride=2, padding=1)
        self.mid = nn.Sequential(
            nn.Conv2d(base * 2, base * 2, 3, padding=1), nn.SiLU(), nn.Conv2d(base * 2, base * 2, 3, padding=1)
        )
        self.temb = StepEmbedding(emb_dim, base * 2)
        self.up = nn.ConvTranspose2d(base * 2, base, 4, stride=2, padding=1)
        self.out = nn.Sequential(
            nn.Conv2d(base * 2, base, 3, padding=1), nn.SiLU(), nn.Conv2d(base, 1, 3, padding=1)
        )
        seeded_init_(self, seed)

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h1 = self.enc1(torch.cat([x, cond], dim=1))
        h = F.silu(self.down(h1))
        h = h + self.temb(t)[:, :, None, None]
        h = F.silu(self.mid(h))
        h = F.silu(self.up(h))
        return self.out(torch.cat([h, h1], dim=1))


class PatchDiscriminator(nn.Module):
    """Patch-level least-squares critic: (B,1,H,W) -> (B,1,H/4,W/4) scores."""

    def __init__(self, base: int = 16, seed: int = 0):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(1, base, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(base, base * 2, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(base * 2, 1, 3, padding=1),
        )
        seeded_init_(self, seed)

    def forward(self, x):
        return self.net(x)


class ResidualMapper(nn.Module):
    """Lightweight slice-to-slice generator (identity plus learned residual)."""

    def __init__(self, base: int = 16, seed: int = 0):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(1, base, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(base, base, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(base, 1, 3, padding=1),
        )
        seeded_init_(self, seed)
        with torch.no_grad():
            self.net[-1].weight.zero_()
            self.net[-1].bias.zero_()

    def forward(self, x):
        return x + self.net(x)
