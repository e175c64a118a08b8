"""Training objectives: least-squares adversarial terms, cycle/identity L1,
total variation, encoder-space content distance, noise-prediction MSE, and
the weighted total with per-phase weight overrides.

Every function accepts array-likes or torch tensors and returns a 0-dim
torch tensor, so the same code path serves value tests, finite-difference
gradient checks, and the training loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch

from .errors import DimensionError

_TINY = 1e-24


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def _safe_sqrt(v: torch.Tensor) -> torch.Tensor:
    """sqrt with zero (not NaN) gradient at exact zeros; exact for v >= _TINY."""
    return torch.where(v > 0, torch.sqrt(v.clamp_min(_TINY)), v * 0.0)


def adversarial_d(d_real, d_fake) -> torch.Tensor:
    """Least-squares discriminator objective: real -> 1, fake -> 0."""
    d_real = _as_tensor(d_real)
    d_fake = _as_tensor(d_fake)
    return ((d_real - 1.0) ** 2).mean() + (d_fake**2).mean()


def adversarial_g(d_fake) -> torch.Tensor:
    """Least-squares generator objective: fool the critic toward 1."""
    d_fake = _as_tensor(d_fake)
    return ((d_fake - 1.0) ** 2).mean()


def cycle_consistency(x, x_reconstructed) -> torch.Tensor:
    """Mean absolute error between an input and its round-tripped version."""
    x = _as_tensor(x)
    x_rec = _as_tensor(x_reconstructed)
    if x.shape != x_rec.shape:
        raise DimensionError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return (x_rec - x).abs().mean()


def identity_loss(x, g_of_x) -> torch.Tensor:
    """Mean absolute error of a generator applied to an already-in-domain input."""
    return cycle_consistency(x, g_of_x)


def tv_loss(img) -> torch.Tensor:
    """Isotropic total variation over the valid (i, j) interior.

    Accepts (h, w) or (h, w, c); the per-pixel magnitude
    sqrt(d_j^2 + d_i^2) is summed over i < h-1, j < w-1 and every channel,
    normalized by the full h*w*c element count.
    """
    img = _as_tensor(img)
    if img.dim() == 2:
        img = img[:, :, None]
    if img.dim() != 3:
        raise DimensionError(f"tv_loss expects (h,w) or (h,w,c), got {tuple(img.shape)}")
    h, w, c = img.shape
    if h < 2 or w < 2:
        raise DimensionError(f"tv_loss needs h,w >= 2, got {(h, w)}")
    dj = img[: h - 1, 1:w, :] - img[: h - 1, : w - 1, :]
    di = img[1:h, : w - 1, :] - img[: h - 1, : w - 1, :]
    mag = _safe_sqrt(dj**2 + di**2)
    return mag.sum() / (h * w * c)


def content_loss(pred, ref, encoder) -> torch.Tensor:
    """Normalized L2 distance between encoder features of pred and ref.

    ``encoder`` is any callable mapping a (B,1,H,W) tensor to a feature map;
    2D inputs are promoted automatically.
    """
    pred = _as_tensor(pred)
    ref = _as_tensor(ref)
    if pred.shape != ref.shape:
        raise DimensionError(f"shape mismatch {tuple(pred.shape)} vs {tuple(ref.shape)}")
    if pred.dim() == 2:
        pred = pred[None, None]
        ref = ref[None, None]
    fp = encoder(pred)
    fr = encoder(ref)
    sq = ((fp - fr) ** 2).sum()
    return _safe_sqrt(sq) / fp.numel()


def diffusion_loss(eps_true, eps_pred) -> torch.Tensor:
    """Mean squared error between sampled and predicted noise."""
    eps_true = _as_tensor(eps_true)
    eps_pred = _as_tensor(eps_pred)
    if eps_true.shape != eps_pred.shape:
        raise DimensionError(
            f"shape mismatch {tuple(eps_true.shape)} vs {tuple(eps_pred.shape)}"
        )
    return ((eps_pred - eps_true) ** 2).mean()


@dataclass(frozen=True)
class LossWeights:
    """Base weights plus per-phase overrides (the dynamic weight schedule)."""

    w_adv: float = 1.0
    w_cyc: float = 10.0
    w_id: float = 5.0
    w_tv: float = 0.1
    w_content: float = 1.0
    w_diff: float = 1.0
    phase_schedule: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("w_adv", "w_cyc", "w_id", "w_tv", "w_content", "w_diff"):
            v = getattr(self, name)
            if not (v >= 0) or v != v:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def active_for(self, phase: str) -> "LossWeights":
        """Base weights with the given phase's overrides applied."""
        overrides = self.phase_schedule.get(phase, {})
        return replace(self, phase_schedule={}, **overrides)

    def as_dict(self) -> dict:
        return {
            "w_adv": self.w_adv,
            "w_cyc": self.w_cyc,
            "w_id": self.w_id,
            "w_tv": self.w_tv,
            "w_content": self.w_content,
            "w_diff": self.w_diff,
        }


@dataclass
class LossBreakdown:
    """Per-term loss values plus the weighted total; fields echo the inputs."""

    adv_g: float = 0.0
    adv_d: float = 0.0
    cyc: float = 0.0
    id: float = 0.0
    tv: float = 0.0
    content: float = 0.0
    diff: float = 0.0
    total: float = 0.0

    def detached(self) -> "LossBreakdown":
        def _f(v):
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)

        return LossBreakdown(**{k: _f(v) for k, v in self.__dict__.items()})

    def as_dict(self) -> dict:
        return dict(self.detached().__dict__)


def total_loss(parts: LossBreakdown, weights: LossWeights, phase: str) -> LossBreakdown:
    """Weighted combination of the loss groups under the phase's active weights.

    Grouping: both adversarial directions, the denoising cycle (noise
    prediction + TV), the SR cycle (cycle + content), plus the identity term.
    Component fields are echoed; only ``total`` is computed.
    """
    w = weights.active_for(phase)
    total = (
        w.w_adv * (parts.adv_g + parts.adv_d)
        + w.w_diff * parts.diff
        + w.w_tv * parts.tv
        + w.w_cyc * parts.cyc
        + w.w_content * parts.content
        + w.w_id * parts.id
    )
    return LossBreakdown(
        adv_g=parts.adv_g,
        adv_d=parts.adv_d,
        cyc=parts.cyc,
        id=parts.id,
        tv=parts.tv,
        content=parts.content,
        diff=parts.diff,
        total=total,
    )
