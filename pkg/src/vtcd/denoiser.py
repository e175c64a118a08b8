"""Hyperplane-guided conditional reverse diffusion for depth-varying noise.

Shallow (low-z) slices of an axially acquired volume are nearly clean while
deep slices are noisy; a linear direction separating the two populations in
slice space defines a semantic hyperplane. During the reverse chain each
latent is nudged along that direction before the conditional noise
prediction, so the statistics of the clean population propagate to deeper
slices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import NoiseSchedule, reverse_step
from .errors import DegeneracyError, DimensionError, ValidationError
from .networks import ConditionalUNet, FrozenEncoder
from .volume import Volume3D, step_of_index


@dataclass(frozen=True)
class Hyperplane:
    """Unit normal of the separating hyperplane through the origin."""

    n: np.ndarray
    fit_accuracy: float
    orientation: int = 1

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.float64)
        norm = float(np.linalg.norm(n))
        if abs(norm - 1.0) > 1e-6:
            raise ValidationError(f"hyperplane normal must be unit length, got {norm}")
        object.__setattr__(self, "n", n)


@dataclass(frozen=True)
class EditConfig:
    lam: float = 0.0
    apply_range: tuple[int, int] = (1, 10**9)

    def __post_init__(self):
        t_lo, t_hi = self.apply_range
        if t_lo > t_hi:
            raise ValidationError(f"apply_range must satisfy t_lo <= t_hi, got {self.apply_range}")
        if not np.isfinite(self.lam):
            raise ValidationError("edit strength must be finite")

    def active_at(self, t: int) -> bool:
        return self.lam != 0.0 and self.apply_range[0] <= t <= self.apply_range[1]


@dataclass
class DiffusionState:
    x_t: np.ndarray
    t: int
    z: np.ndarray | None = None


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def fit_hyperplane(low_noise_latents, high_noise_latents) -> Hyperplane:
    """Fit the separating direction between clean-like and noisy-like latents.

    A logistic-regression classifier is trained by full-batch gradient
    descent on centered, globally scaled features; its normalized weight
    vector is the hyperplane normal, oriented so the low-noise class has the
    larger mean signed distance.
    """
    low = np.asarray(low_noise_latents, dtype=np.float64)
    high = np.asarray(high_noise_latents, dtype=np.float64)
    if low.ndim != 2 or high.ndim != 2:
        raise DimensionError("latents must be 2D arrays (samples x dim)")
    if low.shape[0] < 2 or high.shape[0] < 2:
        raise ValidationError("need at least 2 samples per class")
    if low.shape[1] != high.shape[1]:
        raise DimensionError(
            f"latent dims differ: {low.shape[1]} vs {high.shape[1]}"
        )
    x = np.concatenate([low, high])
    y = np.concatenate([np.ones(len(low)), np.zeros(len(high))])
    # center and apply one global scale: per-feature scaling would distort
    # the raw-space direction the edits operate in
    mu = x.mean(axis=0)
    scale = float(x.std())
    if scale < 1e-12:
        scale = 1.0
    xs = (x - mu) / scale

    w = np.zeros(x.shape[1])
    b = 0.0
    lr = 0.5
    reg = 1e-3
    for _ in range(800):
        p = _sigmoid(xs @ w + b)
        grad_w = xs.T @ (p - y) / len(y) + reg * w
        grad_b = float(np.mean(p - y))
        w -= lr * grad_w
        b -= lr * grad_b

    w_raw = w / scale
    norm = float(np.linalg.norm(w_raw))
    if norm < 1e-10:
        raise DegeneracyError("classes are not linearly separable by any direction")
    n = w_raw / norm
    pred = (xs @ w + b) > 0
    accuracy = float(np.mean(pred == (y == 1)))

    d_low = float(np.mean(low @ n))
    d_high = float(np.mean(high @ n))
    orientation = 1
    if d_low < d_high:
        n = -n
        orientation = -1
    elif d_low == d_high:
        raise DegeneracyError("mean signed distances coincide; orientation undefined")
    return Hyperplane(n=n, fit_accuracy=accuracy, orientation=orientation)


def semantic_distance(x, h: Hyperplane) -> float:
    """Signed distance n . x of a (flattened) latent to the hyperplane."""
    flat = np.asarray(x, dtype=np.float64).ravel()
    if flat.shape != h.n.shape:
        raise DimensionError(f"latent dim {flat.shape[0]} != normal dim {h.n.shape[0]}")
    return float(h.n @ flat)


def edit_latent(x, h: Hyperplane, cfg: EditConfig):
    """Move a latent along the hyperplane normal: x' = x + lam * d(x, n) * n.

    lam = 0 and points on the hyperplane (d = 0) are exact fixed points.
    """
    x = np.asarray(x, dtype=np.float64)
    d = semantic_distance(x, h)
    if cfg.lam == 0.0 or d == 0.0:
        return x.copy()
    return x + cfg.lam * d * h.n.reshape(x.shape)


class DenoiserModel:
    """Conditional noise predictor plus the latent encoder for hyperplane fits.

    The predictor consumes the current latent, the step index, and a
    condition slice (channel-concatenated). Latent encodings for hyperplane
    fitting are the frozen encoder's feature maps pooled over channels, so
    the fitted direction lives in slice space and can edit diffusion latents
    directly.
    """

    def __init__(
        self,
        predictor: ConditionalUNet | None = None,
        encoder: FrozenEncoder | None = None,
        seed: int = 0,
    ):
        self.predictor = predictor if predictor is not None else ConditionalUNet(seed=seed)
        self.encoder = encoder if encoder is not None else FrozenEncoder(seed=seed + 1)

    def predict_eps(self, x: np.ndarray, t: int, cond: np.ndarray) -> np.ndarray:
        if x.shape != cond.shape:
            raise DimensionError(f"latent {x.shape} and condition {cond.shape} differ")
        with torch.no_grad():
            xt = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))[None, None]
            ct = torch.from_numpy(np.ascontiguousarray(cond, dtype=np.float32))[None, None]
            tt = torch.tensor([t], dtype=torch.long)
            eps = self.predictor(xt, tt, ct)[0, 0]
        return eps.numpy().astype(np.float64)

    def encode_latent(self, slice2d: np.ndarray) -> np.ndarray:
        """Channel-pooled encoder features, flattened to a slice-space vector."""
        with torch.no_grad():
            st = torch.from_numpy(np.array(slice2d, dtype=np.float32))[None, None]
            feats = self.encoder(st)[0]
        return feats.mean(dim=0).numpy().astype(np.float64).ravel()


def guided_reverse_step(
    state: DiffusionState,
    cond: np.ndarray,
    model: DenoiserModel,
    h: Hyperplane | None,
    cfg: EditConfig,
    sched: NoiseSchedule,
    z: np.ndarray,
) -> DiffusionState:
    """One reverse update with the semantic edit applied inside its step window.

    With lam = 0 (or t outside the window) this is exactly
    ``reverse_step(x_t, predict(x_t, t, cond), ...)``.
    """
    if state.t < 1:
        raise ValidationError(f"guided step requires t >= 1, got {state.t}")
    x = state.x_t
    if h is not None and cfg.active_at(state.t):
        x = edit_latent(x, h, cfg)
    eps = model.predict_eps(x, state.t, cond)
    x_prev = reverse_step(x, eps, state.t, sched, z)
    return DiffusionState(x_t=x_prev, t=state.t - 1, z=z)


def denoise_volume(
    vol: Volume3D,
    model: DenoiserModel,
    h: Hyperplane | None,
    cfg: EditConfig,
    sched: NoiseSchedule,
    seed: int = 0,
) -> Volume3D:
    """Refine XY slices in depth order via guided reverse chains.

    Slice z is treated as the latent at its mapped step t(z) and refined by
    the guided chain down to step 1, conditioned on the already-refined
    slice z-1 (slices are therefore processed strictly sequentially). Slices
    mapped to t = 0 (always including z = 0) pass through unchanged. One
    standard-normal field is drawn per chain step from a single generator,
    so runs are deterministic per seed.
    """
    data = vol.data
    hdim, wdim, cdim = vol.dims
    rng = np.random.default_rng(seed)
    lo, hi = vol.intensity_range
    out = np.empty_like(data)
    prev_refined = None
    for zidx in range(cdim):
        sl = data[:, :, zidx].astype(np.float64)
        t_z = step_of_index(zidx, cdim, sched.T)
        if t_z == 0:
            refined = sl
        else:
            cond = prev_refined if prev_refined is not None else sl
            state = DiffusionState(x_t=sl, t=t_z)
            for _ in range(t_z, 0, -1):
                z_noise = rng.standard_normal(sl.shape)
                state = guided_reverse_step(state, cond, model, h, cfg, sched, z_noise)
            refined = np.clip(state.x_t, lo, hi)
        out[:, :, zidx] = refined.astype(np.float32)
        prev_refined = refined
    return Volume3D(out, voxel_size=vol.voxel_size, intensity_range=vol.intensity_range)
