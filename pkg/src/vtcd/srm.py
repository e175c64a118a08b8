"""Cross-plane propagation of lateral detail into the axial dimension.

A frozen 2D encoder lifts every XY slice to a d-channel feature map; the
maps are stacked into a Z-upsampled feature grid (linear interpolation
between neighbouring slice encodings, exact at integer-aligned planes).
A small accumulator MLP re-weights each grid element from its 3x3x3
neighbourhood, and a 1x1 decode head turns feature planes into additive
residuals for the axial (XZ/YZ) slices.

The identity configuration (one-hot accumulator, zero decode head, scale 1)
is the exact identity on volumes; training only ever moves away from it.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionError, ValidationError
from .networks import FrozenEncoder, seeded_init_
from .volume import PlaneId, Volume3D

NEIGHBOR_OFFSETS = tuple(itertools.product((-1, 0, 1), repeat=3))
CENTER_OFFSET_INDEX = NEIGHBOR_OFFSETS.index((0, 0, 0))
NUM_NEIGHBORS = len(NEIGHBOR_OFFSETS)  # 27 = (2*shift+1)^3 with shift=1


@dataclass(frozen=True)
class FeatureGrid:
    """d-channel feature field over the Z-upsampled grid [d][H][W][C']."""

    features: np.ndarray
    d: int
    source_dims: tuple[int, int, int]

    def __post_init__(self):
        f = self.features
        if f.ndim != 4 or f.shape[0] != self.d:
            raise DimensionError(f"features must be [d][H][W][C'], got {f.shape}")
        h, w, c = self.source_dims
        if f.shape[1] != h or f.shape[2] != w or f.shape[3] % c != 0:
            raise DimensionError(
                f"grid shape {f.shape[1:]} inconsistent with source dims {self.source_dims}"
            )
        if not np.all(np.isfinite(f)):
            raise ValidationError("feature grid contains non-finite values")

    @property
    def scale(self) -> int:
        return self.features.shape[3] // self.source_dims[2]


class SrmModel(nn.Module):
    """Frozen encoder + accumulator MLP + residual decode head."""

    def __init__(
        self,
        encoder: nn.Module | None = None,
        d: int = 8,
        acc_hidden: int = 32,
        seed: int = 0,
        apply_yz: bool = False,
    ):
        super().__init__()
        self.encoder = encoder if encoder is not None else FrozenEncoder(channels=d, seed=seed + 1)
        self.d = self.encoder.channels
        self.apply_yz = apply_yz
        self.accumulator = nn.Sequential(
            nn.Linear(NUM_NEIGHBORS * self.d, acc_hidden),
            nn.ReLU(),
            nn.Linear(acc_hidden, NUM_NEIGHBORS),
        )
        self.decode_head = nn.Conv2d(self.d, 1, 1)
        seeded_init_(self.accumulator, seed + 2)
        self.zero_decode_head()
        # bias toward the center element so an untrained accumulator is
        # near-identity rather than arbitrary mixing
        with torch.no_grad():
            self.accumulator[-1].bias[CENTER_OFFSET_INDEX] = 1.0

    def zero_decode_head(self):
        with torch.no_grad():
            self.decode_head.weight.zero_()
            self.decode_head.bias.zero_()
        return self

    def set_identity_accumulator(self):
        """Freeze the accumulator to emit an exact one-hot at the center offset."""
        with torch.no_grad():
            for layer in self.accumulator:
                if isinstance(layer, nn.Linear):
                    layer.weight.zero_()
                    layer.bias.zero_()
            self.accumulator[-1].bias[CENTER_OFFSET_INDEX] = 1.0
        return self

    def encode_stack(self, vol_t: torch.Tensor) -> torch.Tensor:
        """(H, W, C) volume tensor -> (C, d, H, W) per-slice features."""
        slices = vol_t.permute(2, 0, 1)[:, None]
        return self.encoder(slices)

    def trainable_parameters(self):
        yield from self.accumulator.parameters()
        yield from self.decode_head.parameters()


def upsample_axis_last(x: torch.Tensor, target_len: int) -> torch.Tensor:
    """Linear interpolation of the last axis onto ``target_len`` samples.

    Sample ``i`` of the output reads position ``i / factor`` of the input
    (clamp-to-edge past the last sample); integer-aligned positions are
    copied exactly, and factor 1 is the identity.
    """
    src_len = x.shape[-1]
    if target_len % src_len != 0:
        raise DimensionError(f"target length {target_len} not a multiple of {src_len}")
    factor = target_len // src_len
    if factor == 1:
        return x.clone()
    idx = torch.arange(target_len)
    z0 = torch.div(idx, factor, rounding_mode="floor")
    z1 = torch.clamp(z0 + 1, max=src_len - 1)
    frac = (idx - z0 * factor).to(x.dtype) / factor
    x0 = x[..., z0]
    x1 = x[..., z1]
    out = (1.0 - frac) * x0 + frac * x1
    exact = (frac == 0) | (z0 == z1)
    return torch.where(exact, x0, out)


def interp_grid(feats: torch.Tensor, s: int) -> torch.Tensor:
    """(C, d, H, W) slice features -> (d, H, W, s*C) grid, exact at c' = s*z."""
    grid = upsample_axis_last(feats.permute(1, 2, 3, 0), s * feats.shape[0])
    return grid


def accumulate_grid(grid_t: torch.Tensor, model: SrmModel) -> torch.Tensor:
    """Re-weight each grid element from its clamped 3x3x3 neighbourhood."""
    d, h, w, c = grid_t.shape
    padded = F.pad(grid_t[None], (1, 1, 1, 1, 1, 1), mode="replicate")[0]
    neighbors = torch.stack(
        [
            padded[:, 1 + m : 1 + m + h, 1 + n : 1 + n + w, 1 + o : 1 + o + c]
            for (m, n, o) in NEIGHBOR_OFFSETS
        ]
    )  # (27, d, h, w, c)
    p = h * w * c
    flat = neighbors.reshape(NUM_NEIGHBORS, d, p)
    mlp_in = flat.permute(2, 0, 1).reshape(p, NUM_NEIGHBORS * d)
    theta = model.accumulator(mlp_in)  # (p, 27)
    out = torch.einsum("pk,kdp->dp", theta, flat)
    return out.reshape(d, h, w, c)


def decode_residual(model: SrmModel, plane_feats: torch.Tensor) -> torch.Tensor:
    """(d, N, M) feature plane -> (N, M) additive intensity residual."""
    return model.decode_head(plane_feats[None])[0, 0]


def _vol_to_tensor(vol: Volume3D) -> torch.Tensor:
    return torch.from_numpy(np.array(vol.data))


def build_feature_grid(vol: Volume3D, model: SrmModel, s: int) -> FeatureGrid:
    """Encode every XY slice and stack into the Z-upsampled feature grid."""
    if s < 1:
        raise ValidationError(f"scale must be >= 1, got {s}")
    with torch.no_grad():
        feats = model.encode_stack(_vol_to_tensor(vol))
        grid = interp_grid(feats, s)
    return FeatureGrid(features=grid.numpy(), d=model.d, source_dims=vol.dims)


def accumulate_neighbors(grid: FeatureGrid, model: SrmModel) -> FeatureGrid:
    with torch.no_grad():
        out = accumulate_grid(torch.from_numpy(grid.features), model)
    return FeatureGrid(features=out.numpy(), d=grid.d, source_dims=grid.source_dims)


def overlay_slice(
    slice_lr: np.ndarray, plane: PlaneId, index: int, grid: FeatureGrid, model: SrmModel
) -> np.ndarray:
    """Upsample one axial slice to the grid's Z resolution and add its decoded residual."""
    h, w, _ = grid.source_dims
    c_hi = grid.features.shape[3]
    if plane is PlaneId.XZ:
        if not 0 <= index < w:
            raise DimensionError(f"XZ index {index} out of range [0, {w})")
        plane_feats = grid.features[:, :, index, :]
    elif plane is PlaneId.YZ:
        if not 0 <= index < h:
            raise DimensionError(f"YZ index {index} out of range [0, {h})")
        plane_feats = grid.features[:, index, :, :]
    else:
        raise ValidationError("overlay_slice applies to XZ or YZ slices only")
    sl = torch.from_numpy(np.array(slice_lr))
    if sl.dim() != 2 or sl.shape[0] != plane_feats.shape[1]:
        raise DimensionError(
            f"slice shape {tuple(sl.shape)} inconsistent with grid plane {plane_feats.shape[1:]}"
        )
    with torch.no_grad():
        up = upsample_axis_last(sl, c_hi)
        res = decode_residual(model, torch.from_numpy(np.array(plane_feats)))
        out = up + res
    return out.numpy()


def super_resolve_volume(vol_lr: Volume3D, model: SrmModel, s: int) -> Volume3D:
    """Propagate XY detail axially: (H, W, C) -> (H, W, s*C).

    Builds the accumulated feature grid once, overlays every XZ slice, and
    optionally (``model.apply_yz``) runs a second residual pass over the YZ
    slices of the intermediate result.
    """
    h, w, c = vol_lr.dims
    with torch.no_grad():
        vol_t = _vol_to_tensor(vol_lr)
        grid = accumulate_grid(interp_grid(model.encode_stack(vol_t), s), model)
        up = upsample_axis_last(vol_t, s * c)  # (H, W, C')
        res_xz = model.decode_head(grid.permute(2, 0, 1, 3))[:, 0]  # (W, H, C')
        out = up + res_xz.permute(1, 0, 2)
        if model.apply_yz:
            res_yz = model.decode_head(grid.permute(1, 0, 2, 3))[:, 0]  # (H, W, C')
            out = out + res_yz
        lo, hi = vol_lr.intensity_range
        out = out.clamp(lo, hi)
    dx, dy, dz = vol_lr.voxel_size
    return Volume3D(
        out.numpy(),
        voxel_size=(dx, dy, dz / s),
        intensity_range=vol_lr.intensity_range,
    )
