"""Full-reference quality metrics and JSON report emission.

PSNR uses 10*log10(range^2 / MSE) with a 99.0 dB sentinel for exact matches
(JSON cannot carry infinity). SSIM is the canonical single-scale form with
an 11-wide Gaussian window (sigma 1.5) and stabilizers C1=(0.01*range)^2,
C2=(0.03*range)^2, averaged over the valid interior.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve

from .errors import DimensionError, ValidationError
from .losses import tv_loss
from .volume import PlaneId, Volume3D

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(pred: np.ndarray, ref: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; equal inputs hit the 99 dB cap."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if data_range <= 0:
        raise ValidationError(f"data range must be > 0, got {data_range}")
    mse = float(np.mean((pred - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * np.log10(data_range**2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pred: np.ndarray, ref: np.ndarray, data_range: float = 1.0) -> float:
    """Single-scale structural similarity; symmetric, ssim(x, x) = 1 exactly."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if pred.ndim != 2:
        raise DimensionError(f"ssim expects 2D images, got shape {pred.shape}")
    if min(pred.shape) < SSIM_WINDOW:
        raise DimensionError(
            f"image {pred.shape} smaller than the {SSIM_WINDOW}-wide window"
        )
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    def filt(img):
        return convolve(img, win, mode="constant")

    half = SSIM_WINDOW // 2
    crop = (slice(half, pred.shape[0] - half), slice(half, pred.shape[1] - half))
    mu1 = filt(pred)[crop]
    mu2 = filt(ref)[crop]
    s11 = filt(pred * pred)[crop] - mu1 * mu1
    s22 = filt(ref * ref)[crop] - mu2 * mu2
    s12 = filt(pred * ref)[crop] - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def volume_tv(vol: Volume3D) -> float:
    """Roughness statistic: the TV objective applied to the full (H, W, C) stack."""
    return float(tv_loss(vol.data.astype(np.float64)))


def _plane_slices(vol: Volume3D, plane: PlaneId):
    data = vol.data
    h, w, c = vol.dims
    if plane is PlaneId.XY:
        return [data[:, :, z] for z in range(c)]
    if plane is PlaneId.XZ:
        return [data[:, y, :] for y in range(w)]
    return [data[x, :, :] for x in range(h)]


def evaluate_volume(
    pred: Volume3D,
    gt: Volume3D,
    planes: tuple[PlaneId, ...] = (),
    volume_id: str = "volume",
) -> dict:
    """Per-plane slice-averaged metrics plus volume-level values for one pair."""
    if pred.dims != gt.dims:
        raise DimensionError(f"dims differ: {pred.dims} vs {gt.dims}")
    lo, hi = gt.intensity_range
    rng = hi - lo
    entry = {
        "id": volume_id,
        "psnr_db": psnr(pred.data, gt.data, rng),
        "ssim": float(
            np.mean([ssim(p, g, rng) for p, g in zip(_plane_slices(pred, PlaneId.XY), _plane_slices(gt, PlaneId.XY))])
        ),
        "tv_in": volume_tv(gt),
        "tv_out": volume_tv(pred),
        "planes": {},
    }
    for plane in planes:
        pslices = _plane_slices(pred, plane)
        gslices = _plane_slices(gt, plane)
        entry["planes"][plane.value] = {
            "psnr_db": float(np.mean([psnr(p, g, rng) for p, g in zip(pslices, gslices)])),
            "ssim": float(np.mean([ssim(p, g, rng) for p, g in zip(pslices, gslices)])),
        }
    return entry


@dataclass
class MetricsReport:
    per_volume: list = field(default_factory=list)
    aggregates: dict | None = None
    baseline: dict | None = None

    def recompute_aggregates(self) -> dict | None:
        self.aggregates = compute_aggregates(self.per_volume)
        return self.aggregates


def compute_aggregates(entries: list) -> dict | None:
    """Mean/median/population-std per scalar metric; None for empty reports."""
    if not entries:
        return None
    out = {}
    for key in ("psnr_db", "ssim", "tv_in", "tv_out"):
        vals = np.array([e[key] for e in entries], dtype=np.float64)
        out[key] = {
            "mean": float(vals.mean()),
            "median": float(np.median(vals)),
            "std": float(vals.std()),
        }
    return out


def write_report(report: MetricsReport, path) -> None:
    """Canonical-key-order JSON; re-reading reproduces aggregates exactly."""
    report.recompute_aggregates()
    doc = {
        "per_volume": report.per_volume,
        "aggregates": report.aggregates,
        "baseline": report.baseline,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")


def read_report(path) -> MetricsReport:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return MetricsReport(
        per_volume=doc["per_volume"],
        aggregates=doc["aggregates"],
        baseline=doc.get("baseline"),
    )
