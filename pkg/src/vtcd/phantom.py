"""Synthetic cell-membrane phantoms and the degradation pipeline.

Phantoms are soft ellipsoidal shells (membrane intensity on the shell,
smooth Gaussian falloff of one membrane thickness, background elsewhere),
chosen over realistic geometry because the analytic shell volume makes the
expected voxel statistics computable by an independent oracle.

Degradation applies the two priors the restoration pipeline exploits:
axial resolution loss (Gaussian blur along Z followed by block-average
downsampling) and depth-increasing noise (per-slice Gaussian noise whose
std ramps linearly in z).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import DimensionError, PlacementError, ValidationError
from .volume import Volume3D, load_volume, save_volume

MANIFEST_VERSION = 1
_PLACE_ATTEMPTS = 1000


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (32, 32, 32)
    num_cells: int = 4
    radius_range: tuple[float, float] = (4.0, 8.0)
    membrane_thickness: float = 1.0
    background_level: float = 0.1
    membrane_level: float = 0.9
    seed: int = 0

    def __post_init__(self):
        rmin, rmax = self.radius_range
        if not (0 < rmin <= rmax):
            raise ValidationError(f"bad radius range {self.radius_range}")
        if rmax + 2 * self.membrane_thickness > min(self.dims) / 2:
            raise ValidationError(
                f"radius range {self.radius_range} does not fit in dims {self.dims}"
            )
        if not (0 <= self.background_level < self.membrane_level <= 1):
            raise ValidationError(
                "need 0 <= background_level < membrane_level <= 1, got "
                f"{self.background_level}, {self.membrane_level}"
            )
        if self.membrane_thickness <= 0:
            raise ValidationError("membrane_thickness must be positive")
        if self.num_cells < 0:
            raise ValidationError("num_cells must be >= 0")


@dataclass(frozen=True)
class DegradationSpec:
    sigma0: float = 0.05
    sigma1: float = 0.10
    axial_factor: int = 4
    axial_blur_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma0 < 0 or self.sigma1 < 0:
            raise ValidationError("noise stds must be >= 0")
        if self.axial_factor < 1 or int(self.axial_factor) != self.axial_factor:
            raise ValidationError(f"axial_factor must be a positive integer, got {self.axial_factor}")
        if self.axial_blur_sigma < 0:
            raise ValidationError("axial_blur_sigma must be >= 0")


@dataclass(frozen=True)
class ManifestEntry:
    clean_path: str
    degraded_path: str
    phantom_spec: PhantomSpec
    degradation_spec: DegradationSpec


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    train_indices: tuple[int, ...]
    eval_indices: tuple[int, ...]
    root: str
    format_version: int = MANIFEST_VERSION

    def volume_paths(self, index: int) -> tuple[Path, Path]:
        e = self.entries[index]
        return Path(self.root) / e.clean_path, Path(self.root) / e.degraded_path


def _place_cells(spec: PhantomSpec, rng: np.random.Generator):
    """Sample non-concentric ellipsoid cells that fit inside the volume."""
    rmin, rmax = spec.radius_range
    margin_pad = 2 * spec.membrane_thickness
    placed = []
    for _ in range(spec.num_cells):
        for _ in range(_PLACE_ATTEMPTS):
            semi = rng.uniform(rmin, rmax, size=3)
            lo = semi + margin_pad
            hi = np.asarray(spec.dims, dtype=float) - 1 - semi - margin_pad
            if np.any(hi < lo):
                continue
            center = rng.uniform(lo, hi)
            mean_r = float(semi.mean())
            ok = all(
                np.linalg.norm(center - c0) >= 0.8 * min(mean_r, float(s0.mean()))
                for c0, s0 in placed
            )
            if ok:
                placed.append((center, semi))
                break
        else:
            raise PlacementError(
                f"could not place cell {len(placed)} after {_PLACE_ATTEMPTS} attempts"
            )
    return placed


def shell_profile(dist_to_shell: np.ndarray, thickness: float) -> np.ndarray:
    """Gaussian membrane cross-section, unit peak, falloff scale = thickness."""
    return np.exp(-0.5 * (dist_to_shell / thickness) ** 2)


def generate_phantom(spec: PhantomSpec) -> Volume3D:
    """Render the phantom described by ``spec``; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    h, w, c = spec.dims
    xs = np.arange(h, dtype=np.float64)[:, None, None]
    ys = np.arange(w, dtype=np.float64)[None, :, None]
    zs = np.arange(c, dtype=np.float64)[None, None, :]
    shell = np.zeros(spec.dims, dtype=np.float64)
    for center, semi in _place_cells(spec, rng):
        rho = np.sqrt(
            ((xs - center[0]) / semi[0]) ** 2
            + ((ys - center[1]) / semi[1]) ** 2
            + ((zs - center[2]) / semi[2]) ** 2
        )
        r_geo = float(np.cbrt(semi[0] * semi[1] * semi[2]))
        np.maximum(shell, shell_profile((rho - 1.0) * r_geo, spec.membrane_thickness), out=shell)
    vol = spec.background_level + (spec.membrane_level - spec.background_level) * shell
    np.clip(vol, 0.0, 1.0, out=vol)
    return Volume3D(vol.astype(np.float32))


def noise_ramp(deg: DegradationSpec, axial_len: int) -> np.ndarray:
    """Per-slice noise std, linear in z: sigma0 at z=0 up to sigma0+sigma1."""
    if axial_len == 1:
        return np.array([deg.sigma0])
    zs = np.arange(axial_len, dtype=np.float64)
    return deg.sigma0 + deg.sigma1 * zs / (axial_len - 1)


def degrade_volume(clean: Volume3D, deg: DegradationSpec) -> Volume3D:
    """Blur along Z, downsample Z by the axial factor, add the depth noise ramp.

    Deterministic per ``deg.seed``. Output dims are (H, W, C/axial_factor).
    """
    h, w, c = clean.dims
    s = deg.axial_factor
    if c % s != 0:
        raise DimensionError(f"axial_factor {s} does not divide C={c}")
    data = clean.data.astype(np.float64)
    if deg.axial_blur_sigma > 0:
        data = gaussian_filter1d(data, deg.axial_blur_sigma, axis=2, mode="nearest")
    if s > 1:
        data = data.reshape(h, w, c // s, s).mean(axis=3)
    c_out = c // s
    sigmas = noise_ramp(deg, c_out)
    rng = np.random.default_rng(deg.seed)
    data = data + rng.standard_normal((h, w, c_out)) * sigmas[None, None, :]
    lo, hi = clean.intensity_range
    np.clip(data, lo, hi, out=data)
    dx, dy, dz = clean.voxel_size
    return Volume3D(
        data.astype(np.float32),
        voxel_size=(dx, dy, dz * s),
        intensity_range=clean.intensity_range,
    )


def build_dataset(
    n: int, pspec: PhantomSpec, dspec: DegradationSpec, out_dir
) -> DatasetManifest:
    """Write ``n`` clean/degraded pairs plus a JSON manifest under ``out_dir``.

    Pair i uses seeds ``pspec.seed + i`` and ``dspec.seed + i``; the split is
    80/20 train/eval by index.
    """
    if n < 1:
        raise ValidationError("dataset size must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        pspec_i = replace(pspec, seed=pspec.seed + i)
        dspec_i = replace(dspec, seed=dspec.seed + i)
        clean = generate_phantom(pspec_i)
        degraded = degrade_volume(clean, dspec_i)
        clean_name = f"clean_{i:04d}.vol"
        degraded_name = f"degraded_{i:04d}.vol"
        save_volume(clean, out_dir / clean_name)
        save_volume(degraded, out_dir / degraded_name)
        entries.append(ManifestEntry(clean_name, degraded_name, pspec_i, dspec_i))
    n_train = int(round(0.8 * n))
    manifest = DatasetManifest(
        entries=tuple(entries),
        train_indices=tuple(range(n_train)),
        eval_indices=tuple(range(n_train, n)),
        root=str(out_dir),
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "format_version": manifest.format_version,
        "entries": [
            {
                "clean_path": e.clean_path,
                "degraded_path": e.degraded_path,
                "phantom_spec": asdict(e.phantom_spec),
                "degradation_spec": asdict(e.degradation_spec),
            }
            for e in manifest.entries
        ],
        "split": {
            "train": list(manifest.train_indices),
            "eval": list(manifest.eval_indices),
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ValidationError(
            f"manifest version {doc.get('format_version')} unsupported (expected {MANIFEST_VERSION})"
        )
    entries = []
    for e in doc["entries"]:
        ps = e["phantom_spec"]
        ds = e["degradation_spec"]
        entries.append(
            ManifestEntry(
                clean_path=e["clean_path"],
                degraded_path=e["degraded_path"],
                phantom_spec=PhantomSpec(
                    dims=tuple(ps["dims"]),
                    num_cells=ps["num_cells"],
                    radius_range=tuple(ps["radius_range"]),
                    membrane_thickness=ps["membrane_thickness"],
                    background_level=ps["background_level"],
                    membrane_level=ps["membrane_level"],
                    seed=ps["seed"],
                ),
                degradation_spec=DegradationSpec(**ds),
            )
        )
    train_idx = tuple(doc["split"]["train"])
    eval_idx = tuple(doc["split"]["eval"])
    if set(train_idx) & set(eval_idx):
        raise ValidationError("manifest train/eval splits overlap")
    manifest = DatasetManifest(
        entries=tuple(entries),
        train_indices=train_idx,
        eval_indices=eval_idx,
        root=str(path.parent),
    )
    for i in range(len(entries)):
        clean_path, degraded_path = manifest.volume_paths(i)
        for p in (clean_path, degraded_path):
            if not p.exists():
                raise ValidationError(f"manifest references missing volume {p}")
    return manifest


def load_pair(manifest: DatasetManifest, index: int) -> tuple[Volume3D, Volume3D]:
    clean_path, degraded_path = manifest.volume_paths(index)
    return load_volume(clean_path), load_volume(degraded_path)
