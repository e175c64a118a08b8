"""3D volume data model, binary file I/O, and orthogonal plane slicing.

Axis convention: ``data[x][y][z]`` with extents ``(H, W, C)``. X and Y are
the high-resolution lateral axes, Z the low-resolution axial one. The
``VTCDVOL1`` single-file container defined here is the interchange format
for every other module and the CLI:

    bytes 0..7    magic ``b"VTCDVOL1"``
    bytes 8..11   little-endian uint32, byte length of the JSON header
    header        UTF-8 JSON: {"dims": [H, W, C], "voxel_size": [dx, dy, dz],
                  "dtype": "f32le", "range": [lo, hi]}
    payload       H*W*C little-endian float32, z-major, then x, then y
                  (flat index = z*H*W + x*W + y)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, ValidationError

MAGIC = b"VTCDVOL1"


class PlaneId(Enum):
    XY = "xy"
    XZ = "xz"
    YZ = "yz"


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Real-valued 3D intensity volume.

    ``data`` is float32 with shape ``(H, W, C)``; values must be finite and
    lie within ``intensity_range``. Immutable after construction (the array
    is marked read-only) so instances are safe to share across threads.
    """

    data: np.ndarray
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    intensity_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise DimensionError(f"volume data must be 3D, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 2 or w < 2 or c < 1:
            raise ValidationError(f"volume dims must satisfy H>=2, W>=2, C>=1, got {(h, w, c)}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("volume contains non-finite values")
        lo, hi = self.intensity_range
        if not (lo < hi):
            raise ValidationError(f"intensity_range must satisfy lo < hi, got {(lo, hi)}")
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise ValidationError(
                f"values [{arr.min():.6g}, {arr.max():.6g}] exceed declared range {(lo, hi)}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "intensity_range", (float(lo), float(hi)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class SliceSet:
    """Ordered 2D slices of a volume along one plane family.

    ``t_of_index[i]`` is the diffusion step assigned to slice ``i``; for the
    XY family the map is monotone non-decreasing in the z index.
    """

    plane: PlaneId
    slices: tuple[np.ndarray, ...]
    index_axis_len: int
    t_of_index: tuple[int, ...] = field(repr=False)

    def __post_init__(self):
        if len(self.slices) != self.index_axis_len:
            raise DimensionError(
                f"{len(self.slices)} slices but index axis length {self.index_axis_len}"
            )
        if len(self.t_of_index) != self.index_axis_len:
            raise DimensionError("t_of_index length must match slice count")


def step_of_index(i: int, axis_len: int, steps: int) -> int:
    """Linear slice-index -> diffusion-step map, rounded half away from zero.

    Endpoint exact: i=0 -> 0 and i=axis_len-1 -> steps. A single-slice axis
    maps to step 0.
    """
    if axis_len <= 1:
        return 0
    return int(i * steps / (axis_len - 1) + 0.5)


def save_volume(vol: Volume3D, path) -> None:
    """Write ``vol`` to ``path`` in the VTCDVOL1 container format."""
    if not np.all(np.isfinite(vol.data)):
        raise ValidationError("refusing to write non-finite volume data")
    h, w, c = vol.dims
    header = {
        "dims": [h, w, c],
        "voxel_size": list(vol.voxel_size),
        "dtype": "f32le",
        "range": list(vol.intensity_range),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.transpose(vol.data, (2, 0, 1)).astype("<f4").tobytes()
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"failed to write volume to {path}: {exc}") from exc


def load_volume(path) -> Volume3D:
    """Read a VTCDVOL1 file back into a bit-identical :class:`Volume3D`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise OSError(f"failed to read volume from {path}: {exc}") from exc
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a VTCDVOL1 file")
    (header_len,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
        h, w, c = (int(v) for v in header["dims"])
        voxel_size = tuple(float(v) for v in header["voxel_size"])
        lo, hi = (float(v) for v in header["range"])
        dtype = header["dtype"]
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    if dtype != "f32le":
        raise FormatError(f"{path}: unsupported dtype {dtype!r}")
    payload = raw[12 + header_len :]
    expected = 4 * h * w * c
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {expected} for dims {(h, w, c)}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    data = np.transpose(flat.reshape(c, h, w), (1, 2, 0))
    return Volume3D(data, voxel_size=voxel_size, intensity_range=(lo, hi))


def slice_volume(vol: Volume3D, plane: PlaneId, steps: int) -> SliceSet:
    """Cut ``vol`` into the ordered 2D slices of one plane family.

    The slice sequence doubles as the forward noising trajectory: slice ``i``
    is assigned the diffusion step ``step_of_index(i, axis_len, steps)``.
    Values are copied unchanged.
    """
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    data = vol.data
    h, w, c = vol.dims
    if plane is PlaneId.XY:
        slices = tuple(np.ascontiguousarray(data[:, :, z]) for z in range(c))
        axis_len = c
    elif plane is PlaneId.XZ:
        slices = tuple(np.ascontiguousarray(data[:, y, :]) for y in range(w))
        axis_len = w
    elif plane is PlaneId.YZ:
        slices = tuple(np.ascontiguousarray(data[x, :, :]) for x in range(h))
        axis_len = h
    else:  # pragma: no cover - closed enumeration
        raise ValidationError(f"unknown plane {plane}")
    t_map = tuple(step_of_index(i, axis_len, steps) for i in range(axis_len))
    return SliceSet(plane=plane, slices=slices, index_axis_len=axis_len, t_of_index=t_map)


def reassemble_volume(
    ss: SliceSet,
    dims: tuple[int, int, int],
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0),
    intensity_range: tuple[float, float] = (0.0, 1.0),
) -> Volume3D:
    """Inverse of :func:`slice_volume`; bit-exact for every plane family."""
    h, w, c = dims
    expected_count = {PlaneId.XY: c, PlaneId.XZ: w, PlaneId.YZ: h}[ss.plane]
    expected_shape = {PlaneId.XY: (h, w), PlaneId.XZ: (h, c), PlaneId.YZ: (w, c)}[ss.plane]
    if len(ss.slices) != expected_count:
        raise DimensionError(
            f"{len(ss.slices)} slices cannot reassemble dims {dims} along {ss.plane.value}"
        )
    for i, sl in enumerate(ss.slices):
        if sl.shape != expected_shape:
            raise DimensionError(
                f"slice {i} has shape {sl.shape}, expected {expected_shape}"
            )
    data = np.empty((h, w, c), dtype=np.float32)
    if ss.plane is PlaneId.XY:
        for z, sl in enumerate(ss.slices):
            data[:, :, z] = sl
    elif ss.plane is PlaneId.XZ:
        for y, sl in enumerate(ss.slices):
            data[:, y, :] = sl
    else:
        for x, sl in enumerate(ss.slices):
            data[x, :, :] = sl
    return Volume3D(data, voxel_size=voxel_size, intensity_range=intensity_range)
