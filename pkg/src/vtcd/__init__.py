"""vtcd: unsupervised denoising and axial super-resolution of 3D volumes."""

from .volume import PlaneId, SliceSet, Volume3D, load_volume, save_volume, slice_volume, reassemble_volume

__all__ = [
    "PlaneId",
    "SliceSet",
    "Volume3D",
    "load_volume",
    "save_volume",
    "slice_volume",
    "reassemble_volume",
]

__version__ = "0.1.0"
