"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A value violates a declared invariant (range, finiteness, parameters)."""


class FormatError(ValueError):
    """A file is not in the expected on-disk format."""


class DimensionError(ValueError):
    """Array shapes or dimensions are inconsistent."""


class DegeneracyError(ValueError):
    """No separating direction exists between the given latent classes."""


class PlacementError(RuntimeError):
    """Phantom cells could not be placed within the attempt budget."""


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss; the last good checkpoint is kept."""
