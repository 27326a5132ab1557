"""Exception hierarchy shared across the package."""


class DescoError(Exception):
    """Base class for all errors raised by this package."""


class BoundsError(DescoError, IndexError):
    """An index or crop region falls outside the volume."""


class FormatError(DescoError, ValueError):
    """A file could not be parsed, or its header disagrees with its payload."""


class NoTargetError(DescoError, ValueError):
    """An operation that needs foreground voxels received an empty mask."""


class RegistrationError(DescoError, RuntimeError):
    """Slice registration failed to produce a usable deformation field."""


class DegenerateWeightError(DescoError, ValueError):
    """A weighted loss was evaluated with zero total weight."""


class UndefinedMetricError(DescoError, ValueError):
    """A surface-distance metric was requested for an empty mask."""


class TrainingDivergedError(DescoError, RuntimeError):
    """Training produced a non-finite loss; carries schedule diagnostics."""
