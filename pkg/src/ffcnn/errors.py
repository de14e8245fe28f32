"""Exception types shared by all ffcnn modules."""


class FfcnnError(Exception):
    """Base class for all library errors."""


class FormatError(FfcnnError):
    """A file did not match its declared binary format."""


class MissingLabels(FfcnnError):
    """An operation that needs labels got an unlabeled image set."""


class ColorError(FfcnnError):
    """Color-space conversion applied to an incompatible image set."""


class DimError(FfcnnError):
    """Array dimensions incompatible with the requested operation."""


class SingularError(FfcnnError):
    """Unregularized least-squares system is singular."""


class DegenerateError(FfcnnError):
    """Input is degenerate (zero vector, single class, ...)."""


class ConfigError(FfcnnError):
    """Invalid experiment or model configuration."""
