"""Exception hierarchy shared by all vflsim modules."""


class VflError(Exception):
    """Base class for all vflsim errors."""


class ConfigError(VflError):
    """Invalid configuration: bad dimensions, cut position, class counts, ..."""


class ShapeError(VflError):
    """Matrix shapes incompatible with the requested operation."""


class DataError(VflError):
    """Invalid data values: labels out of range, non-normalized distributions, empty input."""


class FormatError(VflError):
    """Malformed file on disk (IDX magic / truncation / count mismatch)."""


class TrainingDivergedError(VflError):
    """Training produced a non-finite loss; the message names the epoch."""


class AttackInfeasibleError(VflError):
    """The attack cannot run on the given inputs (e.g. fewer distinct rows than clusters)."""


class AttackFailedError(VflError):
    """The attack ran but failed internally (e.g. fine-tuning diverged)."""


class CapacityError(VflError):
    """Exact enumeration would exceed the supported state-space size."""


class IOFailure(VflError):
    """Report or config could not be read/written."""
