"""Exception hierarchy shared by all floodlab modules."""


class FloodlabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(FloodlabError):
    """Invalid configuration value, unknown option, or inconsistent settings."""


class DomainError(FloodlabError):
    """Geometric query outside the valid domain (bounds, extent, empty set)."""


class MaskedRegionError(DomainError):
    """Query whose entire interpolation neighborhood is masked out."""


class ContractError(FloodlabError):
    """Caller violated an operation contract (shape mismatch, stale cache, ...)."""


class NumericError(FloodlabError):
    """Non-finite values where finite ones are required."""


class SolverBlowupError(NumericError):
    """Solver produced a non-finite state or an unusably small time step.

    Carries the failing cell index (row, col) and simulation time when known.
    """

    def __init__(self, message, cell=None, time=None):
        super().__init__(message)
        self.cell = cell
        self.time = time


class TrainingDivergedError(FloodlabError):
    """Validation loss became non-finite; carries the last good checkpoint."""

    def __init__(self, message, last_good=None, epoch=None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


class FormatError(FloodlabError):
    """Malformed serialized file (bad magic, version, or layout)."""
