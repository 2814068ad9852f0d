"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(PipelineError, ValueError):
    """Invalid or inconsistent model parameters."""


class SingularParameterError(ParameterError):
    """Parameter combination makes a model expression singular."""


class ConfigError(PipelineError, ValueError):
    """Invalid run, schedule, scan, or noise configuration."""


class DivergenceError(PipelineError, RuntimeError):
    """Field integration produced a non-finite value."""


class UndefinedPhaseError(PipelineError, ValueError):
    """Phase requested for a zero or degenerate amplitude."""


class NormalizationError(PipelineError, ValueError):
    """Normalization reference amplitude is zero."""


class InsufficientDataError(PipelineError, ValueError):
    """Fewer samples or points than the operation requires."""


class ScheduleError(PipelineError, ValueError):
    """Pulse window falls outside the data it is applied to."""


class CalibrationError(PipelineError, RuntimeError):
    """Vacuum calibration cannot be derived from the given trace."""


class InvalidStateError(PipelineError, ValueError):
    """Density matrix violates Hermiticity, trace, or positivity bounds."""


class TruncationError(PipelineError, ValueError):
    """Fock cutoff is too small to hold the requested state."""


class FileFormatError(PipelineError, ValueError):
    """A data file does not match its expected format."""
