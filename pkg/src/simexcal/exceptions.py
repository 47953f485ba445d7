"""Exception hierarchy shared by the calibration modules."""


class CalibrationError(Exception):
    """Base class for every error raised by :mod:`simexcal`."""


class ConfigurationError(CalibrationError, ValueError):
    """Invalid configuration value (grid bounds, coverage factor, ...)."""


class DomainError(CalibrationError, ValueError):
    """An input lies outside the domain of an operation."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FitError(CalibrationError, RuntimeError):
    """A least-squares fit did not converge.

    The best point reached and its residual norm are kept so callers can
    decide whether the partial result is usable.
    """

    def __init__(self, message, best=None, residual_norm=None, zeta_index=None):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm
        self.zeta_index = zeta_index


class SamplerError(CalibrationError, RuntimeError):
    """The posterior sampler failed to move away from its starting point."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularityError(DomainError):
    """Prediction inversion hit a (near) zero denominator."""


class ParseError(CalibrationError, ValueError):
    """Malformed or unreadable input file; ``line`` is 1-based (``None`` if unknown)."""

    def __init__(self, message, path=None, line=None):
        if path is None:
            loc = ""
        elif line is None:
            loc = f"{path}: "
        else:
            loc = f"{path}:{line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class StudyError(CalibrationError, RuntimeError):
    """Too many realisations of a Monte Carlo study failed."""
