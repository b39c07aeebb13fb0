"""Exception taxonomy shared across the laboratory."""


class OscillabError(Exception):
    """Base class for all library errors."""


class DomainError(OscillabError):
    """Point outside the phase domain."""


class PrecisionError(OscillabError):
    """Finite-difference step underflowed at the requested point."""


class CorankError(OscillabError):
    """Mixed Hessian drops rank by more than one (corank > 1)."""


class NoRootError(OscillabError):
    """No sign change of det over the supplied bracket."""


class AmbiguityError(OscillabError):
    """Multiple fold roots detected inside one bracket."""


class FoldDegeneracyError(OscillabError):
    """A denominator of the shear coefficients is numerically zero."""


class PreconditionError(OscillabError):
    """A required structural precondition failed (fold flags, residuals, ...)."""


class CapacityError(OscillabError):
    """Requested grid or matrix exceeds the configured capacity cap."""


class ShapeError(OscillabError):
    """Incompatible grid/function shapes."""


class ConfigError(OscillabError):
    """Invalid experiment or operator configuration."""


class ScaleError(OscillabError):
    """Frequency too small for the requested scale hierarchy."""


class DegenerateStartError(OscillabError):
    """Every iteration start collapsed to the zero function."""


class NumericalError(OscillabError):
    """Non-finite values encountered during iteration."""
