"""Exception taxonomy shared across the package."""


class TextDinaError(Exception):
    """Base class for all textdina errors."""


class DimensionError(TextDinaError, ValueError):
    """Array shapes are inconsistent with each other or with the model."""


class DomainError(TextDinaError, ValueError):
    """A numeric argument is outside its mathematical domain."""


class CapacityError(TextDinaError, ValueError):
    """A combinatorial guard (e.g. attribute count) was exceeded."""


class DegenerateVarianceError(TextDinaError, ValueError):
    """An operation requiring spread received a constant sample."""


class ConstraintDeadlockError(TextDinaError, RuntimeError):
    """No candidate satisfies the Q-matrix constraints; never retained silently."""


class DiagnosticsError(TextDinaError, RuntimeError):
    """Convergence diagnostics cannot be computed from the given draws."""


class ConfigError(TextDinaError, ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class DataError(TextDinaError, ValueError):
    """Malformed or inconsistent input data (CLI exit code 3)."""
