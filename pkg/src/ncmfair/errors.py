"""Exception types shared across the package.

The CLI maps each family to a distinct exit code, so library code should
raise the most specific type that applies.
"""


class NcmFairError(Exception):
    """Base class for all package errors."""


class ArgumentError(NcmFairError, ValueError):
    """A caller violated an operation's precondition (shapes, counts, ranges)."""


class ConfigError(NcmFairError, ValueError):
    """A configuration value is invalid (bad hyperparameter, unknown mode)."""


class SchemaError(NcmFairError, ValueError):
    """An input file does not match the expected schema (columns, format)."""


class ModelError(NcmFairError, ValueError):
    """A model is structurally unusable (e.g. numerically singular system)."""


class NumericsError(NcmFairError, ArithmeticError):
    """A numerical computation produced non-finite or unstable values."""


class TrainingError(NcmFairError, RuntimeError):
    """Training diverged or could not complete."""


class DegenerateFitError(ArgumentError):
    """A regression fit is underdetermined (all abscissae identical)."""


class ComparisonError(ArgumentError):
    """Two trade-off curves share no common performance range."""
