"""Exception types shared across the package.

Each class maps to one CLI exit code (see cli.EXIT_CODES), so library code
should raise the most specific type that applies.
"""


class CountsError(Exception):
    """Base class for all package errors."""


class ConfigError(CountsError):
    """Invalid configuration values (negative stddev, zero counts, ...)."""


class DatasetFormatError(CountsError):
    """Dataset directory is malformed: bad version, shape mismatch, missing files."""


class ModelFormatError(CountsError):
    """Model artifact is malformed or has an unsupported version."""


class TrainingDivergedError(CountsError):
    """Training loss became non-finite."""


class ExplanationError(CountsError):
    """Counterfactual search hit a non-finite gradient or inconsistent inputs."""


class EvaluationError(CountsError):
    """Metric evaluation received inconsistent or empty inputs."""
