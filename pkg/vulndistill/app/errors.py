"""Exception hierarchy shared by every package in the app.

Each error also derives from the closest builtin so callers that only know
about ``ValueError`` / ``RuntimeError`` keep working.
"""


class VulnDistillError(Exception):
    """Base class for all errors raised by the pipeline."""


class ConfigError(VulnDistillError, ValueError):
    pass


class ShapeError(VulnDistillError, ValueError):
    pass


class NumericError(VulnDistillError, FloatingPointError):
    pass


class GradientError(VulnDistillError, RuntimeError):
    pass


class PreprocessError(VulnDistillError, ValueError):
    pass


class DatasetError(VulnDistillError, ValueError):
    pass


class CheckpointError(VulnDistillError, ValueError):
    pass


class DistillationError(VulnDistillError, RuntimeError):
    pass


class ReportError(VulnDistillError, OSError):
    pass
