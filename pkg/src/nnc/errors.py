"""Exception types shared across the compiler."""


class NncError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(NncError):
    """Model document violates the JSON schema. Carries a JSON-path location."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class VersionError(NncError):
    """Unknown model document format_version."""


class CycleDetected(NncError):
    """Graph contains a cycle."""


class NonPositiveOutputLength(NncError):
    """A window operation's kernel exceeds its (padded) input length."""


class ShapeMismatch(NncError):
    """Runtime tensor shape does not match the graph's expectation."""


class UnfusablePadding(NncError):
    """A ZeroPad1D node cannot be folded into a following Conv1D."""


class InteriorSoftmax(NncError):
    """A SoftMax node appears somewhere other than the graph output."""


class DegenerateVariance(NncError):
    """BatchNorm variance + epsilon is not strictly positive."""


class AllZeroRange(NncError):
    """Cannot derive fractional bits: the value range is exactly zero."""


class MissingStats(NncError):
    """Calibration statistics required but not supplied."""


class FormatMismatch(NncError):
    """Fixed-point tensor format does not match the model's expectation."""


class UnsupportedLayer(NncError):
    """Layer kind not supported by the requested operation."""


class EmptyDataset(NncError):
    """Evaluation dataset contains no samples."""


class ConfigError(NncError):
    """Experiment configuration file is invalid or incomplete."""
