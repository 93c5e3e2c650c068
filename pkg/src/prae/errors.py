"""Exception hierarchy shared across the package."""


class PraeError(Exception):
    """Base class for all package errors."""


class DimensionError(PraeError, ValueError):
    """Tensor shapes do not agree with a layer or model."""


class EmptyInputError(PraeError, ValueError):
    """An operation received a cloud or tensor with zero points."""


class DegenerateVarianceError(PraeError, ValueError):
    """Batch statistics were requested over a single sample."""


class DegenerateScaleError(PraeError, ValueError):
    """A cloud collapsed to one point and cannot be rescaled."""


class ProtocolError(PraeError, RuntimeError):
    """Backward was called without a matching forward pass."""


class NonFiniteError(PraeError, FloatingPointError):
    """NaN or Inf appeared in activations, gradients or losses."""


class SizeMismatchError(PraeError, ValueError):
    """Two clouds must have equal size (e.g. for a bijection)."""


class ConvergenceError(PraeError, RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ChecksumError(PraeError, IOError):
    """Stored CRC-32 does not match the file contents."""


class FormatError(PraeError, ValueError):
    """A file is malformed, truncated or has the wrong version."""


class PointCountError(FormatError):
    """A cloud on disk does not have the expected number of points."""


class ConfigError(PraeError, ValueError):
    """Invalid or conflicting experiment configuration."""
