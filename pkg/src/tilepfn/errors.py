"""Exception types raised across the package."""


class TilePFNError(Exception):
    """Base class for all package errors."""


class DimensionError(TilePFNError, ValueError):
    pass


class EmptyReductionError(TilePFNError, ValueError):
    pass


class EmptyContextError(TilePFNError, ValueError):
    pass


class TileConfigError(TilePFNError, ValueError):
    pass


class PoisonedLogitError(TilePFNError, FloatingPointError):
    """A logits tile contained NaN or +inf; raised instead of propagating it."""


class InstrumentationError(TilePFNError, RuntimeError):
    pass


class InputValidationError(TilePFNError, ValueError):
    pass


class ConfigError(TilePFNError, ValueError):
    pass


class WeightFormatError(TilePFNError, ValueError):
    """Weight file is corrupt, truncated, or inconsistent with its config block."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class UndefinedMetricError(TilePFNError, ValueError):
    pass


class DegenerateNormalizationError(TilePFNError, ValueError):
    pass
