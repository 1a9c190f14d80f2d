"""Exception types raised across the package."""


class TierGANError(Exception):
    pass


class ShapeError(TierGANError, ValueError):
    pass


class GeometryError(TierGANError, ValueError):
    pass


class NonFiniteGradientError(TierGANError, FloatingPointError):
    pass


class TrainingDiverged(TierGANError, FloatingPointError):
    """A loss became NaN or infinite during training."""

    def __init__(self, message, *, epoch=None, step=None, stage=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.stage = stage


class PreconditionError(TierGANError, RuntimeError):
    pass


class ImageFormatError(TierGANError, ValueError):
    pass


class UnsupportedFormatError(ImageFormatError):
    pass


class TruncatedImageError(ImageFormatError):
    pass


class MaxvalError(ImageFormatError):
    pass


class CheckpointError(TierGANError, ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class DigestMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ConfigError(TierGANError, ValueError):
    pass
