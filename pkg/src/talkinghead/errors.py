"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Dimensions or settings that do not fit together."""


class ValidationError(ValueError):
    """An input violates a documented invariant."""


class PreconditionError(ValueError):
    """An operation was called before its inputs were usable."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the last good checkpoint is attached."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
