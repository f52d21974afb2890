"""Exception types shared across the package."""


class EmanateError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(EmanateError, ValueError):
    pass


class AliasingError(InvalidArgumentError):
    """A requested frequency component does not fit below Nyquist."""


class TrainingError(EmanateError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class FormatError(EmanateError, ValueError):
    """A persisted artifact (IQ file, sidecar, checkpoint, config) is malformed."""


class IncompleteRunError(EmanateError, FileNotFoundError):
    """A run directory lacks artifacts that a later step needs."""

    def __init__(self, message: str, missing=()):
        super().__init__(message)
        self.missing = list(missing)
