"""Exception hierarchy shared across the package."""


class AresError(Exception):
    """Base class for every error raised by aresbench."""


class ShapeError(AresError, ValueError):
    """A tensor does not have the shape an operation expects."""

    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"layer '{layer}': {message}"
        super().__init__(message)


class NonFiniteError(AresError, FloatingPointError):
    pass


class ConfigError(AresError, ValueError):
    pass


class FormatError(AresError):
    """Base class for binary record file problems."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DivergenceError(AresError):
    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")


class MissingArtifactError(AresError):
    pass
