"""Exception hierarchy shared by every sparc module."""


class SparcError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SparcError, ValueError):
    """Tensor shapes do not line up for the requested operation."""


class ValidationError(SparcError, ValueError):
    """An argument value violates an operation's precondition."""


class StateError(SparcError, RuntimeError):
    """The object is in the wrong lifecycle state for this call."""


class TaskNotFoundError(SparcError, KeyError):
    """A task id does not refer to an allocated working memory."""


class FormatError(SparcError, ValueError):
    """A binary or CSV artifact is malformed.

    ``offset`` is the byte (or line) position at which parsing failed,
    when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(SparcError, ValueError):
    """An experiment configuration key is unknown or out of range."""
