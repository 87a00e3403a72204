"""Exception types shared across the simulator and post-processing stages."""


class ConfigError(ValueError):
    """Raised when a parameter set or config file is internally inconsistent."""


class FormatError(ValueError):
    """Raised when a binary or text artifact does not conform to its format.

    Attributes:
        offset: Byte offset of the first offending byte, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)
        self.offset = offset
