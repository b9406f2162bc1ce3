"""Exception types raised across the simulator."""


class H2SimError(Exception):
    """Base class for every error raised by h2sim."""


class ConfigurationError(H2SimError, ValueError):
    """Shapes, geometry or hardware parameters do not fit together."""


class DataError(H2SimError, ValueError):
    """Numerical payload is invalid (non-finite values, bad labels)."""


class SequencingError(H2SimError, RuntimeError):
    """A unit was fed data before its producer finished (e.g. incomplete partial sums)."""


class CorruptedStateError(H2SimError, RuntimeError):
    """Stored state is internally inconsistent (e.g. mask/value count mismatch)."""


class NetworkParseError(ConfigurationError):
    """Malformed network string."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position
