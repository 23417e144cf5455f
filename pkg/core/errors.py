from typing import Optional


class SeparationError(Exception):
    """Base class for every error raised by the toolkit."""


class ShapeError(SeparationError, ValueError):
    pass


class StaleCacheError(ShapeError):
    """A forward cache was handed to backward for a different model state."""


class WavFormatError(SeparationError, ValueError):
    def __init__(self, message: str, chunk_id: Optional[str] = None):
        if chunk_id:
            message = f"{message} (chunk '{chunk_id}')"
        super().__init__(message)
        self.chunk_id = chunk_id


class WavIOError(SeparationError, OSError):
    pass


class StftParameterError(SeparationError, ValueError):
    pass


class NonFiniteGradientError(SeparationError, FloatingPointError):
    pass


class CheckpointError(SeparationError, ValueError):
    pass


class CorpusError(SeparationError):
    pass


class ConfigError(SeparationError, ValueError):
    pass
