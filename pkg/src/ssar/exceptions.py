"""Exception types raised across the package."""


class SsarError(Exception):
    """Base class for all package errors."""


class DimensionError(SsarError):
    """Array shapes do not line up (layer dims, batch dims, action dims)."""


class NonFiniteError(SsarError):
    """A computation produced NaN or inf.

    ``op`` names the first non-finite intermediate on the tape.
    """

    def __init__(self, op: str, message: str = ""):
        self.op = op
        super().__init__(message or f"non-finite value produced by op '{op}'")


class DataFormatError(SsarError):
    """A dataset or checkpoint file failed to parse.

    ``offset`` is the byte offset at which the problem was detected.
    """

    def __init__(self, message: str, offset: int = -1):
        self.offset = offset
        if offset >= 0:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class EmptySelectionError(SsarError):
    """A sub-dataset selection matched no transitions."""


class DivergenceError(SsarError):
    """A training loop detected runaway value estimates."""


class ConfigError(SsarError):
    """A run configuration failed validation."""
