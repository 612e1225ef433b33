"""
Exception and warning types shared by all modules
"""

from typing import Optional


class HvpfError(ValueError):
    """Base class for all expected (user-facing) failures"""


class InputError(HvpfError):
    """Invalid image, coordinate or size supplied by the caller"""


class ConfigurationError(HvpfError):
    """Invalid viewing conditions, profiles or run configuration"""


class FormatError(HvpfError):
    """Malformed file; carries the 1-based line number when known"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class HvpfWarning(UserWarning):
    """Recoverable condition (fallbacks, rounding, clamping, coarse fits)"""
