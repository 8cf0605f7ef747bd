"""Exception types shared across the package."""


class MemQAError(Exception):
    """Base class for all package errors."""


class DimensionError(MemQAError, ValueError):
    """Tensor shapes do not line up for the requested operation."""


class ArgumentError(MemQAError, ValueError):
    """An argument violates an operation's contract."""


class NumericError(MemQAError, ArithmeticError):
    """A non-finite value (NaN/Inf) appeared where finite math is required."""


class ConfigError(MemQAError, ValueError):
    """Invalid or inconsistent model/scorer configuration."""


class ParseError(MemQAError, ValueError):
    """Malformed corpus text."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class VocabularyError(MemQAError, KeyError):
    """A token is missing from the vocabulary."""

    def __str__(self):  # KeyError repr-quotes its payload; keep the message readable
        return self.args[0] if self.args else ""


class CheckpointFormatError(MemQAError, ValueError):
    """Checkpoint file is corrupt or truncated."""


class CheckpointVersionError(MemQAError, ValueError):
    """Checkpoint was written with an incompatible format version."""
