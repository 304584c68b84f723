"""Exception hierarchy shared across the package.

Every error carries the process exit code the CLI maps it to, so the
command layer never has to know about individual failure sites.
"""


class FertError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(FertError):
    """Bad command-line usage: unknown flag, missing argument, invalid value."""

    exit_code = 1


class FileSystemError(FertError):
    """Missing path, unreadable file, failed write."""

    exit_code = 2


class FormatError(FertError):
    """Structurally invalid file: bad magic, unsupported version, bad field."""

    exit_code = 3


class ConfigError(FormatError):
    """Invalid radar or pipeline configuration."""


class TruncationError(FormatError):
    """File ends before its declared payload; message carries the byte offset."""

    exit_code = 4


class NumericError(FertError):
    """Non-finite values or a numeric contract violation."""

    exit_code = 5


class DomainError(NumericError):
    """Argument outside the physically meaningful domain."""


class ShapeError(NumericError):
    """Array shape does not match what the operation requires."""


class PipelineError(NumericError):
    """Stream processing invariant broken (wrong cube dims, bad state)."""
