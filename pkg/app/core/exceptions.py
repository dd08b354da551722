"""
SRPL Custom Exceptions

Services raise these; only the CLI entry point turns them into exit codes.
"""
from app.core.status import EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE, EXIT_UNEXPECTED


class SrplError(Exception):
    """Base class for every error the library raises on purpose."""
    exit_code = EXIT_UNEXPECTED


class UsageError(SrplError):
    """Raised for invalid flags, config keys or argument combinations."""
    exit_code = EXIT_USAGE


class DataError(SrplError):
    """Base class for problems with input corpora, splits or checkpoints."""
    exit_code = EXIT_DATA


class CorpusFormatError(DataError):
    """
    Raised when a corpus file or record violates the embedding format.
    The record index is the 0-based line (JSONL) or record position (binary).
    """
    def __init__(self, record_index, reason, path=None):
        self.record_index = record_index
        self.reason = reason
        self.path = path
        if record_index is None:
            message = reason
        else:
            message = f"{reason} at record {record_index}"
        if path is not None:
            message = f"{message} ({path})"
        super().__init__(message)


class DimensionMismatchError(DataError):
    """Raised when two embedding sources that must agree on dimension do not."""
    def __init__(self, expected, actual, context, message=None):
        self.expected = expected
        self.actual = actual
        self.context = context
        if message is None:
            message = f"dimension mismatch in {context}: expected {expected}, got {actual}"
        super().__init__(message)


class InsufficientDataError(DataError):
    """Raised when a corpus cannot satisfy a protocol (too few speakers, shots or classes)."""
    def __init__(self, reason):
        self.reason = reason
        super().__init__(reason)


class EvaluationError(DataError):
    """Raised for empty evaluation partitions or malformed curves."""
    def __init__(self, reason):
        self.reason = reason
        super().__init__(reason)


class NumericFailureError(SrplError):
    """
    Raised when training produces a non-finite loss or parameter.
    Training aborts immediately; the epoch index tells where it diverged.
    """
    exit_code = EXIT_NUMERIC

    def __init__(self, epoch, quantity, message=None):
        self.epoch = epoch
        self.quantity = quantity
        if message is None:
            message = f"non-finite {quantity} at epoch {epoch}; lower the learning rate"
        super().__init__(message)
