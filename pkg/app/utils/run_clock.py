"""Run bookkeeping helpers: UTC timestamps, wall-clock timing and file digests.

Timestamps are timezone-aware UTC and serialized in ISO 8601. Timing is kept
out of metric reports so reruns stay byte-identical; it is only written to
run manifests and the ablation cost column.
"""

import hashlib
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable

UTC_TZ = timezone.utc

_DIGEST_CHUNK = 1 << 20


def now() -> datetime:
    """Get the current time as an aware UTC datetime."""
    return datetime.now(UTC_TZ)


def format_datetime(dt: datetime) -> str:
    """Format a datetime as ISO 8601 in UTC (naive datetimes are taken as UTC).

    Args:
        dt: Datetime to format

    Returns:
        str: e.g. '2024-03-01T12:00:00.123456+00:00'
    """
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=UTC_TZ)
    return dt.astimezone(UTC_TZ).isoformat()


class Stopwatch:
    """Monotonic wall-clock timer usable as a context manager."""

    def __init__(self):
        self.started = None
        self.elapsed = 0.0

    def __enter__(self) -> 'Stopwatch':
        self.started = time.perf_counter()
        return self

    def __exit__(self, *exc) -> None:
        self.elapsed = time.perf_counter() - self.started


def file_digest(path) -> str:
    """SHA-256 of a file's bytes, hex encoded."""
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(_DIGEST_CHUNK), b''):
            digest.update(chunk)
    return digest.hexdigest()


def digests(paths: Iterable) -> Dict[str, str]:
    """Digest every existing file among `paths`, keyed by its string path."""
    return {str(p): file_digest(p) for p in paths if p is not None and Path(p).is_file()}
