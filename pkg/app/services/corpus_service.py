"""
Corpus Service

Loads, validates and saves embedding corpora and negative pools.

Validation rules (each failure names the offending record index):
- every vector has the corpus dimension D (the binary header value, else
  inferred from record 0), D >= 2
- every entry is finite
- (speaker, utterance) pairs are unique
- tags, when present, are one of the known record tags
"""
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from app.core.exceptions import CorpusFormatError, DimensionMismatchError, UsageError
from app.core.status import RECORD_TAGS, TAG_ENROLL, TAG_NEGATIVE
from app.db import codecs
from app.db.models import Corpus, EmbeddingRecord

logger = logging.getLogger(__name__)

FORMAT_JSONL = 'jsonl'
FORMAT_BINARY = 'bin'

CORPUS_FORMATS = {
    FORMAT_JSONL: 'JSON lines',
    FORMAT_BINARY: 'SRPLEMB1 binary'
}

_BINARY_ALIASES = {'bin', 'binary'}


def resolve_format(path, file_format: Optional[str] = None) -> str:
    """
    Pick the corpus format from an explicit name or the file extension.

    Args:
        path: Corpus file path
        file_format: 'jsonl', 'bin'/'binary' or None to infer from the suffix

    Returns:
        One of FORMAT_JSONL, FORMAT_BINARY
    """
    if file_format is None:
        suffix = Path(path).suffix.lower().lstrip('.')
        return FORMAT_BINARY if suffix in _BINARY_ALIASES else FORMAT_JSONL
    name = file_format.lower()
    if name in _BINARY_ALIASES:
        return FORMAT_BINARY
    if name == FORMAT_JSONL:
        return FORMAT_JSONL
    raise UsageError(f"unknown corpus format '{file_format}', expected jsonl or bin")


def _decode(path: Path, fmt: str):
    """Raw record iterator plus the dimension the file declares (binary only)."""
    if fmt == FORMAT_BINARY:
        dimension, _ = codecs.read_binary_header(path)
        return codecs.iter_binary(path), dimension
    return codecs.iter_jsonl(path), None


def validate_records(raw_records: Iterable, default_tag: str, path=None,
                     forced_tag: Optional[str] = None,
                     dimension: Optional[int] = None) -> Corpus:
    """
    Validate decoded records and assemble a Corpus.

    Args:
        raw_records: Iterable of (speaker, utt, vector, tag) tuples
        default_tag: Tag for records that carry none
        path: Source path, used in error messages
        forced_tag: If set, overrides every record's tag
        dimension: Declared dimension (binary header); inferred from record 0 when None

    Returns:
        Validated Corpus (dimension 0 when empty and undeclared)

    Raises:
        CorpusFormatError: On the first invalid record
    """
    records: List[EmbeddingRecord] = []
    seen = set()
    for index, (speaker, utt, vector, tag) in enumerate(raw_records):
        if vector.ndim != 1:
            raise CorpusFormatError(index, "malformed record: vector must be flat", path)
        if dimension is None:
            dimension = vector.shape[0]
        if index == 0 and dimension < 2:
            raise CorpusFormatError(index, f"dimension must be >= 2, got {dimension}", path)
        if vector.shape[0] != dimension:
            raise CorpusFormatError(
                index, f"dimension mismatch: expected {dimension}, got {vector.shape[0]}", path
            )
        if not np.all(np.isfinite(vector)):
            raise CorpusFormatError(index, "non-finite entry", path)
        key = (speaker, utt)
        if key in seen:
            raise CorpusFormatError(index, f"duplicate (speaker, utterance) pair {key}", path)
        seen.add(key)
        if forced_tag is not None:
            tag = forced_tag
        elif tag is None:
            tag = default_tag
        elif tag not in RECORD_TAGS:
            raise CorpusFormatError(index, f"malformed record: unknown tag '{tag}'", path)
        vector = np.array(vector, dtype=np.float64)
        vector.setflags(write=False)
        records.append(EmbeddingRecord(speaker, utt, vector, tag))
    return Corpus(records, dimension or 0)


def load_corpus(path, file_format: Optional[str] = None) -> Corpus:
    """
    Load and validate a labeled embedding corpus.

    Args:
        path: JSONL or binary corpus file
        file_format: Explicit format, inferred from the suffix when None

    Returns:
        Validated Corpus with dimension inferred from the first record
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusFormatError(None, f"corpus file not found: {path}")
    fmt = resolve_format(path, file_format)
    raw, declared = _decode(path, fmt)
    try:
        corpus = validate_records(raw, TAG_ENROLL, path, dimension=declared)
    except CorpusFormatError as e:
        logger.warning(f"Rejected corpus {path}: {e}")
        raise
    logger.info(
        f"Loaded {len(corpus)} records of dimension {corpus.dimension} "
        f"from {path} ({len(corpus.speakers())} speakers)"
    )
    return corpus


def load_negatives(path, file_format: Optional[str] = None) -> List[EmbeddingRecord]:
    """
    Load a negative pool. Tags are forced to 'negative'; speaker labels are
    kept as pseudo-speaker identities. An empty file yields an empty pool.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusFormatError(None, f"negative file not found: {path}")
    fmt = resolve_format(path, file_format)
    raw, declared = _decode(path, fmt)
    pool = validate_records(raw, TAG_NEGATIVE, path, forced_tag=TAG_NEGATIVE, dimension=declared).records
    logger.info(f"Loaded {len(pool)} negative records from {path}")
    return pool


def save_corpus(records: Sequence[EmbeddingRecord], path, file_format: Optional[str] = None,
                dimension: Optional[int] = None) -> Path:
    """
    Write records in JSONL or binary form.

    Binary vectors are stored as f32, so only f32-representable corpora
    round-trip bit-exactly through it; JSONL round-trips any float64.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = list(records)
    if dimension is None:
        dimension = records[0].vector.shape[0] if records else 0
    fmt = resolve_format(path, file_format)
    if fmt == FORMAT_BINARY:
        codecs.write_binary(path, records, dimension)
    else:
        codecs.write_jsonl(path, records)
    logger.info(f"Wrote {len(records)} records to {path} ({fmt})")
    return path


def check_dimension(expected: int, records: Sequence[EmbeddingRecord], context: str) -> None:
    """Raise DimensionMismatchError if any record's vector is not `expected` long."""
    for record in records:
        if record.vector.shape[0] != expected:
            raise DimensionMismatchError(expected, record.vector.shape[0], context)


def stack_vectors(records: Sequence[EmbeddingRecord], dimension: int) -> np.ndarray:
    if not records:
        return np.zeros((0, dimension))
    return np.vstack([r.vector for r in records])


def records_for_speakers(corpus: Corpus, speakers: Iterable[str], tag: Optional[str] = None) -> List[EmbeddingRecord]:
    """Records of the given speakers, in corpus order, optionally re-tagged."""
    wanted = set(speakers)
    selected = [r for r in corpus.records if r.speaker_id in wanted]
    if tag is None:
        return selected
    return [EmbeddingRecord(r.speaker_id, r.utterance_id, r.vector, tag) for r in selected]
