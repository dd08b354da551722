"""
Benchmark Service - synthetic speaker-embedding corpora

Each speaker is a spherical Gaussian: its center is drawn uniformly on the
sphere of radius `between_spread`, its utterances are center + N(0, within_spread^2)
per coordinate. Coordinates are rounded to float32 so the corpus round-trips
bit-exactly through both file formats.
"""
import logging
from typing import List, Tuple

import numpy as np

from app.core.exceptions import UsageError
from app.core.status import TAG_ENROLL, TAG_NEGATIVE
from app.db.models import ClusterSpec, Corpus, EmbeddingRecord

logger = logging.getLogger(__name__)

# Negative pools draw from a separate stream so they never replay a corpus with the same seed
NEGATIVE_STREAM = 1


def validate_spec(spec: ClusterSpec, allow_empty: bool = False) -> None:
    min_speakers = 0 if allow_empty else 1
    if spec.n_speakers < min_speakers:
        raise UsageError(f"n_speakers must be >= {min_speakers}, got {spec.n_speakers}")
    if spec.utterances_per_speaker < 1:
        raise UsageError(f"utterances_per_speaker must be >= 1, got {spec.utterances_per_speaker}")
    if spec.dim < 2:
        raise UsageError(f"dim must be >= 2, got {spec.dim}")
    if not spec.within_spread >= 0:
        raise UsageError(f"within_spread must be >= 0, got {spec.within_spread}")
    if not spec.between_spread > 0:
        raise UsageError(f"between_spread must be > 0, got {spec.between_spread}")


def _clusters(spec: ClusterSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    directions = rng.standard_normal((spec.n_speakers, spec.dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    centers = spec.between_spread * directions / norms
    noise = rng.standard_normal((spec.n_speakers, spec.utterances_per_speaker, spec.dim))
    points = centers[:, np.newaxis, :] + spec.within_spread * noise
    return centers, points.astype(np.float32).astype(np.float64)


def _records(spec: ClusterSpec, points: np.ndarray, tag: str) -> List[EmbeddingRecord]:
    records = []
    for i in range(spec.n_speakers):
        speaker = f"{spec.speaker_prefix}{i:03d}"
        for j in range(spec.utterances_per_speaker):
            vector = points[i, j].copy()
            vector.setflags(write=False)
            records.append(EmbeddingRecord(speaker, f"{speaker}_u{j:03d}", vector, tag))
    return records


def generate_with_centers(spec: ClusterSpec) -> Tuple[Corpus, np.ndarray]:
    """Generate a corpus and return the drawn speaker centers alongside it."""
    validate_spec(spec)
    centers, points = _clusters(spec, np.random.default_rng(spec.seed))
    corpus = Corpus(_records(spec, points, TAG_ENROLL), spec.dim)
    logger.info(
        f"Generated {len(corpus)} embeddings for {spec.n_speakers} speakers (dim {spec.dim}, seed {spec.seed})"
    )
    return corpus, centers


def generate(spec: ClusterSpec) -> Corpus:
    """
    Generate a labeled synthetic corpus.

    Args:
        spec: Cluster layout and seed

    Returns:
        Corpus of n_speakers * utterances_per_speaker records, speakers in id order
    """
    return generate_with_centers(spec)[0]


def generate_negatives(spec: ClusterSpec) -> List[EmbeddingRecord]:
    """
    Generate a negative pool of pseudo-speakers (tag 'negative', speaker ids kept).
    Zero speakers yield an empty pool.
    """
    validate_spec(spec, allow_empty=True)
    if spec.n_speakers == 0:
        return []
    _, points = _clusters(spec, np.random.default_rng([spec.seed, NEGATIVE_STREAM]))
    pool = _records(spec, points, TAG_NEGATIVE)
    logger.info(f"Generated {len(pool)} negatives from {spec.n_speakers} pseudo-speakers")
    return pool
