"""
Fold Service - k-fold open-set enrollment/test splits

Speakers are shuffled once by seed. Fold f takes a window of
(n_targets + n_outliers) speakers starting at f * (n_targets + n_outliers),
wrapping modulo the speaker count: the first n_targets are targets, the
rest outliers, everyone else is reserved (the real-negative pool).
Within each target speaker exactly `shots` utterances are enrolled and the
remainder goes to test_target.
"""
import json
import logging
from pathlib import Path
from typing import List

import numpy as np

from app.core.exceptions import DataError, InsufficientDataError, UsageError
from app.db.models import Corpus, OpenSetSplit

logger = logging.getLogger(__name__)


def make_folds(corpus: Corpus, n_folds: int, n_targets: int, n_outliers: int,
               shots: int, seed: int) -> List[OpenSetSplit]:
    """
    Generate the open-set splits for a corpus.

    Args:
        corpus: Labeled embedding corpus
        n_folds: Number of splits to produce
        n_targets: Target (enrolled) speakers per fold
        n_outliers: Outlier test speakers per fold
        shots: Enrollment utterances per target speaker
        seed: Shuffle seed; identical seeds give identical splits

    Returns:
        List of OpenSetSplit, one per fold

    Raises:
        InsufficientDataError: Too few speakers, or a target with <= shots utterances
    """
    if n_folds < 1 or n_targets < 1 or n_outliers < 0 or shots < 1:
        raise UsageError(
            f"invalid fold protocol: folds={n_folds} targets={n_targets} "
            f"outliers={n_outliers} shots={shots}"
        )
    by_speaker = corpus.indices_by_speaker()
    speakers = sorted(by_speaker)
    window = n_targets + n_outliers
    if len(speakers) < window:
        raise InsufficientDataError(
            f"insufficient speakers: need {window} (targets + outliers), corpus has {len(speakers)}"
        )

    order = np.random.default_rng(seed).permutation(len(speakers))
    shuffled = [speakers[i] for i in order]

    splits = []
    for fold in range(n_folds):
        start = (fold * window) % len(shuffled)
        chosen = [shuffled[(start + j) % len(shuffled)] for j in range(window)]
        targets = chosen[:n_targets]
        outliers = chosen[n_targets:]
        taken = set(chosen)
        reserved = [s for s in shuffled if s not in taken]

        fold_rng = np.random.default_rng([seed, fold])
        enroll, test_target = [], []
        for speaker in sorted(targets):
            utterances = by_speaker[speaker]
            if len(utterances) < shots + 1:
                raise InsufficientDataError(
                    f"insufficient utterances for target speaker {speaker}: "
                    f"need {shots + 1}, have {len(utterances)}"
                )
            picked = fold_rng.permutation(len(utterances))
            enroll.extend(utterances[i] for i in picked[:shots])
            test_target.extend(utterances[i] for i in picked[shots:])

        test_outlier = [i for s in sorted(outliers) for i in by_speaker[s]]
        splits.append(OpenSetSplit(
            fold_index=fold,
            target_speakers=tuple(sorted(targets)),
            outlier_speakers=tuple(sorted(outliers)),
            reserved_speakers=tuple(sorted(reserved)),
            enroll_records=tuple(sorted(enroll)),
            test_target_records=tuple(sorted(test_target)),
            test_outlier_records=tuple(sorted(test_outlier))
        ))
        logger.debug(
            f"Fold {fold}: {len(targets)} targets, {len(outliers)} outliers, "
            f"{len(reserved)} reserved, {len(enroll)} enrollment utterances"
        )
    logger.info(f"Generated {n_folds} folds over {len(speakers)} speakers (seed {seed})")
    return splits


def save_splits(splits: List[OpenSetSplit], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {'folds': [split.to_dict() for split in splits]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def load_splits(path) -> List[OpenSetSplit]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"split file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding='utf-8'))
        return [OpenSetSplit.from_dict(entry) for entry in payload['folds']]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed split file {path}: {e}") from e


def check_split_against_corpus(split: OpenSetSplit, corpus: Corpus) -> None:
    """Ensure every record index of the split exists in the corpus."""
    n = len(corpus)
    for name in ('enroll_records', 'test_target_records', 'test_outlier_records'):
        indices = getattr(split, name)
        if indices and (min(indices) < 0 or max(indices) >= n):
            raise DataError(f"split fold {split.fold_index} {name} does not index this corpus ({n} records)")
