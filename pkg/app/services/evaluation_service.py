"""
Evaluation Service - threshold-free open-set metrics

    CCR(TH) = |{target x : prediction correct and confidence >= TH}| / |targets|
    FPR(TH) = |{outlier x : confidence >= TH}| / |outliers|

The threshold sweep is every distinct observed confidence plus the sentinels
min - 1 and max + 1. OSCR is the trapezoidal area of CCR over FPR after
collapsing duplicate FPR values to their maximum CCR. AUC is the
Mann-Whitney statistic with ties counted as 0.5.

The *_pairwise / *_bruteforce functions are slow reference implementations
kept for testing the fast paths.
"""
import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from app.core.exceptions import DataError, DimensionMismatchError, EvaluationError
from app.core.status import TAG_TEST_OUTLIER, TAG_TEST_TARGET
from app.db.models import OUTLIER, Corpus, EnrolledModel, OpenSetReport, OpenSetSplit, ScoredUtterance
from app.services.corpus_service import stack_vectors
from app.services.fold_service import check_split_against_corpus
from app.services.training_service import adapted_embeddings, predict_batch

logger = logging.getLogger(__name__)

CurvePoint = Tuple[float, float, float]


def _confidences(values, side: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64).ravel()
    if array.size == 0:
        raise EvaluationError(f"no {side} utterances")
    if not np.all(np.isfinite(array)):
        raise EvaluationError(f"non-finite {side} confidence")
    return array


def _split_scored(targets: Sequence[ScoredUtterance], outliers: Sequence[ScoredUtterance]):
    if not targets:
        raise EvaluationError("no target utterances")
    if not outliers:
        raise EvaluationError("no outlier utterances")
    if not all(s.is_target for s in targets):
        raise EvaluationError("target list contains an outlier utterance")
    if any(s.is_target for s in outliers):
        raise EvaluationError("outlier list contains a target utterance")
    target_conf = _confidences([s.confidence for s in targets], 'target')
    correct = np.array([s.is_correct for s in targets], dtype=bool)
    outlier_conf = _confidences([s.confidence for s in outliers], 'outlier')
    return target_conf, correct, outlier_conf


def closed_accuracy(scored: Sequence[ScoredUtterance]) -> float:
    """Fraction of target utterances whose predicted class is right; outliers are ignored."""
    targets = [s for s in scored if s.is_target]
    if not targets:
        raise EvaluationError("no target utterances")
    return sum(1 for s in targets if s.is_correct) / len(targets)


def auc(target_conf, outlier_conf) -> float:
    """
    Probability that a random target outscores a random outlier.

    Args:
        target_conf: Confidences of target utterances
        outlier_conf: Confidences of outlier utterances

    Returns:
        Mann-Whitney U / (n_targets * n_outliers), ties counting one half
    """
    t = _confidences(target_conf, 'target')
    o = _confidences(outlier_conf, 'outlier')
    ranks = rankdata(np.concatenate([t, o]), method='average')
    u_stat = ranks[:t.size].sum() - t.size * (t.size + 1) / 2.0
    return float(u_stat / (t.size * o.size))


def auc_pairwise(target_conf, outlier_conf) -> float:
    """O(n^2) reference AUC."""
    t = _confidences(target_conf, 'target')
    o = _confidences(outlier_conf, 'outlier')
    greater = int(np.sum(t[:, np.newaxis] > o[np.newaxis, :]))
    ties = int(np.sum(t[:, np.newaxis] == o[np.newaxis, :]))
    return float((greater + 0.5 * ties) / (t.size * o.size))


def _thresholds(target_conf: np.ndarray, outlier_conf: np.ndarray) -> np.ndarray:
    observed = np.unique(np.concatenate([target_conf, outlier_conf]))
    return np.concatenate([[observed[0] - 1.0], observed, [observed[-1] + 1.0]])


def ccr_fpr_curve(targets: Sequence[ScoredUtterance], outliers: Sequence[ScoredUtterance]) -> List[CurvePoint]:
    """
    CCR and FPR at every threshold of the sweep, ascending in TH.

    Raises:
        EvaluationError: Either side empty or mislabeled
    """
    target_conf, correct, outlier_conf = _split_scored(targets, outliers)
    thresholds = _thresholds(target_conf, outlier_conf)
    correct_sorted = np.sort(target_conf[correct])
    outlier_sorted = np.sort(outlier_conf)
    accepted_correct = correct_sorted.size - np.searchsorted(correct_sorted, thresholds, side='left')
    accepted_outliers = outlier_sorted.size - np.searchsorted(outlier_sorted, thresholds, side='left')
    ccr = accepted_correct / target_conf.size
    fpr = accepted_outliers / outlier_conf.size
    return [(float(th), float(c), float(f)) for th, c, f in zip(thresholds, ccr, fpr)]


def _collapse_by_fpr(points) -> Tuple[List[float], List[float]]:
    best: Dict[float, float] = {}
    for fpr, ccr in points:
        best[fpr] = max(ccr, best.get(fpr, -math.inf))
    fprs = sorted(best)
    return fprs, [best[f] for f in fprs]


def oscr(curve: Sequence[CurvePoint]) -> float:
    """
    Area under CCR as a function of FPR (trapezoidal, exactly rounded sum).

    Raises:
        EvaluationError: Empty curve, or a point that is not a finite (TH, CCR, FPR) triple in range
    """
    if not curve:
        raise EvaluationError("malformed curve: no points")
    points = []
    for point in curve:
        if len(point) != 3 or not all(math.isfinite(v) for v in point):
            raise EvaluationError(f"malformed curve point {point}")
        _, ccr, fpr = point
        if not (0.0 <= ccr <= 1.0 and 0.0 <= fpr <= 1.0):
            raise EvaluationError(f"malformed curve point {point}: rates must lie in [0, 1]")
        points.append((fpr, ccr))
    fprs, ccrs = _collapse_by_fpr(points)
    areas = [(fprs[i + 1] - fprs[i]) * (ccrs[i] + ccrs[i + 1]) / 2.0 for i in range(len(fprs) - 1)]
    return math.fsum(areas)


def oscr_bruteforce(targets: Sequence[ScoredUtterance], outliers: Sequence[ScoredUtterance]) -> float:
    """Reference OSCR: count acceptances directly at every threshold."""
    target_conf, correct, outlier_conf = _split_scored(targets, outliers)
    points = []
    for th in _thresholds(target_conf, outlier_conf):
        ccr = np.count_nonzero(correct & (target_conf >= th)) / target_conf.size
        fpr = np.count_nonzero(outlier_conf >= th) / outlier_conf.size
        points.append((float(fpr), float(ccr)))
    fprs, ccrs = _collapse_by_fpr(points)
    area = 0.0
    for i in range(1, len(fprs)):
        area += (fprs[i] - fprs[i - 1]) * (ccrs[i] + ccrs[i - 1]) / 2.0
    return area


def score_records(model: EnrolledModel, X: np.ndarray, true_classes: Sequence[int]) -> List[ScoredUtterance]:
    _, best, confidence = predict_batch(model, X)
    return [
        ScoredUtterance(float(c), int(b), int(t))
        for c, b, t in zip(confidence, best, true_classes)
    ]


def _embedding_frame(model: EnrolledModel, records, X: np.ndarray, tag: str) -> pd.DataFrame:
    E = adapted_embeddings(model, X)
    frame = pd.DataFrame(E, columns=[f"e{i}" for i in range(E.shape[1])])
    frame.insert(0, 'tag', [tag] * len(records))
    frame.insert(0, 'utt', [r.utterance_id for r in records])
    frame.insert(0, 'speaker', [r.speaker_id for r in records])
    return frame


def evaluate(model: EnrolledModel, split: OpenSetSplit, corpus: Corpus, emit_embeddings: bool = False) -> OpenSetReport:
    """
    Score every test record of a split and compute the open-set report.

    Args:
        model: Enrolled model
        split: Fold with test_target and test_outlier records
        corpus: Corpus the split indexes
        emit_embeddings: Attach adapted test embeddings to report.embeddings

    Returns:
        OpenSetReport
    """
    if corpus.dimension != model.input_dim:
        raise DimensionMismatchError(model.input_dim, corpus.dimension, 'model vs evaluation corpus')
    if not split.test_target_records:
        raise EvaluationError(f"split fold {split.fold_index} has no test_target records")
    if not split.test_outlier_records:
        raise EvaluationError(f"split fold {split.fold_index} has no test_outlier records")
    check_split_against_corpus(split, corpus)

    index = {speaker: k for k, speaker in enumerate(model.speaker_ids)}
    target_records = [corpus.records[i] for i in split.test_target_records]
    outlier_records = [corpus.records[i] for i in split.test_outlier_records]
    try:
        target_classes = [index[r.speaker_id] for r in target_records]
    except KeyError as e:
        raise DataError(f"test target speaker {e.args[0]} is not enrolled in this model") from e

    target_X = stack_vectors(target_records, corpus.dimension)
    outlier_X = stack_vectors(outlier_records, corpus.dimension)
    targets = score_records(model, target_X, target_classes)
    outliers = score_records(model, outlier_X, [OUTLIER] * len(outlier_records))

    curve = ccr_fpr_curve(targets, outliers)
    report = OpenSetReport(
        auc=auc([s.confidence for s in targets], [s.confidence for s in outliers]),
        oscr=oscr(curve),
        closed_acc=closed_accuracy(targets),
        curve=curve
    )
    if emit_embeddings:
        report.embeddings = pd.concat([
            _embedding_frame(model, target_records, target_X, TAG_TEST_TARGET),
            _embedding_frame(model, outlier_records, outlier_X, TAG_TEST_OUTLIER)
        ], ignore_index=True)
    logger.info(
        f"Fold {split.fold_index}: AUC={report.auc:.4f} OSCR={report.oscr:.4f} ACC={report.closed_acc:.4f}"
    )
    return report


def mean_report(reports: Sequence[OpenSetReport]) -> OpenSetReport:
    """Per-metric mean across folds (no curve)."""
    if not reports:
        raise EvaluationError("no reports to average")
    n = len(reports)
    return OpenSetReport(
        auc=math.fsum(r.auc for r in reports) / n,
        oscr=math.fsum(r.oscr for r in reports) / n,
        closed_acc=math.fsum(r.closed_acc for r in reports) / n
    )


def report_range(reports: Sequence[OpenSetReport]) -> Dict[str, Tuple[float, float]]:
    """(min, max) of each metric across folds."""
    if not reports:
        raise EvaluationError("no reports to summarize")
    return {
        name: (min(getattr(r, name) for r in reports), max(getattr(r, name) for r in reports))
        for name in ('auc', 'oscr', 'closed_acc')
    }
