"""
Pipeline Service - multi-fold benchmark and ablation runs

Each (mode or variant, fold) pair is an independent job: it enrolls on the
fold, evaluates it and returns the report with its tuning time. Jobs run in
a thread pool capped by Config.THREADS and share only the immutable corpus
and negative pool; results are aggregated in job order.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from app.core.exceptions import UsageError
from app.core.status import (
    ABLATION_VARIANTS, MODE_SRPL_PLUS, NEGATIVES_FILE, NEGATIVES_NONE, NEGATIVES_REAL,
    NEGATIVES_SYNTHETIC, TAG_NEGATIVE, get_mode_label, get_negative_source_label,
    get_variant_label
)
from app.core.run_config import BenchSettings, NegativeSettings
from app.db.models import ClusterSpec, Corpus, EmbeddingRecord, LossBreakdown, OpenSetReport, OpenSetSplit, TrainConfig
from app.services import report_service
from app.services.benchmark_service import generate_negatives
from app.services.corpus_service import check_dimension, load_negatives, records_for_speakers
from app.services.evaluation_service import evaluate, mean_report, report_range
from app.services.training_service import enroll
from app.utils.run_clock import Stopwatch
from settings import Config

logger = logging.getLogger(__name__)

NEGATIVE_PREFIX = 'neg'


@dataclass
class FoldOutcome:
    key: str
    fold: int
    report: OpenSetReport
    history: List[LossBreakdown]
    seconds: float


def build_negative_pool(settings: NegativeSettings, bench: BenchSettings, dim: int, seed: int) -> List[EmbeddingRecord]:
    """
    Shared negative pool for SRPL+ runs. RealNeg pools are per fold and
    built by fold_negatives, so they return an empty list here.
    """
    if settings.source == NEGATIVES_SYNTHETIC:
        spec = ClusterSpec(settings.speakers, settings.utterances, dim, bench.within_spread,
                           bench.between_spread, seed, NEGATIVE_PREFIX)
        return generate_negatives(spec)
    if settings.source == NEGATIVES_FILE:
        if not settings.path:
            raise UsageError("negative source 'file' needs a path")
        pool = load_negatives(settings.path)
        check_dimension(dim, pool, 'negative pool vs corpus')
        return pool
    return []


def fold_negatives(source: str, corpus: Corpus, split: OpenSetSplit,
                   pool: Sequence[EmbeddingRecord]) -> List[EmbeddingRecord]:
    """Negatives for one fold: the reserved speakers for RealNeg, else the shared pool."""
    if source == NEGATIVES_REAL:
        return records_for_speakers(corpus, split.reserved_speakers, tag=TAG_NEGATIVE)
    if source == NEGATIVES_NONE:
        return []
    return list(pool)


def run_fold(key: str, corpus: Corpus, split: OpenSetSplit, config: TrainConfig,
             negatives: Sequence[EmbeddingRecord], emit_embeddings: bool = False) -> FoldOutcome:
    with Stopwatch() as watch:
        model, history = enroll(split, corpus, negatives, config)
    report = evaluate(model, split, corpus, emit_embeddings)
    logger.debug(f"{key} fold {split.fold_index}: tuned in {watch.elapsed:.2f}s")
    return FoldOutcome(key, split.fold_index, report, history, watch.elapsed)


def _run_jobs(jobs, threads: Optional[int]) -> List[FoldOutcome]:
    workers = max(1, threads or Config.THREADS)
    logger.info(f"Running {len(jobs)} enrollment jobs on {workers} worker(s)")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(run_fold, *job) for job in jobs]
        return [future.result() for future in futures]


def _write_fold_outputs(out_dir: Path, outcome: FoldOutcome) -> None:
    fold_dir = out_dir / outcome.key / f"fold{outcome.fold}"
    report_service.write_report(outcome.report, fold_dir / 'report.json')
    report_service.write_curve_csv(outcome.report.curve, fold_dir / 'curve.csv')
    if outcome.report.embeddings is not None:
        report_service.write_embeddings_csv(outcome.report.embeddings, fold_dir / 'embeddings.csv')


def _summary(reports: List[OpenSetReport]) -> Dict:
    mean = mean_report(reports)
    ranges = report_range(reports)
    return {
        'mean': {'auc': mean.auc, 'oscr': mean.oscr, 'closed_acc': mean.closed_acc},
        'min': {name: low for name, (low, _) in ranges.items()},
        'max': {name: high for name, (_, high) in ranges.items()},
        'folds': [{'auc': r.auc, 'oscr': r.oscr, 'closed_acc': r.closed_acc} for r in reports]
    }


def mode_label(mode: str, negative_source: str) -> str:
    if mode == MODE_SRPL_PLUS:
        return f"{get_mode_label(mode)} ({get_negative_source_label(negative_source)})"
    return get_mode_label(mode)


def run_bench(corpus: Corpus, splits: Sequence[OpenSetSplit], modes: Sequence[str], base: TrainConfig,
              negative_source: str, pool: Sequence[EmbeddingRecord], out_dir=None,
              threads: Optional[int] = None, emit_embeddings: bool = False) -> Dict[str, List[OpenSetReport]]:
    """
    Run every mode on every fold.

    Args:
        corpus: Evaluation corpus
        splits: Folds from make_folds
        modes: Training modes, in table order
        base: TrainConfig whose mode is replaced per job
        negative_source: One of the NEGATIVE_SOURCES keys (SRPL+ only)
        pool: Shared negative pool (synthetic or file sources)
        out_dir: If set, per-fold reports, summary.json and table.txt are written here
        threads: Worker slots, Config.THREADS when None
        emit_embeddings: Also dump adapted test embeddings per fold

    Returns:
        Mode -> fold reports in fold order
    """
    jobs = []
    for mode in modes:
        config = replace(base, mode=mode)
        for split in splits:
            negatives = fold_negatives(negative_source, corpus, split, pool) if mode == MODE_SRPL_PLUS else []
            jobs.append((mode, corpus, split, config, negatives, emit_embeddings))
    outcomes = _run_jobs(jobs, threads)

    results: Dict[str, List[OpenSetReport]] = {mode: [] for mode in modes}
    for outcome in outcomes:
        results[outcome.key].append(outcome.report)

    if out_dir is not None:
        out_dir = Path(out_dir)
        for outcome in outcomes:
            _write_fold_outputs(out_dir, outcome)
        summary = {mode: _summary(reports) for mode, reports in results.items()}
        report_service.write_json(summary, out_dir / 'summary.json')
        rows = [
            report_service.summary_row(mode_label(mode, negative_source), mean_report(reports), report_range(reports))
            for mode, reports in results.items()
        ]
        n_targets = len(splits[0].target_speakers)
        title = f"Open-set evaluation: {n_targets}-way, {len(splits)} fold(s), mean [min, max]"
        report_service.write_text(report_service.comparison_table(rows, title), out_dir / 'table.txt')
    return results


def variant_config(base: TrainConfig, variant: str) -> TrainConfig:
    """TrainConfig for an ablation variant: its mode plus its hyperparameter overrides."""
    if variant not in ABLATION_VARIANTS:
        raise UsageError(f"unknown ablation variant '{variant}'")
    entry = ABLATION_VARIANTS[variant]
    return replace(base, mode=entry['mode'], hyper=replace(base.hyper, **entry['overrides']))


def run_ablation(corpus: Corpus, splits: Sequence[OpenSetSplit], base: TrainConfig, negative_source: str,
                 pool: Sequence[EmbeddingRecord], out_dir=None, threads: Optional[int] = None) -> List[Dict]:
    """
    Run every ablation variant on the same folds and seed.

    Returns:
        One row per variant in table order: key, label, mean auc/oscr/closed_acc,
        per-fold values and mean tuning seconds per fold
    """
    jobs = []
    for variant in ABLATION_VARIANTS:
        config = variant_config(base, variant)
        for split in splits:
            negatives = fold_negatives(negative_source, corpus, split, pool) if config.mode == MODE_SRPL_PLUS else []
            jobs.append((variant, corpus, split, config, negatives, False))
    outcomes = _run_jobs(jobs, threads)

    rows = []
    for variant in ABLATION_VARIANTS:
        mine = [o for o in outcomes if o.key == variant]
        mean = mean_report([o.report for o in mine])
        rows.append({
            'key': variant,
            'label': get_variant_label(variant),
            'auc': mean.auc,
            'oscr': mean.oscr,
            'closed_acc': mean.closed_acc,
            'folds': [{'auc': o.report.auc, 'oscr': o.report.oscr} for o in mine],
            'seconds': sum(o.seconds for o in mine) / len(mine)
        })

    if out_dir is not None:
        out_dir = Path(out_dir)
        metrics = [{k: v for k, v in row.items() if k != 'seconds'} for row in rows]
        report_service.write_json({'variants': metrics}, out_dir / 'ablation.json')
        title = f"Ablation: {len(splits)} fold(s), tuning cost is mean seconds per fold"
        report_service.write_text(report_service.ablation_table(rows, title), out_dir / 'ablation.txt')
    return rows
