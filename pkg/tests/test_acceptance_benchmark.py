"""
Statistical checks on the default synthetic benchmark, averaged over five
seeds of five folds each. Slow; run with `pytest --run-slow`.
"""
import statistics
import warnings

import pytest

from app.core.run_config import BenchSettings, NegativeSettings
from app.core.status import (
    MODE_SOFTMAX, MODE_SRPL, MODE_SRPL_PLUS, NEGATIVES_SYNTHETIC, VARIANT_NO_CENTER_FOCUS,
    VARIANT_NO_SYN_CENTERS, VARIANT_SRPL, VARIANT_SRPL_PLUS
)
from app.db.models import TrainConfig
from app.services import pipeline_service
from app.services.benchmark_service import generate
from app.services.evaluation_service import mean_report
from app.services.fold_service import make_folds

pytestmark = pytest.mark.slow

SEEDS = range(5)
SOFTMAX_BAND = (0.70, 0.90)
NEGATIVE_MARGIN = 0.01


@pytest.fixture(scope='module')
def benches():
    settings = BenchSettings()
    assert settings.folds == 5
    built = []
    for seed in SEEDS:
        corpus = generate(settings.cluster_spec(seed))
        splits = make_folds(corpus, settings.folds, settings.targets, settings.outliers, settings.shots, seed=seed)
        pool = pipeline_service.build_negative_pool(NegativeSettings(NEGATIVES_SYNTHETIC), settings,
                                                    corpus.dimension, seed)
        built.append((seed, corpus, splits, pool))
    return built


@pytest.fixture(scope='module')
def system_oscr(benches):
    """Fold-mean OSCR per seed and mode."""
    per_seed = {}
    for seed, corpus, splits, pool in benches:
        results = pipeline_service.run_bench(corpus, splits, [MODE_SOFTMAX, MODE_SRPL, MODE_SRPL_PLUS],
                                             TrainConfig(seed=seed), NEGATIVES_SYNTHETIC, pool)
        per_seed[seed] = {mode: mean_report(reports).oscr for mode, reports in results.items()}
    return per_seed


@pytest.fixture(scope='module')
def ablation_oscr(benches):
    """Fold-mean OSCR per seed and ablation variant."""
    per_seed = {}
    for seed, corpus, splits, pool in benches:
        rows = pipeline_service.run_ablation(corpus, splits, TrainConfig(seed=seed), NEGATIVES_SYNTHETIC, pool)
        per_seed[seed] = {row['key']: row['oscr'] for row in rows}
    return per_seed


def _mean(per_seed, key):
    return statistics.fmean(values[key] for values in per_seed.values())


def _report_inversions(per_seed, better, worse):
    for seed, values in per_seed.items():
        if values[better] < values[worse]:
            warnings.warn(f"seed {seed}: OSCR {better}={values[better]:.4f} < {worse}={values[worse]:.4f}")


def test_softmax_baseline_lands_in_band(system_oscr):
    low, high = SOFTMAX_BAND
    assert low <= _mean(system_oscr, MODE_SOFTMAX) <= high


def test_srpl_beats_softmax(system_oscr):
    assert _mean(system_oscr, MODE_SRPL) >= _mean(system_oscr, MODE_SOFTMAX)


def test_negatives_improve_srpl(system_oscr):
    assert _mean(system_oscr, MODE_SRPL_PLUS) >= _mean(system_oscr, MODE_SRPL) + NEGATIVE_MARGIN


def test_center_focus_does_not_hurt(ablation_oscr):
    _report_inversions(ablation_oscr, VARIANT_SRPL, VARIANT_NO_CENTER_FOCUS)
    assert _mean(ablation_oscr, VARIANT_SRPL) >= _mean(ablation_oscr, VARIANT_NO_CENTER_FOCUS)


def test_syn_centers_do_not_hurt(ablation_oscr):
    _report_inversions(ablation_oscr, VARIANT_SRPL_PLUS, VARIANT_NO_SYN_CENTERS)
    assert _mean(ablation_oscr, VARIANT_SRPL_PLUS) >= _mean(ablation_oscr, VARIANT_NO_SYN_CENTERS)
