"""Shared fixtures for the SRPL test suite."""
from pathlib import Path

import numpy as np
import pytest

from app.db.models import ClusterSpec, Hyperparameters, TrainConfig
from app.services.benchmark_service import generate
from app.services.fold_service import make_folds

FIXTURES = Path(__file__).parent / 'fixtures'


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False,
                     help="run the statistical benchmark tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason="statistical benchmark, run with --run-slow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def ten_speakers_path():
    return FIXTURES / 'ten_speakers.jsonl'


@pytest.fixture(scope='session')
def small_corpus():
    """12 speakers x 10 utterances in 6 dimensions, well separated."""
    return generate(ClusterSpec(12, 10, 6, 0.15, 1.0, seed=3))


@pytest.fixture(scope='session')
def small_split(small_corpus):
    return make_folds(small_corpus, n_folds=2, n_targets=4, n_outliers=4, shots=5, seed=11)[0]


@pytest.fixture
def quick_config():
    def build(mode='srpl', epochs=15, seed=5, **hyper):
        return TrainConfig(hyper=Hyperparameters(epochs=epochs, **hyper), mode=mode, seed=seed)
    return build
