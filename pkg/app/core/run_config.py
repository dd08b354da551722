"""
Run configuration files

A run config is a TOML file with up to four tables; every key is optional
and documented in docs/config_reference.md:

    [train]            TrainConfig fields (mode, seed, adapter_dims, ...)
    [hyperparameters]  Hyperparameters fields (lambda_r, learning_rate, ...)
    [benchmark]        synthetic corpus and fold protocol for bench/ablate
    [negatives]        negative pool source for SRPL+

Unknown tables or keys are usage errors. Command-line flags override file values.
"""
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from app.core.exceptions import UsageError
from app.core.status import (
    MODE_COSINE, MODE_PROTOTYPE, MODE_SOFTMAX, MODE_SRPL, MODE_SRPL_PLUS,
    NEGATIVE_SOURCES, NEGATIVES_SYNTHETIC, TRAIN_MODES
)
from app.db.models import ClusterSpec, Hyperparameters, TrainConfig
from settings import Config

logger = logging.getLogger(__name__)

DEFAULT_BENCH_MODES = (MODE_COSINE, MODE_SOFTMAX, MODE_PROTOTYPE, MODE_SRPL, MODE_SRPL_PLUS)


@dataclass
class BenchSettings:
    """Synthetic corpus layout and the k-fold open-set protocol."""
    dim: int = Config.BENCH_DIM
    speakers: int = Config.BENCH_SPEAKERS
    utterances: int = Config.BENCH_UTTERANCES
    within_spread: float = Config.BENCH_WITHIN_SPREAD
    between_spread: float = Config.BENCH_BETWEEN_SPREAD
    targets: int = Config.BENCH_TARGETS
    outliers: int = Config.BENCH_OUTLIERS
    shots: int = Config.BENCH_SHOTS
    folds: int = Config.BENCH_FOLDS
    modes: Tuple[str, ...] = DEFAULT_BENCH_MODES

    def __post_init__(self):
        self.modes = tuple(self.modes)
        unknown = [m for m in self.modes if m not in TRAIN_MODES]
        if unknown:
            raise UsageError(f"unknown mode(s) {unknown}, expected a subset of {sorted(TRAIN_MODES)}")
        if not self.modes:
            raise UsageError("benchmark needs at least one mode")

    def cluster_spec(self, seed: int) -> ClusterSpec:
        return ClusterSpec(self.speakers, self.utterances, self.dim, self.within_spread,
                           self.between_spread, seed)


@dataclass
class NegativeSettings:
    """Where the SRPL+ negative pool comes from."""
    source: str = NEGATIVES_SYNTHETIC
    speakers: int = Config.BENCH_NEGATIVE_SPEAKERS
    utterances: int = Config.BENCH_NEGATIVE_UTTERANCES
    path: Optional[str] = None

    def __post_init__(self):
        if self.source not in NEGATIVE_SOURCES:
            raise UsageError(f"unknown negative source '{self.source}', expected one of {sorted(NEGATIVE_SOURCES)}")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchSettings = field(default_factory=BenchSettings)
    negatives: NegativeSettings = field(default_factory=NegativeSettings)


_SECTIONS = ('train', 'hyperparameters', 'benchmark', 'negatives')


def _build(cls, values: Dict[str, Any], section: str, exclude=()):
    allowed = {f.name for f in fields(cls) if f.init and f.name not in exclude}
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise UsageError(f"unknown key(s) {unknown} in [{section}]")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid value in [{section}]: {e}") from e


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    """Build a RunConfig from already-parsed TOML tables."""
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise UsageError(f"unknown config table(s) {unknown}, expected {list(_SECTIONS)}")
    for section in _SECTIONS:
        if not isinstance(data.get(section, {}), dict):
            raise UsageError(f"[{section}] must be a table")

    hyper_values = dict(data.get('hyperparameters', {}))
    # TOML has no null; batch_size = 0 means full batch
    if hyper_values.get('batch_size') == 0:
        hyper_values['batch_size'] = None
    hyper = _build(Hyperparameters, hyper_values, 'hyperparameters')
    train_values = dict(data.get('train', {}))
    train_values.setdefault('seed', Config.DEFAULT_SEED)
    train = _build(TrainConfig, train_values, 'train', exclude=('hyper',))
    train = replace(train, hyper=hyper)
    bench = _build(BenchSettings, dict(data.get('benchmark', {})), 'benchmark')
    negatives = _build(NegativeSettings, dict(data.get('negatives', {})), 'negatives')
    return RunConfig(train, bench, negatives)


def load_run_config(path=None) -> RunConfig:
    """
    Load a TOML run config.

    Args:
        path: Config file, or None for all defaults

    Returns:
        RunConfig

    Raises:
        UsageError: Missing file, TOML syntax error, unknown key or invalid value
    """
    if path is None:
        return RunConfig(train=TrainConfig(seed=Config.DEFAULT_SEED))
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path, 'rb') as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"invalid TOML in {path}: {e}") from e
    config = parse_run_config(data)
    logger.debug(f"Loaded run config from {path}")
    return config
