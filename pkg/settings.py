import os
from dotenv import load_dotenv

load_dotenv()


def _default_threads():
    return max(1, min(os.cpu_count() or 1, 8))


class Config:
    THREADS = int(os.environ.get('SRPL_THREADS') or _default_threads())
    LOG_LEVEL = os.environ.get('SRPL_LOG_LEVEL', 'INFO').upper()
    DEFAULT_SEED = int(os.environ.get('SRPL_DEFAULT_SEED', '0'))
    OUTPUT_DIR = os.environ.get('SRPL_OUTPUT_DIR', 'runs')

    LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

    # Default benchmark mirrors the 10 target / 15 outlier protocol at reduced dimension
    BENCH_DIM = 32
    BENCH_SPEAKERS = 50
    BENCH_UTTERANCES = 30
    BENCH_TARGETS = 10
    BENCH_OUTLIERS = 15
    BENCH_SHOTS = 20
    BENCH_FOLDS = 5
    BENCH_WITHIN_SPREAD = 0.2
    BENCH_BETWEEN_SPREAD = 1.0
    BENCH_NEGATIVE_SPEAKERS = 10
    BENCH_NEGATIVE_UTTERANCES = 100
