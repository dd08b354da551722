"""Multi-fold benchmark and ablation runs."""
import json

import pytest

from app.core.exceptions import UsageError
from app.core.run_config import BenchSettings, NegativeSettings
from app.core.status import (
    ABLATION_VARIANTS, METRIC_EUCLIDEAN, MODE_COSINE, MODE_SRPL, MODE_SRPL_PLUS, NEGATIVES_FILE,
    NEGATIVES_NONE, NEGATIVES_REAL, NEGATIVES_SYNTHETIC, TAG_NEGATIVE, VARIANT_NO_TASK_OPTIMIZE
)
from app.db.models import Hyperparameters, TrainConfig
from app.services import pipeline_service
from app.services.fold_service import make_folds


@pytest.fixture(scope='module')
def splits(small_corpus):
    return make_folds(small_corpus, n_folds=2, n_targets=4, n_outliers=4, shots=5, seed=11)


@pytest.fixture
def base():
    return TrainConfig(hyper=Hyperparameters(epochs=3), seed=1)


class TestNegativePools:

    def test_synthetic_pool(self):
        settings = NegativeSettings(NEGATIVES_SYNTHETIC, speakers=3, utterances=4)
        pool = pipeline_service.build_negative_pool(settings, BenchSettings(), dim=6, seed=0)
        assert len(pool) == 12
        assert pool[0].speaker_id.startswith(pipeline_service.NEGATIVE_PREFIX)
        assert pool[0].vector.shape == (6,)

    def test_file_source_needs_path(self):
        with pytest.raises(UsageError):
            pipeline_service.build_negative_pool(NegativeSettings(NEGATIVES_FILE), BenchSettings(), 6, 0)

    @pytest.mark.parametrize('source', [NEGATIVES_REAL, NEGATIVES_NONE])
    def test_per_fold_sources_have_no_shared_pool(self, source):
        assert pipeline_service.build_negative_pool(NegativeSettings(source), BenchSettings(), 6, 0) == []

    def test_real_negatives_are_reserved_speakers(self, small_corpus, splits):
        negatives = pipeline_service.fold_negatives(NEGATIVES_REAL, small_corpus, splits[0], [])
        assert {r.speaker_id for r in negatives} == set(splits[0].reserved_speakers)
        assert all(r.tag == TAG_NEGATIVE for r in negatives)

    def test_none_and_shared_sources(self, small_corpus, splits):
        pool = pipeline_service.build_negative_pool(
            NegativeSettings(NEGATIVES_SYNTHETIC, speakers=2, utterances=3), BenchSettings(), 6, 0
        )
        assert pipeline_service.fold_negatives(NEGATIVES_NONE, small_corpus, splits[0], pool) == []
        assert pipeline_service.fold_negatives(NEGATIVES_SYNTHETIC, small_corpus, splits[0], pool) == pool


class TestBench:

    def test_outputs(self, small_corpus, splits, base, tmp_path):
        modes = [MODE_COSINE, MODE_SRPL, MODE_SRPL_PLUS]
        results = pipeline_service.run_bench(small_corpus, splits, modes, base, NEGATIVES_REAL, [],
                                             out_dir=tmp_path, threads=2)
        assert list(results) == modes
        assert all(len(reports) == 2 for reports in results.values())

        summary = json.loads((tmp_path / 'summary.json').read_text(encoding='utf-8'))
        assert set(summary) == set(modes)
        for entry in summary.values():
            assert entry['min']['oscr'] <= entry['mean']['oscr'] <= entry['max']['oscr']
            assert len(entry['folds']) == 2
        for mode in modes:
            for fold in (0, 1):
                assert (tmp_path / mode / f"fold{fold}" / 'report.json').is_file()
                assert (tmp_path / mode / f"fold{fold}" / 'curve.csv').is_file()
        table = (tmp_path / 'table.txt').read_text(encoding='utf-8')
        assert 'CosineDirect' in table
        assert 'SRPL+ (RealNeg)' in table

    def test_thread_count_does_not_change_results(self, small_corpus, splits, base, tmp_path):
        for threads in (1, 3):
            pipeline_service.run_bench(small_corpus, splits, [MODE_SRPL], base, NEGATIVES_NONE, [],
                                       out_dir=tmp_path / str(threads), threads=threads)
        first = (tmp_path / '1' / 'summary.json').read_bytes()
        assert (tmp_path / '3' / 'summary.json').read_bytes() == first

    def test_embeddings_are_dumped_on_request(self, small_corpus, splits, base, tmp_path):
        pipeline_service.run_bench(small_corpus, splits[:1], [MODE_COSINE], base, NEGATIVES_NONE, [],
                                   out_dir=tmp_path, threads=1, emit_embeddings=True)
        assert (tmp_path / MODE_COSINE / 'fold0' / 'embeddings.csv').is_file()

    def test_labels(self):
        assert pipeline_service.mode_label(MODE_SRPL_PLUS, NEGATIVES_SYNTHETIC) == 'SRPL+ (SynNeg)'
        assert pipeline_service.mode_label(MODE_SRPL, NEGATIVES_SYNTHETIC) == 'SRPL'


class TestAblation:

    def test_variant_config(self, base):
        config = pipeline_service.variant_config(base, VARIANT_NO_TASK_OPTIMIZE)
        assert config.mode == MODE_SRPL
        assert config.hyper.lambda_c == 0.0
        assert config.hyper.logit_metric == METRIC_EUCLIDEAN
        assert config.hyper.epochs == 3
        assert base.hyper.lambda_c == 1.0

    def test_unknown_variant(self, base):
        with pytest.raises(UsageError):
            pipeline_service.variant_config(base, 'srpl_no_reciprocal_points')

    def test_rows_and_files(self, small_corpus, splits, base, tmp_path):
        rows = pipeline_service.run_ablation(small_corpus, splits, base, NEGATIVES_REAL, [],
                                             out_dir=tmp_path, threads=2)
        assert [row['key'] for row in rows] == list(ABLATION_VARIANTS)
        assert all(len(row['folds']) == 2 and row['seconds'] >= 0.0 for row in rows)

        saved = json.loads((tmp_path / 'ablation.json').read_text(encoding='utf-8'))
        assert len(saved['variants']) == 5
        assert all('seconds' not in row for row in saved['variants'])
        assert 'w/o SpkTaskOptimize' in (tmp_path / 'ablation.txt').read_text(encoding='utf-8')
