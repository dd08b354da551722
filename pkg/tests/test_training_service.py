"""Enrollment training for every mode, negative pools and prediction."""
from dataclasses import replace

import numpy as np
import pytest

from app.core.exceptions import DimensionMismatchError, InsufficientDataError, NumericFailureError
from app.core.status import (
    ADAPTER_INIT_IDENTITY, MODE_COSINE, MODE_PROTOTYPE, MODE_SOFTMAX, MODE_SRPL, MODE_SRPL_PLUS,
    RADIUS_FIXED, RADIUS_SHARED, TAG_ENROLL, TAG_NEGATIVE
)
from app.db.models import EmbeddingRecord, EnrolledModel, Hyperparameters, SrplHead, TrainConfig
from app.services import training_service
from app.services.adapter_service import forward, identity_adapter, init_adapter
from app.services.baseline_service import init_softmax_head
from app.services.corpus_service import records_for_speakers
from app.services.srpl_service import init_head


@pytest.fixture
def negatives(small_corpus, small_split):
    return records_for_speakers(small_corpus, small_split.reserved_speakers, tag=TAG_NEGATIVE)


def _same_parameters(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


class TestSrplTraining:

    def test_loss_decreases(self, small_corpus, small_split, quick_config):
        model, history = training_service.enroll(small_split, small_corpus, [],
                                                 quick_config(epochs=30, learning_rate=0.01))
        assert len(history) == 31
        assert history[-1].total < history[0].total
        assert model.head.k_known == 4
        assert model.head.m_syn == 0

    def test_same_seed_same_model(self, small_corpus, small_split, quick_config):
        a, history_a = training_service.enroll(small_split, small_corpus, [], quick_config(batch_size=4))
        b, history_b = training_service.enroll(small_split, small_corpus, [], quick_config(batch_size=4))
        assert history_a == history_b
        assert _same_parameters(a.adapter, b.adapter)
        assert _same_parameters(a.head, b.head)

    def test_empty_negative_pool_trains_as_srpl(self, small_corpus, small_split, quick_config):
        plain, plain_history = training_service.enroll(small_split, small_corpus, [], quick_config(mode=MODE_SRPL))
        plus, plus_history = training_service.enroll(small_split, small_corpus, [], quick_config(mode=MODE_SRPL_PLUS))
        assert plus_history == plain_history
        assert _same_parameters(plain.adapter, plus.adapter)
        assert _same_parameters(plain.head, plus.head)
        assert plus.mode == MODE_SRPL_PLUS

    def test_negatives_add_pseudo_classes(self, small_corpus, small_split, negatives, quick_config):
        model, history = training_service.enroll(small_split, small_corpus, negatives,
                                                 quick_config(mode=MODE_SRPL_PLUS, epochs=5))
        assert model.head.m_syn == 4
        assert model.head.rps.shape == (8, 6)
        assert all(b.h_neg > 0.0 for b in history)

    def test_zero_learning_rate_keeps_loss(self, small_corpus, small_split, quick_config):
        _, history = training_service.enroll(small_split, small_corpus, [],
                                             quick_config(epochs=2, learning_rate=0.0))
        assert history[0] == history[1] == history[2]

    def test_zero_learning_rate_keeps_every_parameter(self, small_corpus, small_split, negatives, quick_config):
        config = quick_config(mode=MODE_SRPL_PLUS, epochs=3, learning_rate=0.0, batch_size=4)
        model, _ = training_service.enroll(small_split, small_corpus, negatives, config)

        X, labels, _ = training_service.enrollment_set(small_split, small_corpus)
        pool = training_service.prepare_negatives(negatives, config, small_corpus.dimension)
        adapter = init_adapter([6, 6, 6, 6], config.seed)
        E0 = forward(adapter, X)
        N0 = forward(adapter, pool.vectors)
        head = init_head(4, pool.n_pseudo, 6, [E0[labels == k] for k in range(4)],
                         [N0[pool.pseudo_labels == j] for j in range(pool.n_pseudo)], config.seed + 1, 0.0)
        assert _same_parameters(model.adapter, adapter)
        assert _same_parameters(model.head, head)

    def test_fixed_radius_never_moves(self, small_corpus, small_split, quick_config):
        model, _ = training_service.enroll(small_split, small_corpus, [],
                                           quick_config(radius_mode=RADIUS_FIXED, radius_init=0.5))
        assert np.array_equal(model.head.radii, np.full(4, 0.5))

    def test_shared_radius_stays_shared(self, small_corpus, small_split, quick_config):
        model, _ = training_service.enroll(small_split, small_corpus, [],
                                           quick_config(radius_mode=RADIUS_SHARED, radius_init=2.0))
        assert np.all(model.head.radii == model.head.radii[0])
        assert np.all(model.head.radii >= 0.0)

    def test_divergence_is_reported_with_epoch(self, small_corpus, small_split, quick_config):
        with pytest.raises(NumericFailureError) as excinfo:
            training_service.enroll(small_split, small_corpus, [], quick_config(learning_rate=1e300))
        assert excinfo.value.epoch == 1

    def test_normalized_output_has_unit_rows(self, small_corpus, small_split):
        config = TrainConfig(hyper=Hyperparameters(epochs=3), normalize_output=True, seed=1)
        model, _ = training_service.enroll(small_split, small_corpus, [], config)
        E = training_service.adapted_embeddings(model, small_corpus.matrix[:10])
        np.testing.assert_allclose(np.linalg.norm(E, axis=1), 1.0, rtol=1e-12)


class TestNegativePool:

    def test_speaker_labels_become_pseudo_classes(self, negatives):
        pool = training_service.prepare_negatives(negatives, TrainConfig(), 6)
        assert pool.size == 40
        assert pool.n_pseudo == 4
        assert sorted(set(pool.pseudo_labels.tolist())) == [0, 1, 2, 3]

    def test_unlabeled_negatives_are_clustered(self, negatives):
        unlabeled = [EmbeddingRecord('', r.utterance_id, r.vector, TAG_NEGATIVE) for r in negatives]
        pool = training_service.prepare_negatives(unlabeled, TrainConfig(m_syn=3), 6)
        assert pool.n_pseudo <= 3
        assert pool.pseudo_labels.max() == pool.n_pseudo - 1

    def test_empty_pool(self):
        pool = training_service.prepare_negatives([], TrainConfig(), 6)
        assert pool.size == 0
        assert pool.vectors.shape == (0, 6)

    def test_dimension_must_match_corpus(self):
        with pytest.raises(DimensionMismatchError):
            training_service.prepare_negatives([EmbeddingRecord('n', '0', np.zeros(3))], TrainConfig(), 6)


class TestEnrollmentSet:

    def test_labels_follow_target_order(self, small_corpus, small_split):
        X, labels, speaker_ids = training_service.enrollment_set(small_split, small_corpus)
        assert X.shape == (20, 6)
        assert speaker_ids == list(small_split.target_speakers)
        for row, i in enumerate(small_split.enroll_records):
            assert speaker_ids[labels[row]] == small_corpus.records[i].speaker_id

    def test_extra_records_for_targets_only(self, small_corpus, small_split):
        target = small_split.target_speakers[0]
        extra = [
            EmbeddingRecord(target, 'syn0', np.ones(6), TAG_ENROLL),
            EmbeddingRecord(small_split.outlier_speakers[0], 'syn1', np.ones(6), TAG_ENROLL)
        ]
        X, labels, _ = training_service.enrollment_set(small_split, small_corpus, extra)
        assert X.shape == (21, 6)
        assert labels[-1] == 0

    def test_empty_enrollment(self, small_corpus, small_split):
        with pytest.raises(InsufficientDataError):
            training_service.enrollment_set(replace(small_split, enroll_records=()), small_corpus)


class TestBaselines:

    def test_prototype_on_separated_classes(self, rng):
        X = np.vstack([
            rng.uniform(0.0, 0.5, size=(5, 3)) + [5.0, 0.0, 0.0],
            rng.uniform(0.0, 0.5, size=(5, 3)) + [0.0, 5.0, 0.0]
        ])
        labels = np.repeat([0, 1], 5)
        config = TrainConfig(hyper=Hyperparameters(learning_rate=0.0, epochs=1), mode=MODE_PROTOTYPE,
                             adapter_init=ADAPTER_INIT_IDENTITY)
        model, history = training_service.train_prototype(X, labels, ['a', 'b'], config)
        _, best, _ = training_service.predict_batch(model, X)
        assert np.array_equal(best, labels)
        assert history[0] == history[1]
        np.testing.assert_allclose(model.head.prototypes[0], X[:5].mean(axis=0), rtol=1e-12)

    def test_softmax_with_zero_learning_rate(self, small_corpus, small_split, quick_config):
        model, history = training_service.enroll(small_split, small_corpus, [],
                                                 quick_config(mode=MODE_SOFTMAX, epochs=2, learning_rate=0.0))
        assert history[0] == history[2]
        assert model.head.weights.shape == (6, 4)

    def test_softmax_zero_learning_rate_keeps_every_parameter(self, small_corpus, small_split, quick_config):
        config = quick_config(mode=MODE_SOFTMAX, epochs=3, learning_rate=0.0)
        model, _ = training_service.enroll(small_split, small_corpus, [], config)
        assert _same_parameters(model.adapter, init_adapter([6, 6, 6, 6], config.seed))
        assert _same_parameters(model.head, init_softmax_head(6, 4, config.seed + 1))

    def test_softmax_learns(self, small_corpus, small_split, quick_config):
        _, history = training_service.enroll(small_split, small_corpus, [],
                                             quick_config(mode=MODE_SOFTMAX, epochs=30, learning_rate=0.05))
        assert history[-1].total < history[0].total

    def test_cosine_has_no_adapter_or_history(self, small_corpus, small_split, quick_config):
        model, history = training_service.enroll(small_split, small_corpus, [], quick_config(mode=MODE_COSINE))
        assert model.adapter is None
        assert history == []
        assert model.input_dim == 6

    @pytest.mark.parametrize('enroll_fn', [
        training_service.enroll_baseline_softmax,
        training_service.enroll_baseline_prototype,
        training_service.enroll_cosine
    ])
    def test_split_level_wrappers(self, enroll_fn, small_corpus, small_split, quick_config):
        model, _ = enroll_fn(small_split, small_corpus, quick_config(epochs=2))
        assert model.speaker_ids == list(small_split.target_speakers)


class TestPrediction:

    @pytest.fixture
    def model(self, small_corpus, small_split, quick_config):
        return training_service.enroll(small_split, small_corpus, [], quick_config(epochs=5))[0]

    def test_scores_are_a_distribution(self, model, small_corpus):
        scores, best, confidence = training_service.predict_batch(model, small_corpus.matrix)
        assert scores.shape == (len(small_corpus), 4)
        assert np.all(np.abs(scores.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all(scores >= 0.0)
        assert np.array_equal(confidence, scores.max(axis=1))
        assert np.all(best == scores.argmax(axis=1))

    def test_single_matches_batch(self, model, small_corpus):
        scores, best, confidence = training_service.predict_batch(model, small_corpus.matrix[:6])
        for i in range(6):
            s, k, c = training_service.predict(model, small_corpus.matrix[i])
            np.testing.assert_allclose(s, scores[i], rtol=1e-12, atol=1e-15)
            assert k == best[i]
            assert c == pytest.approx(confidence[i], rel=1e-12)

    def test_saturated_confidence(self):
        head = SrplHead(np.array([[-10.0, 0.0], [10.0, 0.0]]), np.zeros((2, 2)), np.zeros(2), 2)
        model = EnrolledModel(MODE_SRPL, identity_adapter([2, 2, 2, 2]), head, ['a', 'b'])
        _, best, confidence = training_service.predict(model, [1.0, 0.0])
        assert best == 0
        assert confidence > 0.999

    def test_input_dimension_is_checked(self, model):
        with pytest.raises(DimensionMismatchError):
            training_service.predict(model, np.zeros(5))
        with pytest.raises(DimensionMismatchError):
            training_service.predict_batch(model, np.zeros((2, 7)))
