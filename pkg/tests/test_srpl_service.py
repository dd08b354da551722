"""Reciprocal-point losses, their gradients and head construction."""
import itertools
import math

import numpy as np
import pytest
from scipy.special import softmax

from app.core.exceptions import InsufficientDataError, UsageError
from app.core.status import METRIC_EUCLIDEAN, METRIC_INNER
from app.db.models import Hyperparameters, SrplHead
from app.services import srpl_service
from app.utils.gradcheck import central_difference, relative_error, sample_indices

GRID = list(itertools.product((2, 3, 5, 10), (2, 8, 32), (0, 5), (METRIC_INNER, METRIC_EUCLIDEAN)))


def random_head(rng, k_known, m_syn, dim, radius_high=None):
    rows = k_known + m_syn
    radius_high = dim if radius_high is None else radius_high
    return SrplHead(rng.normal(size=(rows, dim)), rng.normal(size=(rows, dim)),
                    rng.uniform(0.0, radius_high, size=k_known), k_known, m_syn)


def _check(f, pairs, rng, coords=10):
    worst = 0.0
    for param, analytic in pairs:
        indices = sample_indices(param.shape, coords, rng)
        numeric = central_difference(f, param, indices)
        worst = max(worst, relative_error([analytic[i] for i in indices], numeric))
    return worst


class TestSingleTerms:

    def test_rp_logits_inner_and_euclidean(self):
        head = SrplHead(np.array([[1.0, 0.0], [0.0, 2.0]]), np.zeros((2, 2)), np.zeros(2), 2)
        emb = np.array([3.0, 4.0])
        np.testing.assert_array_equal(srpl_service.rp_logits(head, emb), [-3.0, -8.0])
        np.testing.assert_array_equal(srpl_service.rp_logits(head, emb, METRIC_EUCLIDEAN), [-20.0, -13.0])

    def test_rp_logits_two_class_example(self):
        head = SrplHead(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros((2, 2)), np.zeros(2), 2)
        logits = srpl_service.rp_logits(head, np.array([1.0, 0.0]))
        np.testing.assert_array_equal(logits, [-1.0, 1.0])
        assert softmax(logits)[1] == pytest.approx(math.e / (math.e + math.exp(-1.0)), rel=1e-12)

    def test_loss_r_inside_radius_is_zero(self):
        head = SrplHead(np.zeros((2, 2)), np.zeros((2, 2)), np.array([25.0, 0.0]), 2)
        result = srpl_service.loss_r(head, np.array([3.0, 4.0]), 0)
        assert result.value == 0.0
        assert np.all(result.grad_emb == 0.0)
        assert np.all(result.grad_head.rps == 0.0)
        assert np.all(result.grad_head.radii == 0.0)

    def test_loss_r_outside_radius(self):
        head = SrplHead(np.zeros((2, 2)), np.zeros((2, 2)), np.array([23.0, 0.0]), 2)
        result = srpl_service.loss_r(head, np.array([3.0, 4.0]), 0)
        assert result.value == 2.0
        np.testing.assert_array_equal(result.grad_emb, [6.0, 8.0])
        np.testing.assert_array_equal(result.grad_head.rps[0], [-6.0, -8.0])
        np.testing.assert_array_equal(result.grad_head.radii, [-1.0, 0.0])

    def test_loss_c_at_own_center_is_near_zero(self):
        head = SrplHead(np.zeros((2, 2)), np.array([[10.0, 0.0], [0.0, 10.0]]), np.zeros(2), 2)
        assert srpl_service.loss_c(head, np.array([10.0, 0.0]), 0).value < 1e-12

    def test_loss_c_with_one_aligned_center(self):
        cps = np.array([[10.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 7.0]])
        head = SrplHead(np.zeros((3, 3)), cps, np.zeros(3), 3)
        value = srpl_service.loss_c(head, np.array([1.0, 0.0, 0.0]), 0).value
        assert value == pytest.approx(math.log1p(2 * math.exp(-10.0)), rel=1e-9)

    def test_loss_s_prefers_far_reciprocal_point(self):
        # -<e, RP_k> is largest for the RP pointing away from e
        head = SrplHead(np.array([[-5.0, 0.0], [5.0, 0.0]]), np.zeros((2, 2)), np.zeros(2), 2)
        emb = np.array([1.0, 0.0])
        assert srpl_service.loss_s(head, emb, 0).value < srpl_service.loss_s(head, emb, 1).value

    def test_uniform_softmax_has_maximal_entropy(self, rng):
        rps = np.tile(rng.normal(size=(1, 4)), (6, 1))
        head = SrplHead(rps, np.zeros((6, 4)), np.zeros(6), 6)
        value = srpl_service.entropy_neg(head, rng.normal(size=4)).value
        assert value == pytest.approx(math.log(6), abs=1e-12)

    def test_label_range_is_checked(self, rng):
        head = random_head(rng, 3, 0, 4)
        with pytest.raises(UsageError):
            srpl_service.loss_s(head, np.zeros(4), 3)
        with pytest.raises(UsageError):
            srpl_service.loss_r(head, np.zeros(4), -1)

    def test_fewer_than_two_classes(self):
        with pytest.raises(InsufficientDataError):
            SrplHead(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(1), 1)


class TestBounds:

    def test_entropy_and_margin_bounds(self):
        rng = np.random.default_rng(2024)
        for _ in range(2000):
            k_known = int(rng.integers(2, 11))
            dim = int(rng.integers(2, 9))
            head = random_head(rng, k_known, 0, dim)
            head.rps *= rng.uniform(0.01, 20.0)
            for neg in rng.normal(scale=rng.uniform(0.1, 10.0), size=(5, dim)):
                value = srpl_service.entropy_neg(head, neg).value
                assert 0.0 <= value <= math.log(k_known)
                assert srpl_service.loss_r(head, neg, int(rng.integers(k_known))).value >= 0.0

    def test_probabilities_sum_to_one(self, rng):
        for _ in range(200):
            head = random_head(rng, int(rng.integers(2, 11)), 0, 8)
            logits = srpl_service.rp_logits(head, rng.normal(scale=5.0, size=(4, 8)))
            assert np.all(np.abs(softmax(logits, axis=1).sum(axis=1) - 1.0) <= 1e-12)


class TestGradients:

    @pytest.mark.parametrize('k_known, dim, m_syn, metric', GRID)
    def test_single_terms(self, k_known, dim, m_syn, metric):
        rng = np.random.default_rng(k_known * 1000 + dim * 10 + m_syn)
        head = random_head(rng, k_known, m_syn, dim)
        emb = rng.normal(size=dim)
        k = int(rng.integers(k_known))
        terms = [
            lambda: srpl_service.loss_s(head, emb, k, metric),
            lambda: srpl_service.loss_r(head, emb, k),
            lambda: srpl_service.loss_c(head, emb, k),
            lambda: srpl_service.entropy_neg(head, emb, metric)
        ]
        if m_syn:
            syn = k_known + int(rng.integers(m_syn))
            terms.append(lambda: srpl_service.loss_s(head, emb, syn, metric))
            terms.append(lambda: srpl_service.loss_c(head, emb, syn))
        for term in terms:
            result = term()
            pairs = [(head.rps, result.grad_head.rps), (head.cps, result.grad_head.cps),
                     (head.radii, result.grad_head.radii), (emb, result.grad_emb)]
            assert _check(lambda: term().value, pairs, rng) < 1e-4

    @pytest.mark.parametrize('k_known, dim, m_syn, metric', GRID)
    def test_batch_losses(self, k_known, dim, m_syn, metric):
        rng = np.random.default_rng(7 + k_known * 1000 + dim * 10 + m_syn)
        head = random_head(rng, k_known, m_syn, dim)
        hyper = Hyperparameters(lambda_r=0.7, lambda_c=0.4, lambda_ns=0.9, lambda_syn=0.6, logit_metric=metric)
        E = rng.normal(size=(6, dim))
        labels = rng.integers(0, k_known, size=6)
        N = rng.normal(size=(4, dim))
        neg_labels = rng.integers(0, m_syn, size=4) if m_syn else None

        known = srpl_service.srpl_loss(head, hyper, E, labels)
        pairs = [(head.rps, known.grad_head.rps), (head.cps, known.grad_head.cps),
                 (head.radii, known.grad_head.radii), (E, known.grad_known)]
        assert _check(lambda: srpl_service.srpl_loss(head, hyper, E, labels).breakdown.total, pairs, rng) < 1e-4

        plus = srpl_service.srpl_plus_loss(head, hyper, E, labels, N, neg_labels)
        pairs = [(head.rps, plus.grad_head.rps), (head.cps, plus.grad_head.cps),
                 (head.radii, plus.grad_head.radii), (E, plus.grad_known), (N, plus.grad_negative)]
        total = lambda: srpl_service.srpl_plus_loss(head, hyper, E, labels, N, neg_labels).breakdown.total
        assert _check(total, pairs, rng) < 1e-4

    def test_without_syn_centers_cps_of_pseudo_classes_get_no_gradient(self, rng):
        head = random_head(rng, 3, 2, 4)
        hyper = Hyperparameters(syn_centers=False)
        result = srpl_service.srpl_plus_loss(head, hyper, rng.normal(size=(3, 4)), [0, 1, 2],
                                             rng.normal(size=(2, 4)), [0, 1])
        assert np.all(result.grad_head.cps[3:] == 0.0)
        assert np.any(result.grad_head.rps[3:] != 0.0)


class TestReductions:

    def test_total_is_l_s_without_other_terms(self, rng):
        head = random_head(rng, 4, 0, 5)
        hyper = Hyperparameters(lambda_r=0.0, lambda_c=0.0)
        breakdown = srpl_service.srpl_loss(head, hyper, rng.normal(size=(7, 5)), rng.integers(0, 4, 7)).breakdown
        assert breakdown.total == breakdown.l_s

    def test_empty_negatives_reduce_to_srpl(self, rng):
        head = random_head(rng, 4, 0, 5)
        hyper = Hyperparameters()
        E = rng.normal(size=(7, 5))
        labels = rng.integers(0, 4, 7)
        plain = srpl_service.srpl_loss(head, hyper, E, labels)
        plus = srpl_service.srpl_plus_loss(head, hyper, E, labels, np.zeros((0, 5)))
        assert plus.breakdown == plain.breakdown
        assert np.array_equal(plus.grad_known, plain.grad_known)
        assert np.array_equal(plus.grad_head.rps, plain.grad_head.rps)
        assert np.array_equal(plus.grad_head.cps, plain.grad_head.cps)
        assert np.array_equal(plus.grad_head.radii, plain.grad_head.radii)

    def test_zero_entropy_weight_matches_srpl_total(self, rng):
        head = random_head(rng, 4, 0, 5)
        hyper = Hyperparameters(lambda_ns=0.0)
        E = rng.normal(size=(7, 5))
        labels = rng.integers(0, 4, 7)
        plain = srpl_service.srpl_loss(head, hyper, E, labels)
        plus = srpl_service.srpl_plus_loss(head, hyper, E, labels, rng.normal(size=(3, 5)))
        assert plus.breakdown.h_neg > 0.0
        assert plus.breakdown.total == plain.breakdown.total

    def test_breakdown_identity(self, rng):
        head = random_head(rng, 3, 2, 4)
        hyper = Hyperparameters(lambda_r=0.3, lambda_c=0.6, lambda_ns=0.8)
        b = srpl_service.srpl_plus_loss(head, hyper, rng.normal(size=(5, 4)), rng.integers(0, 3, 5),
                                        rng.normal(size=(4, 4)), rng.integers(0, 2, 4)).breakdown
        assert b.total == b.l_s + 0.3 * b.l_r + 0.6 * b.l_c - 0.8 * b.h_neg

    def test_pseudo_class_weight_scales_negative_terms(self, rng):
        head = random_head(rng, 3, 2, 4)
        E, labels = rng.normal(size=(5, 4)), rng.integers(0, 3, 5)
        N, neg_labels = rng.normal(size=(4, 4)), rng.integers(0, 2, 4)
        plain = srpl_service.srpl_loss(head, Hyperparameters(), E, labels).breakdown

        def plus(weight):
            return srpl_service.srpl_plus_loss(head, Hyperparameters(lambda_syn=weight), E, labels, N, neg_labels)

        off = plus(0.0)
        assert off.breakdown.l_s == plain.l_s
        assert off.breakdown.l_c == plain.l_c
        assert np.all(off.grad_head.rps[3:] == 0.0)
        assert np.all(off.grad_head.cps[3:] == 0.0)
        half, full = plus(0.5).breakdown, plus(1.0).breakdown
        assert half.l_s - plain.l_s == pytest.approx(0.5 * (full.l_s - plain.l_s), rel=1e-12)
        assert half.l_c - plain.l_c == pytest.approx(0.5 * (full.l_c - plain.l_c), rel=1e-12)

    def test_batch_order_does_not_change_the_loss(self, rng):
        head = random_head(rng, 5, 0, 6)
        hyper = Hyperparameters()
        E = rng.normal(size=(12, 6))
        labels = rng.integers(0, 5, 12)
        order = rng.permutation(12)
        a = srpl_service.srpl_loss(head, hyper, E, labels).breakdown
        b = srpl_service.srpl_loss(head, hyper, E[order], labels[order]).breakdown
        np.testing.assert_allclose(list(a.to_dict().values()), list(b.to_dict().values()), rtol=1e-12)


class TestHeadConstruction:

    def test_centers_are_class_means(self, rng):
        groups = [rng.normal(size=(4, 3)) for _ in range(3)]
        neg_groups = [rng.normal(size=(5, 3)) for _ in range(2)]
        head = srpl_service.init_head(3, 2, 3, groups, neg_groups, seed=1, radius_init=0.5)
        expected = np.vstack([g.mean(axis=0) for g in groups + neg_groups])
        np.testing.assert_allclose(head.cps, expected, rtol=1e-12)
        assert head.rps.shape == (5, 3)
        assert np.all(np.abs(head.rps) < 0.1)
        assert np.array_equal(head.radii, np.full(3, 0.5))

    def test_seeded(self, rng):
        groups = [rng.normal(size=(2, 3)) for _ in range(2)]
        a = srpl_service.init_head(2, 0, 3, groups, [], seed=4)
        b = srpl_service.init_head(2, 0, 3, groups, [], seed=4)
        assert np.array_equal(a.rps, b.rps)

    def test_empty_class(self, rng):
        with pytest.raises(InsufficientDataError, match='empty class'):
            srpl_service.init_head(2, 0, 3, [rng.normal(size=(2, 3)), np.zeros((0, 3))], [], seed=0)

    def test_group_count_must_match(self, rng):
        with pytest.raises(UsageError):
            srpl_service.init_head(3, 0, 3, [rng.normal(size=(2, 3))] * 2, [], seed=0)


class TestPseudoClasses:

    def test_kmeans_recovers_separated_blobs(self, rng):
        centers = np.array([[10.0, 0.0], [0.0, 10.0], [-10.0, -10.0]])
        vectors = np.vstack([c + 0.1 * rng.normal(size=(20, 2)) for c in centers])
        labels = srpl_service.assign_pseudo_classes(vectors, 3, seed=0)
        assert sorted(set(labels.tolist())) == [0, 1, 2]
        for block in range(3):
            assert len(set(labels[block * 20:(block + 1) * 20].tolist())) == 1

    def test_kmeans_is_deterministic(self, rng):
        vectors = rng.normal(size=(40, 3))
        a = srpl_service.assign_pseudo_classes(vectors, 4, seed=2)
        b = srpl_service.assign_pseudo_classes(vectors, 4, seed=2)
        assert np.array_equal(a, b)

    def test_more_clusters_than_points(self, rng):
        labels = srpl_service.assign_pseudo_classes(rng.normal(size=(3, 2)), 10, seed=0)
        assert labels.max() < 3

    def test_speaker_labels_sorted(self):
        assert srpl_service.pseudo_labels_from_speakers(['b', 'a', 'b', 'c']) == [1, 0, 1, 2]
