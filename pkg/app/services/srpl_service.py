"""
SRPL Service - reciprocal points, center points and the SRPL / SRPL+ losses

Terms for one adapted embedding e with label k:
    L_s = -log softmax_k(z),  z_i = -<e, RP_i>        (or -||e - RP_i||^2, euclidean metric)
    L_r = max(||e - RP_k||^2 - R_k, 0)
    L_c = -log softmax_k(<e, CP_i>)
    H   = Shannon entropy of softmax(z) over the K known RPs (negatives only)

    total = l_s + lambda_r * l_r + lambda_c * l_c - lambda_ns * h_neg

Known samples use the K known RPs/CPs. Negative samples with pseudo-labels
additionally enter L_s and L_c as members of their synthesized class K + j,
with the softmax spanning all K + M points; those negative means are
weighted by lambda_syn before joining l_s and l_c. Batch means are exactly rounded
(math.fsum), so every term is invariant under batch permutation.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import log_softmax
from sklearn.cluster import KMeans

from app.core.exceptions import DimensionMismatchError, InsufficientDataError, UsageError
from app.core.status import METRIC_INNER
from app.db.models import HeadGradients, Hyperparameters, LossBreakdown, SrplHead

logger = logging.getLogger(__name__)

RP_INIT_SCALE = 0.01
KMEANS_MAX_ITER = 100


@dataclass
class TermResult:
    """One loss term for one embedding with its gradients."""
    value: float
    grad_emb: np.ndarray
    grad_head: HeadGradients


@dataclass
class BatchLossResult:
    """Batch loss with gradients of `breakdown.total`."""
    breakdown: LossBreakdown
    grad_known: np.ndarray
    grad_negative: np.ndarray
    grad_head: HeadGradients


# ---------------------------------------------------------------------------
# Vectorized building blocks: E is (n, D), points is (P, D)
# ---------------------------------------------------------------------------

def point_logits(points: np.ndarray, E: np.ndarray, metric: str) -> np.ndarray:
    if metric == METRIC_INNER:
        return -(E @ points.T)
    diff = E[:, np.newaxis, :] - points[np.newaxis, :, :]
    return -np.sum(diff * diff, axis=2)


def point_logits_backward(points: np.ndarray, E: np.ndarray, metric: str, G: np.ndarray):
    """Given G = dL/dZ for Z = point_logits(points, E), return (dL/dE, dL/dpoints)."""
    if metric == METRIC_INNER:
        return -(G @ points), -(G.T @ E)
    row = G.sum(axis=1, keepdims=True)
    col = G.sum(axis=0)[:, np.newaxis]
    grad_e = -2.0 * (E * row - G @ points)
    grad_p = 2.0 * (G.T @ E - points * col)
    return grad_e, grad_p


def cross_entropy(Z: np.ndarray, labels: np.ndarray):
    """Per-row -log softmax at the label and dL/dZ per row."""
    log_p = log_softmax(Z, axis=1)
    rows = np.arange(Z.shape[0])
    losses = -log_p[rows, labels]
    G = np.exp(log_p)
    G[rows, labels] -= 1.0
    return losses, G


def _classification_batch(head: SrplHead, E: np.ndarray, labels: np.ndarray, metric: str, n_points: int):
    points = head.rps[:n_points]
    losses, G = cross_entropy(point_logits(points, E, metric), labels)
    grad_e, grad_p = point_logits_backward(points, E, metric, G)
    return losses, grad_e, grad_p


def _center_batch(head: SrplHead, E: np.ndarray, labels: np.ndarray, n_points: int):
    points = head.cps[:n_points]
    losses, G = cross_entropy(E @ points.T, labels)
    return losses, G @ points, G.T @ E


def _reciprocal_margin_batch(head: SrplHead, E: np.ndarray, labels: np.ndarray):
    diff = E - head.rps[labels]
    margin = np.sum(diff * diff, axis=1) - head.radii[labels]
    active = margin > 0.0
    losses = np.where(active, margin, 0.0)
    grad_e = np.where(active[:, np.newaxis], 2.0 * diff, 0.0)
    grad_r = -np.where(active, 1.0, 0.0)
    return losses, grad_e, grad_r


def _entropy_batch(head: SrplHead, E: np.ndarray, metric: str):
    points = head.rps[:head.k_known]
    log_p = log_softmax(point_logits(points, E, metric), axis=1)
    p = np.exp(log_p)
    entropy = -np.sum(p * log_p, axis=1)
    entropy = np.clip(entropy, 0.0, math.log(head.k_known))
    G = -p * (log_p + entropy[:, np.newaxis])
    grad_e, grad_p = point_logits_backward(points, E, metric, G)
    return entropy, grad_e, grad_p


def _mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values)


def _check_embeddings(head: SrplHead, emb) -> np.ndarray:
    E = np.asarray(emb, dtype=np.float64)
    if E.ndim == 1:
        E = E[np.newaxis, :]
    if E.ndim != 2 or E.shape[1] != head.dim:
        raise DimensionMismatchError(head.dim, E.shape[-1], 'SRPL head embedding')
    return E


def _check_known_labels(head: SrplHead, labels: np.ndarray) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= head.k_known):
        raise UsageError(f"label out of range: known labels must be in [0, {head.k_known})")


# ---------------------------------------------------------------------------
# Single-embedding operations
# ---------------------------------------------------------------------------

def rp_logits(head: SrplHead, emb, metric: str = METRIC_INNER, include_syn: bool = False) -> np.ndarray:
    """
    Logits of the reciprocal-point softmax, -<emb, RP_k> for the K known RPs
    (all K + M when include_syn). Accepts a vector or a batch of rows.
    """
    E = _check_embeddings(head, emb)
    n_points = head.k_known + (head.m_syn if include_syn else 0)
    Z = point_logits(head.rps[:n_points], E, metric)
    return Z[0] if np.ndim(emb) == 1 else Z


def _single_label(head: SrplHead, k: int, allow_syn: bool) -> int:
    upper = head.k_known + (head.m_syn if allow_syn else 0)
    if not 0 <= int(k) < upper:
        raise UsageError(f"label out of range: {k} not in [0, {upper})")
    return int(k)


def loss_s(head: SrplHead, emb, k: int, metric: str = METRIC_INNER) -> TermResult:
    """Classification loss. Labels >= K address a SynRP class over all K + M RPs."""
    k = _single_label(head, k, allow_syn=True)
    E = _check_embeddings(head, emb)
    n_points = head.k_known if k < head.k_known else head.k_known + head.m_syn
    losses, grad_e, grad_p = _classification_batch(head, E, np.array([k]), metric, n_points)
    grads = HeadGradients.zeros_like(head)
    grads.rps[:n_points] = grad_p
    return TermResult(float(losses[0]), grad_e[0], grads)


def loss_r(head: SrplHead, emb, k: int) -> TermResult:
    """Bounded-unknown margin loss; zero value and zero gradients inside the radius."""
    k = _single_label(head, k, allow_syn=False)
    E = _check_embeddings(head, emb)
    losses, grad_e, grad_r = _reciprocal_margin_batch(head, E, np.array([k]))
    grads = HeadGradients.zeros_like(head)
    grads.rps[k] = -grad_e[0]
    grads.radii[k] = grad_r[0]
    return TermResult(float(losses[0]), grad_e[0], grads)


def loss_c(head: SrplHead, emb, k: int) -> TermResult:
    """Center-focus loss, softmax over +<emb, CP_i>."""
    k = _single_label(head, k, allow_syn=True)
    E = _check_embeddings(head, emb)
    n_points = head.k_known if k < head.k_known else head.k_known + head.m_syn
    losses, grad_e, grad_c = _center_batch(head, E, np.array([k]), n_points)
    grads = HeadGradients.zeros_like(head)
    grads.cps[:n_points] = grad_c
    return TermResult(float(losses[0]), grad_e[0], grads)


def entropy_neg(head: SrplHead, neg_emb, metric: str = METRIC_INNER) -> TermResult:
    """
    Entropy of the known-RP softmax for one negative embedding, 0 <= H <= ln K.
    Gradients are those of H itself; the total loss subtracts it.
    """
    E = _check_embeddings(head, neg_emb)
    entropy, grad_e, grad_p = _entropy_batch(head, E, metric)
    grads = HeadGradients.zeros_like(head)
    grads.rps[:head.k_known] = grad_p
    return TermResult(float(entropy[0]), grad_e[0], grads)


# ---------------------------------------------------------------------------
# Batch losses
# ---------------------------------------------------------------------------

def _total(hyper: Hyperparameters, l_s: float, l_r: float, l_c: float, h_neg: float) -> float:
    return l_s + hyper.lambda_r * l_r + hyper.lambda_c * l_c - hyper.lambda_ns * h_neg


def srpl_loss(head: SrplHead, hyper: Hyperparameters, emb_batch, labels) -> BatchLossResult:
    """
    Mean SRPL loss over a nonempty batch of known embeddings.

    Args:
        head: SRPL head
        hyper: Weights and logit metric
        emb_batch: Adapted embeddings (n, D)
        labels: Known class per row, in [0, K)

    Returns:
        BatchLossResult with h_neg = 0
    """
    E = _check_embeddings(head, emb_batch)
    labels = np.asarray(labels, dtype=np.int64)
    n = E.shape[0]
    if n == 0:
        raise UsageError("srpl_loss needs a nonempty batch")
    if labels.shape != (n,):
        raise DimensionMismatchError(n, labels.shape[0], 'label vector')
    _check_known_labels(head, labels)
    k = head.k_known

    s_losses, s_grad_e, s_grad_p = _classification_batch(head, E, labels, hyper.logit_metric, k)
    r_losses, r_grad_e, r_grad_r = _reciprocal_margin_batch(head, E, labels)
    c_losses, c_grad_e, c_grad_c = _center_batch(head, E, labels, k)

    l_s, l_r, l_c = _mean(s_losses), _mean(r_losses), _mean(c_losses)
    breakdown = LossBreakdown(l_s, l_r, l_c, 0.0, _total(hyper, l_s, l_r, l_c, 0.0))

    grads = HeadGradients.zeros_like(head)
    grads.rps[:k] = s_grad_p / n
    np.add.at(grads.rps, labels, -hyper.lambda_r * r_grad_e / n)
    np.add.at(grads.radii, labels, hyper.lambda_r * r_grad_r / n)
    grads.cps[:k] = hyper.lambda_c * c_grad_c / n
    grad_known = (s_grad_e + hyper.lambda_r * r_grad_e + hyper.lambda_c * c_grad_e) / n

    return BatchLossResult(breakdown, grad_known, np.zeros((0, head.dim)), grads)


def srpl_plus_loss(head: SrplHead, hyper: Hyperparameters, emb_batch, labels,
                   neg_batch, neg_labels: Optional[Sequence[int]] = None) -> BatchLossResult:
    """
    SRPL+ loss: srpl_loss on the known batch minus lambda_ns times the mean
    negative entropy. With pseudo-labels (neg_labels in [0, M)) and M > 0,
    negatives also enter L_s at their SynRP class and, unless syn_centers is
    off, L_c at their SynCP class; both of those negative means are scaled by
    lambda_syn. An empty negative batch returns exactly srpl_loss.
    """
    N = np.asarray(neg_batch, dtype=np.float64)
    if N.size == 0:
        return srpl_loss(head, hyper, emb_batch, labels)
    N = _check_embeddings(head, N)
    E = _check_embeddings(head, emb_batch)
    base = srpl_loss(head, hyper, E, labels)
    m = N.shape[0]
    k = head.k_known
    grads = base.grad_head

    entropy, h_grad_e, h_grad_p = _entropy_batch(head, N, hyper.logit_metric)
    h_neg = _mean(entropy)
    grads.rps[:k] -= hyper.lambda_ns * h_grad_p / m
    grad_negative = -hyper.lambda_ns * h_grad_e / m

    l_s, l_c = base.breakdown.l_s, base.breakdown.l_c
    if head.m_syn > 0 and neg_labels is not None:
        syn = np.asarray(neg_labels, dtype=np.int64)
        if syn.shape != (m,):
            raise DimensionMismatchError(m, syn.shape[0], 'negative label vector')
        if syn.min() < 0 or syn.max() >= head.m_syn:
            raise UsageError(f"pseudo-label out of range: must be in [0, {head.m_syn})")
        syn = syn + k
        all_points = k + head.m_syn

        s_losses, s_grad_e, s_grad_p = _classification_batch(head, N, syn, hyper.logit_metric, all_points)
        weight = hyper.lambda_syn / m
        l_s = l_s + hyper.lambda_syn * _mean(s_losses)
        grads.rps += weight * s_grad_p
        grad_negative = grad_negative + weight * s_grad_e

        if hyper.syn_centers:
            c_losses, c_grad_e, c_grad_c = _center_batch(head, N, syn, all_points)
            l_c = l_c + hyper.lambda_syn * _mean(c_losses)
            grads.cps += hyper.lambda_c * weight * c_grad_c
            grad_negative = grad_negative + hyper.lambda_c * weight * c_grad_e

    l_r = base.breakdown.l_r
    breakdown = LossBreakdown(l_s, l_r, l_c, h_neg, _total(hyper, l_s, l_r, l_c, h_neg))
    return BatchLossResult(breakdown, base.grad_known, grad_negative, grads)


# ---------------------------------------------------------------------------
# Head construction
# ---------------------------------------------------------------------------

def _group_mean(group, dim: int, what: str, index: int) -> np.ndarray:
    vectors = np.asarray(group, dtype=np.float64)
    if vectors.size == 0:
        raise InsufficientDataError(f"empty class: {what} {index} has no embeddings")
    vectors = vectors.reshape(-1, dim)
    return vectors.mean(axis=0)


def init_head(k_known: int, m_syn: int, dim: int, enroll_groups: Sequence, negative_groups: Sequence,
              seed: int, radius_init: float = 0.0) -> SrplHead:
    """
    Build an SRPL head.

    Args:
        k_known: Number of known classes (>= 2)
        m_syn: Number of synthesized pseudo-classes (>= 0)
        dim: Embedding dimension
        enroll_groups: K arrays of adapted enrollment embeddings, one per class
        negative_groups: M arrays of adapted negative embeddings, one per pseudo-class
        seed: RNG seed for the reciprocal points
        radius_init: Initial value of every radius

    Returns:
        SrplHead with CPs at class means, RPs ~ N(0, 0.01^2)
    """
    if len(enroll_groups) != k_known:
        raise UsageError(f"expected {k_known} enrollment groups, got {len(enroll_groups)}")
    if len(negative_groups) != m_syn:
        raise UsageError(f"expected {m_syn} negative groups, got {len(negative_groups)}")
    centers = [_group_mean(g, dim, 'class', i) for i, g in enumerate(enroll_groups)]
    centers += [_group_mean(g, dim, 'pseudo-class', j) for j, g in enumerate(negative_groups)]
    cps = np.vstack(centers) if centers else np.zeros((0, dim))
    rng = np.random.default_rng(seed)
    rps = rng.normal(0.0, RP_INIT_SCALE, size=(k_known + m_syn, dim))
    radii = np.full(k_known, float(radius_init))
    return SrplHead(rps, cps, radii, k_known, m_syn)


def assign_pseudo_classes(vectors: np.ndarray, m: int, seed: int) -> np.ndarray:
    """
    Partition unlabeled negatives into at most m pseudo-classes with seeded k-means.
    Labels are contiguous from 0.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    n_clusters = min(m, vectors.shape[0])
    model = KMeans(n_clusters=n_clusters, n_init=1, max_iter=KMEANS_MAX_ITER, random_state=seed)
    raw = model.fit_predict(vectors)
    _, labels = np.unique(raw, return_inverse=True)
    logger.debug(f"Clustered {vectors.shape[0]} negatives into {labels.max() + 1} pseudo-classes")
    return labels.astype(np.int64)


def pseudo_labels_from_speakers(speaker_ids: Sequence[str]) -> List[int]:
    """Index negatives by their sorted distinct pseudo-speaker ids."""
    index = {speaker: i for i, speaker in enumerate(sorted(set(speaker_ids)))}
    return [index[s] for s in speaker_ids]
