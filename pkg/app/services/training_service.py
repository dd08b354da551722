"""
Training Service - few-shot enrollment and prediction

Seeds derived from TrainConfig.seed:
    seed      adapter initialization
    seed + 1  head initialization (RPs, softmax weights) and k-means
    seed + 2  per-epoch shuffles and negative batch draws

Every mode runs exactly `epochs` passes of plain SGD. history[0] is the loss
over the full enrollment set (plus the full negative pool) before training,
history[e] the same after epoch e.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from app.core.exceptions import DimensionMismatchError, InsufficientDataError, NumericFailureError
from app.core.status import (
    ADAPTER_INIT_IDENTITY, MODE_COSINE, MODE_PROTOTYPE, MODE_SOFTMAX, MODE_SRPL_PLUS,
    RADIUS_FIXED, RADIUS_SHARED, SRPL_MODES, get_mode_label
)
from app.db.models import (
    AdapterNetwork, Corpus, EmbeddingRecord, EnrolledModel, HeadGradients,
    Hyperparameters, LossBreakdown, OpenSetSplit, SrplHead, TrainConfig
)
from app.services import baseline_service
from app.services.adapter_service import (
    apply_gradients, backward, forward, identity_adapter, init_adapter,
    normalize_backward, normalize_rows
)
from app.services.corpus_service import check_dimension, stack_vectors
from app.services.fold_service import check_split_against_corpus
from app.services.srpl_service import (
    assign_pseudo_classes, init_head, pseudo_labels_from_speakers, rp_logits,
    srpl_loss, srpl_plus_loss
)

logger = logging.getLogger(__name__)

History = List[LossBreakdown]


@dataclass
class NegativePool:
    """Negative embeddings (raw input space) with their pseudo-class labels."""
    vectors: np.ndarray
    pseudo_labels: np.ndarray
    n_pseudo: int

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def empty(cls, dim: int) -> 'NegativePool':
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), 0)


def prepare_negatives(negatives: Sequence[EmbeddingRecord], config: TrainConfig, dim: int) -> NegativePool:
    """
    Stack a negative pool and give every record a pseudo-class.

    Records keep their pseudo-speaker identity as the class unless
    `cluster_negatives` is set or some record is unlabeled, in which case
    the pool is split into `m_syn` pseudo-classes by seeded k-means.
    """
    negatives = list(negatives or [])
    if not negatives:
        return NegativePool.empty(dim)
    check_dimension(dim, negatives, 'negative pool vs corpus')
    vectors = stack_vectors(negatives, dim)
    speakers = [r.speaker_id for r in negatives]
    if config.cluster_negatives or not all(speakers):
        labels = assign_pseudo_classes(vectors, config.m_syn, config.seed + 1)
    else:
        labels = np.asarray(pseudo_labels_from_speakers(speakers), dtype=np.int64)
    return NegativePool(vectors, labels, int(labels.max()) + 1)


def enrollment_set(split: OpenSetSplit, corpus: Corpus,
                   extra_enroll: Optional[Sequence[EmbeddingRecord]] = None) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """
    Enrollment matrix, class labels and the class-index-to-speaker map of a split.
    Extra records (e.g. synthesized utterances) are appended for target speakers only.
    """
    if not split.enroll_records:
        raise InsufficientDataError(f"split fold {split.fold_index} has no enrollment records")
    check_split_against_corpus(split, corpus)
    speaker_ids = list(split.target_speakers)
    index = {speaker: k for k, speaker in enumerate(speaker_ids)}
    records = [corpus.records[i] for i in split.enroll_records]
    if extra_enroll:
        check_dimension(corpus.dimension, extra_enroll, 'extra enrollment vs corpus')
        records += [r for r in extra_enroll if r.speaker_id in index]
    try:
        labels = np.array([index[r.speaker_id] for r in records], dtype=np.int64)
    except KeyError as e:
        raise InsufficientDataError(f"enrollment record of non-target speaker {e.args[0]}") from e
    missing = sorted(set(range(len(speaker_ids))) - set(labels.tolist()))
    if missing:
        raise InsufficientDataError(f"empty class: target speaker {speaker_ids[missing[0]]} has no enrollment records")
    return stack_vectors(records, corpus.dimension), labels, speaker_ids


# ---------------------------------------------------------------------------
# Shared SGD plumbing
# ---------------------------------------------------------------------------

def _mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values)


def _adapter_for(config: TrainConfig, dim: int) -> AdapterNetwork:
    dims = tuple(config.adapter_dims) if config.adapter_dims else (dim,) * 4
    if dims[0] != dim:
        raise DimensionMismatchError(dims[0], dim, 'adapter input vs enrollment embeddings')
    if config.adapter_init == ADAPTER_INIT_IDENTITY:
        return identity_adapter(dims)
    return init_adapter(dims, config.seed)


def _embed(adapter: AdapterNetwork, X: np.ndarray, normalize: bool) -> Tuple[np.ndarray, np.ndarray]:
    raw = forward(adapter, X)
    return (normalize_rows(raw) if normalize else raw), raw


def _backprop(adapter: AdapterNetwork, inputs: np.ndarray, raw: np.ndarray, grad_emb: np.ndarray,
              normalize: bool):
    if normalize:
        grad_emb = normalize_backward(raw, grad_emb)
    return backward(adapter, inputs, grad_emb)


def _epoch_batches(rng: np.random.Generator, n: int, batch_size: Optional[int]) -> List[np.ndarray]:
    order = rng.permutation(n)
    size = n if batch_size is None else min(batch_size, n)
    return [order[start:start + size] for start in range(0, n, size)]


def _apply_head_gradients(head: SrplHead, grads: HeadGradients, hyper: Hyperparameters) -> None:
    lr = hyper.learning_rate
    head.rps -= lr * grads.rps
    head.cps -= lr * grads.cps
    if hyper.radius_mode == RADIUS_FIXED:
        return
    if hyper.radius_mode == RADIUS_SHARED:
        head.radii -= lr * grads.radii.sum()
    else:
        head.radii -= lr * grads.radii
    np.maximum(head.radii, 0.0, out=head.radii)


def _check_finite(epoch: int, breakdown: LossBreakdown, *params) -> None:
    if not math.isfinite(breakdown.total):
        raise NumericFailureError(epoch, 'loss')
    for holder in params:
        if not holder.is_finite():
            raise NumericFailureError(epoch, 'parameter')


def _log_epoch(config: TrainConfig, epoch: int, breakdown: LossBreakdown) -> None:
    if epoch % config.log_every == 0 or epoch == config.hyper.epochs:
        logger.info(
            f"[{get_mode_label(config.mode)}] epoch {epoch}/{config.hyper.epochs} "
            f"total={breakdown.total:.6f} l_s={breakdown.l_s:.6f} l_r={breakdown.l_r:.6f} "
            f"l_c={breakdown.l_c:.6f} h_neg={breakdown.h_neg:.6f}"
        )


def _ce_breakdown(losses: np.ndarray) -> LossBreakdown:
    value = _mean(losses)
    return LossBreakdown(value, 0.0, 0.0, 0.0, value)


# ---------------------------------------------------------------------------
# SRPL / SRPL+
# ---------------------------------------------------------------------------

def train_srpl(X: np.ndarray, labels: np.ndarray, speaker_ids: List[str], config: TrainConfig,
               pool: Optional[NegativePool] = None) -> Tuple[EnrolledModel, History]:
    """
    Jointly optimize the adapter and an SRPL head.

    Args:
        X: Raw enrollment embeddings (n, D)
        labels: Class index per row, in [0, K)
        speaker_ids: Class-index-to-speaker map (K entries)
        config: Mode srpl or srpl_plus; negatives are ignored for srpl
        pool: Prepared negative pool; None or empty degenerates SRPL+ to SRPL

    Returns:
        (EnrolledModel, history of epochs + 1 LossBreakdown entries)

    Raises:
        NumericFailureError: Non-finite loss or parameter, with the epoch index
    """
    hyper = config.hyper
    norm = config.normalize_output
    k_known = len(speaker_ids)
    adapter = _adapter_for(config, X.shape[1])

    plus = config.mode == MODE_SRPL_PLUS and pool is not None and pool.size > 0
    m_syn = pool.n_pseudo if plus else 0
    if plus and pool.vectors.shape[1] != X.shape[1]:
        raise DimensionMismatchError(X.shape[1], pool.vectors.shape[1], 'negative pool vs enrollment embeddings')

    E0, _ = _embed(adapter, X, norm)
    groups = [E0[labels == k] for k in range(k_known)]
    neg_groups = []
    if plus:
        N0, _ = _embed(adapter, pool.vectors, norm)
        neg_groups = [N0[pool.pseudo_labels == j] for j in range(m_syn)]
    head = init_head(k_known, m_syn, E0.shape[1], groups, neg_groups, config.seed + 1, hyper.radius_init)

    def loss_on(Xb, yb, Nb=None, nyb=None):
        if Nb is None:
            emb, raw = _embed(adapter, Xb, norm)
            return srpl_loss(head, hyper, emb, yb), Xb, raw
        inputs = np.vstack([Xb, Nb])
        emb, raw = _embed(adapter, inputs, norm)
        b = Xb.shape[0]
        return srpl_plus_loss(head, hyper, emb[:b], yb, emb[b:], nyb), inputs, raw

    def full_breakdown() -> LossBreakdown:
        if plus:
            return loss_on(X, labels, pool.vectors, pool.pseudo_labels)[0].breakdown
        return loss_on(X, labels)[0].breakdown

    history = [full_breakdown()]
    _check_finite(0, history[0])
    rng = np.random.default_rng(config.seed + 2)

    for epoch in range(1, hyper.epochs + 1):
        for idx in _epoch_batches(rng, X.shape[0], hyper.batch_size):
            if plus:
                nidx = rng.choice(pool.size, size=len(idx), replace=pool.size < len(idx))
                result, inputs, raw = loss_on(X[idx], labels[idx], pool.vectors[nidx], pool.pseudo_labels[nidx])
                grad_emb = np.vstack([result.grad_known, result.grad_negative])
            else:
                result, inputs, raw = loss_on(X[idx], labels[idx])
                grad_emb = result.grad_known
            _check_finite(epoch, result.breakdown)
            adapter_grads = _backprop(adapter, inputs, raw, grad_emb, norm)
            apply_gradients(adapter, adapter_grads, hyper.learning_rate)
            _apply_head_gradients(head, result.grad_head, hyper)

        breakdown = full_breakdown()
        _check_finite(epoch, breakdown, adapter, head)
        history.append(breakdown)
        _log_epoch(config, epoch, breakdown)

    model = EnrolledModel(config.mode, adapter, head, list(speaker_ids), hyper, norm)
    return model, history


def enroll(split: OpenSetSplit, corpus: Corpus, negatives: Optional[Sequence[EmbeddingRecord]],
           config: TrainConfig, extra_enroll: Optional[Sequence[EmbeddingRecord]] = None) -> Tuple[EnrolledModel, History]:
    """
    Enroll the split's target speakers under config.mode.

    Args:
        split: Fold whose enrollment records are trained on
        corpus: Corpus the split indexes
        negatives: Negative pool records (SRPL+ only; may be empty)
        config: Training configuration
        extra_enroll: Additional enrollment records for target speakers

    Returns:
        (EnrolledModel, loss history)
    """
    X, labels, speaker_ids = enrollment_set(split, corpus, extra_enroll)
    logger.info(
        f"Enrolling fold {split.fold_index}: {len(speaker_ids)} speakers, {X.shape[0]} utterances, "
        f"mode {get_mode_label(config.mode)}"
    )
    if config.mode == MODE_SOFTMAX:
        return train_softmax(X, labels, speaker_ids, config)
    if config.mode == MODE_PROTOTYPE:
        return train_prototype(X, labels, speaker_ids, config)
    if config.mode == MODE_COSINE:
        return train_cosine(X, labels, speaker_ids, config)
    pool = None
    if config.mode == MODE_SRPL_PLUS:
        pool = prepare_negatives(negatives, config, corpus.dimension)
        if pool.size == 0:
            logger.warning("SRPL+ with an empty negative pool trains as plain SRPL")
        else:
            logger.info(f"Negative pool: {pool.size} records in {pool.n_pseudo} pseudo-classes")
    return train_srpl(X, labels, speaker_ids, config, pool)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def train_softmax(X: np.ndarray, labels: np.ndarray, speaker_ids: List[str],
                  config: TrainConfig) -> Tuple[EnrolledModel, History]:
    """SoftmaxTune: adapter plus a K-way linear classifier under cross-entropy."""
    hyper = config.hyper
    norm = config.normalize_output
    adapter = _adapter_for(config, X.shape[1])
    head = baseline_service.init_softmax_head(adapter.output_dim, len(speaker_ids), config.seed + 1)

    def full_breakdown() -> LossBreakdown:
        emb, _ = _embed(adapter, X, norm)
        return _ce_breakdown(baseline_service.softmax_loss(head, emb, labels)[0])

    history = [full_breakdown()]
    _check_finite(0, history[0])
    rng = np.random.default_rng(config.seed + 2)
    for epoch in range(1, hyper.epochs + 1):
        for idx in _epoch_batches(rng, X.shape[0], hyper.batch_size):
            Xb = X[idx]
            emb, raw = _embed(adapter, Xb, norm)
            losses, grad_emb, grad_head = baseline_service.softmax_loss(head, emb, labels[idx])
            _check_finite(epoch, _ce_breakdown(losses))
            apply_gradients(adapter, _backprop(adapter, Xb, raw, grad_emb, norm), hyper.learning_rate)
            head.weights -= hyper.learning_rate * grad_head.weights
            head.bias -= hyper.learning_rate * grad_head.bias
        breakdown = full_breakdown()
        _check_finite(epoch, breakdown, adapter)
        history.append(breakdown)
        _log_epoch(config, epoch, breakdown)
    return EnrolledModel(MODE_SOFTMAX, adapter, head, list(speaker_ids), hyper, norm), history


def train_prototype(X: np.ndarray, labels: np.ndarray, speaker_ids: List[str],
                    config: TrainConfig) -> Tuple[EnrolledModel, History]:
    """
    ProtoTypeTune: prototypes are the class means of the current adapted
    embeddings, recomputed at the start of every epoch and held constant
    within it. The final table is computed from the trained adapter.
    """
    hyper = config.hyper
    norm = config.normalize_output
    k_known = len(speaker_ids)
    adapter = _adapter_for(config, X.shape[1])

    def current_table():
        emb, _ = _embed(adapter, X, norm)
        return baseline_service.prototype_table(emb, labels, k_known), emb

    def full_breakdown() -> LossBreakdown:
        table, emb = current_table()
        return _ce_breakdown(baseline_service.prototype_loss(table, emb, labels)[0])

    history = [full_breakdown()]
    _check_finite(0, history[0])
    rng = np.random.default_rng(config.seed + 2)
    for epoch in range(1, hyper.epochs + 1):
        table, _ = current_table()
        for idx in _epoch_batches(rng, X.shape[0], hyper.batch_size):
            Xb = X[idx]
            emb, raw = _embed(adapter, Xb, norm)
            losses, grad_emb = baseline_service.prototype_loss(table, emb, labels[idx])
            _check_finite(epoch, _ce_breakdown(losses))
            apply_gradients(adapter, _backprop(adapter, Xb, raw, grad_emb, norm), hyper.learning_rate)
        breakdown = full_breakdown()
        _check_finite(epoch, breakdown, adapter)
        history.append(breakdown)
        _log_epoch(config, epoch, breakdown)
    table, _ = current_table()
    return EnrolledModel(MODE_PROTOTYPE, adapter, table, list(speaker_ids), hyper, norm), history


def train_cosine(X: np.ndarray, labels: np.ndarray, speaker_ids: List[str],
                 config: TrainConfig) -> Tuple[EnrolledModel, History]:
    """CosineDirect: no adapter and no training; history is empty."""
    head = baseline_service.cosine_head(X, labels, len(speaker_ids), config.cosine_scale)
    return EnrolledModel(MODE_COSINE, None, head, list(speaker_ids), config.hyper, False), []


def enroll_baseline_softmax(split: OpenSetSplit, corpus: Corpus, config: TrainConfig,
                            extra_enroll=None) -> Tuple[EnrolledModel, History]:
    X, labels, speaker_ids = enrollment_set(split, corpus, extra_enroll)
    return train_softmax(X, labels, speaker_ids, config)


def enroll_baseline_prototype(split: OpenSetSplit, corpus: Corpus, config: TrainConfig,
                              extra_enroll=None) -> Tuple[EnrolledModel, History]:
    X, labels, speaker_ids = enrollment_set(split, corpus, extra_enroll)
    return train_prototype(X, labels, speaker_ids, config)


def enroll_cosine(split: OpenSetSplit, corpus: Corpus, config: TrainConfig,
                  extra_enroll=None) -> Tuple[EnrolledModel, History]:
    X, labels, speaker_ids = enrollment_set(split, corpus, extra_enroll)
    return train_cosine(X, labels, speaker_ids, config)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def adapted_embeddings(model: EnrolledModel, X) -> np.ndarray:
    """Embeddings the model's head scores: adapter output, or the raw input for CosineDirect."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionMismatchError(model.input_dim, X.shape[-1], 'model input')
    if model.adapter is None:
        return X
    return _embed(model.adapter, X, model.normalize_output)[0]


def model_logits(model: EnrolledModel, X) -> np.ndarray:
    E = adapted_embeddings(model, X)
    if model.mode in SRPL_MODES:
        return rp_logits(model.head, E, model.hyper.logit_metric)
    if model.mode == MODE_SOFTMAX:
        return baseline_service.softmax_logits(model.head, E)
    if model.mode == MODE_PROTOTYPE:
        return baseline_service.prototype_logits(model.head, E)
    return baseline_service.cosine_logits(model.head, E)


def predict_batch(model: EnrolledModel, X) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Score a batch of raw embeddings.

    Returns:
        (scores (n, K) summing to 1 per row, best class (n,), confidence (n,))
    """
    scores = softmax(model_logits(model, X), axis=1)
    best = np.argmax(scores, axis=1)
    return scores, best, scores[np.arange(scores.shape[0]), best]


def predict(model: EnrolledModel, emb_in) -> Tuple[np.ndarray, int, float]:
    """Posterior over the K known speakers for one raw embedding; no rejection here."""
    emb_in = np.asarray(emb_in, dtype=np.float64)
    if emb_in.ndim != 1:
        raise DimensionMismatchError(model.input_dim, emb_in.shape, 'predict input (expected a vector)')
    scores, best, confidence = predict_batch(model, emb_in[np.newaxis, :])
    return scores[0], int(best[0]), float(confidence[0])
