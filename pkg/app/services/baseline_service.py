"""
Baseline Service - comparison heads for the enrollment table

SoftmaxTune:   K-way linear classifier on adapted embeddings, cross-entropy.
ProtoTypeTune: logits = -||emb - P_k||^2 against per-class mean prototypes,
               recomputed from the current embeddings by the trainer.
CosineDirect:  no tuning; scaled cosine similarity of raw inputs to class means.
"""
import logging
from typing import Tuple

import numpy as np

from app.core.exceptions import DimensionMismatchError, InsufficientDataError
from app.core.status import METRIC_EUCLIDEAN
from app.db.models import CosineHead, PrototypeHead, SoftmaxHead
from app.services.srpl_service import cross_entropy, point_logits, point_logits_backward

logger = logging.getLogger(__name__)


def class_means(E: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Row k is the mean of the rows of E labeled k."""
    means = np.zeros((n_classes, E.shape[1]))
    for k in range(n_classes):
        members = E[labels == k]
        if members.shape[0] == 0:
            raise InsufficientDataError(f"empty class: class {k} has no embeddings")
        means[k] = members.mean(axis=0)
    return means


# SoftmaxTune

def init_softmax_head(dim: int, n_classes: int, seed: int) -> SoftmaxHead:
    bound = np.sqrt(1.0 / dim)
    rng = np.random.default_rng(seed)
    return SoftmaxHead(rng.uniform(-bound, bound, size=(dim, n_classes)), np.zeros(n_classes))


def softmax_logits(head: SoftmaxHead, E: np.ndarray) -> np.ndarray:
    if E.shape[1] != head.weights.shape[0]:
        raise DimensionMismatchError(head.weights.shape[0], E.shape[1], 'softmax head input')
    return E @ head.weights + head.bias


def softmax_loss(head: SoftmaxHead, E: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, SoftmaxHead]:
    """
    Per-sample cross-entropy with the gradients of their batch mean.

    Returns:
        (losses, dL/dE, gradient head shaped like `head`)
    """
    n = E.shape[0]
    losses, G = cross_entropy(softmax_logits(head, E), labels)
    G = G / n
    return losses, G @ head.weights.T, SoftmaxHead(E.T @ G, G.sum(axis=0))


# ProtoTypeTune

def prototype_table(E: np.ndarray, labels: np.ndarray, n_classes: int) -> PrototypeHead:
    return PrototypeHead(class_means(E, labels, n_classes))


def prototype_logits(head: PrototypeHead, E: np.ndarray) -> np.ndarray:
    if E.shape[1] != head.prototypes.shape[1]:
        raise DimensionMismatchError(head.prototypes.shape[1], E.shape[1], 'prototype head input')
    return point_logits(head.prototypes, E, METRIC_EUCLIDEAN)


def prototype_loss(head: PrototypeHead, E: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Cross-entropy over negative squared distances; prototypes are held constant."""
    n = E.shape[0]
    losses, G = cross_entropy(prototype_logits(head, E), labels)
    grad_e, _ = point_logits_backward(head.prototypes, E, METRIC_EUCLIDEAN, G / n)
    return losses, grad_e


# CosineDirect

def cosine_head(X: np.ndarray, labels: np.ndarray, n_classes: int, scale: float) -> CosineHead:
    return CosineHead(class_means(X, labels, n_classes), float(scale))


def cosine_logits(head: CosineHead, X: np.ndarray) -> np.ndarray:
    if X.shape[1] != head.centroids.shape[1]:
        raise DimensionMismatchError(head.centroids.shape[1], X.shape[1], 'cosine head input')
    x_norm = np.linalg.norm(X, axis=1, keepdims=True)
    c_norm = np.linalg.norm(head.centroids, axis=1)
    denom = x_norm * c_norm[np.newaxis, :]
    similarity = np.divide(X @ head.centroids.T, denom, out=np.zeros((X.shape[0], head.centroids.shape[0])),
                           where=denom > 0)
    return head.scale * similarity
