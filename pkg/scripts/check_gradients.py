#!/usr/bin/env python3
"""
SRPL Gradient Check
Compares analytic gradients of the SRPL / SRPL+ losses against central
finite differences over random head configurations, then through the adapter.

Usage: python scripts/check_gradients.py [--configs 100] [--seed 0]
"""
import argparse
import itertools
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.core.status import LOGIT_METRICS
from app.db.models import Hyperparameters, SrplHead
from app.services.adapter_service import backward, forward, init_adapter
from app.services.srpl_service import srpl_plus_loss
from app.utils.gradcheck import central_difference, relative_error, sample_indices

TOLERANCE = 1e-4
COORDS_PER_PARAM = 12


def random_head(rng, k_known, m_syn, dim):
    rows = k_known + m_syn
    return SrplHead(rng.normal(size=(rows, dim)), rng.normal(size=(rows, dim)),
                    rng.uniform(0.0, dim, size=k_known), k_known, m_syn)


def check_head_config(rng, k_known, dim, m_syn, metric):
    head = random_head(rng, k_known, m_syn, dim)
    hyper = Hyperparameters(lambda_r=rng.uniform(0.1, 1.0), lambda_c=rng.uniform(0.1, 1.0),
                            lambda_ns=rng.uniform(0.1, 1.0), lambda_syn=rng.uniform(0.1, 1.0),
                            logit_metric=metric)
    E = rng.normal(size=(5, dim))
    labels = rng.integers(0, k_known, size=5)
    N = rng.normal(size=(4, dim))
    neg_labels = rng.integers(0, m_syn, size=4) if m_syn else None

    def total():
        return srpl_plus_loss(head, hyper, E, labels, N, neg_labels).breakdown.total

    result = srpl_plus_loss(head, hyper, E, labels, N, neg_labels)
    pairs = [
        (head.rps, result.grad_head.rps),
        (head.cps, result.grad_head.cps),
        (head.radii, result.grad_head.radii),
        (E, result.grad_known),
        (N, result.grad_negative)
    ]
    worst = 0.0
    for param, analytic in pairs:
        indices = sample_indices(param.shape, COORDS_PER_PARAM, rng)
        numeric = central_difference(total, param, indices)
        worst = max(worst, relative_error([analytic[i] for i in indices], numeric))
    return worst


def check_adapter_config(rng, k_known, dim, m_syn):
    net = init_adapter([4, 6, 6, dim], int(rng.integers(1 << 30)))
    head = random_head(rng, k_known, m_syn, dim)
    hyper = Hyperparameters()
    X = rng.normal(size=(6, 4))
    labels = rng.integers(0, k_known, size=6)
    X_neg = rng.normal(size=(3, 4))
    neg_labels = rng.integers(0, m_syn, size=3) if m_syn else None

    def total():
        out = forward(net, np.vstack([X, X_neg]))
        return srpl_plus_loss(head, hyper, out[:6], labels, out[6:], neg_labels).breakdown.total

    inputs = np.vstack([X, X_neg])
    out = forward(net, inputs)
    result = srpl_plus_loss(head, hyper, out[:6], labels, out[6:], neg_labels)
    grads = backward(net, inputs, np.vstack([result.grad_known, result.grad_negative]))
    worst = 0.0
    for param, analytic in zip(net.parameters(), grads.parameters()):
        indices = sample_indices(param.shape, COORDS_PER_PARAM, rng)
        numeric = central_difference(total, param, indices)
        worst = max(worst, relative_error([analytic[i] for i in indices], numeric))
    return worst


def main():
    parser = argparse.ArgumentParser(description="Finite-difference gradient check for SRPL losses")
    parser.add_argument('--configs', type=int, default=100)
    parser.add_argument('--seed', type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    grid = list(itertools.product((2, 3, 5, 10), (2, 8, 32), (0, 5), sorted(LOGIT_METRICS)))

    print("=" * 70)
    print("SRPL Gradient Check")
    print("=" * 70)
    print(f"Configurations: {args.configs} head + {args.configs // 5} adapter, tolerance {TOLERANCE:g}")
    print("-" * 70)

    started = time.perf_counter()
    failures = 0
    worst = 0.0
    for i in range(args.configs):
        k_known, dim, m_syn, metric = grid[i % len(grid)]
        error = check_head_config(rng, k_known, dim, m_syn, metric)
        worst = max(worst, error)
        if error > TOLERANCE:
            failures += 1
            print(f"✗ head K={k_known} D={dim} M={m_syn} {metric}: relative error {error:.2e}")
    for i in range(args.configs // 5):
        k_known, dim, m_syn, _ = grid[i % len(grid)]
        error = check_adapter_config(rng, k_known, dim, m_syn)
        worst = max(worst, error)
        if error > TOLERANCE:
            failures += 1
            print(f"✗ adapter K={k_known} D={dim} M={m_syn}: relative error {error:.2e}")

    print("-" * 70)
    print(f"Worst relative error: {worst:.2e} ({time.perf_counter() - started:.1f}s)")
    if failures:
        print(f"✗ {failures} configuration(s) exceeded the tolerance")
        return 1
    print("✓ All analytic gradients match finite differences")
    return 0


if __name__ == '__main__':
    sys.exit(main())
