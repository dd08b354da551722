"""
Adapter Service - the 3-layer MLP mapping input embeddings to Emb_s

    z1 = x W1 + b1, a1 = relu(z1)
    z2 = a1 W2 + b2, a2 = relu(z2)
    out = a2 W3 + b3

ReLU's subgradient at exactly 0 is 0. The output is not length-normalized
unless the caller asks for it (normalize_rows / normalize_backward).
"""
import logging
from typing import Sequence, Tuple

import numpy as np

from app.core.exceptions import DimensionMismatchError, UsageError
from app.db.models import AdapterGradients, AdapterNetwork

logger = logging.getLogger(__name__)


def _check_dims(layer_dims: Sequence[int]) -> Tuple[int, int, int, int]:
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) != 4:
        raise UsageError(f"need 4 layer dims, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise UsageError(f"layer dims must all be >= 1, got {list(dims)}")
    return dims


def init_adapter(layer_dims: Sequence[int], seed: int) -> AdapterNetwork:
    """
    Initialize an adapter with uniform(-a, a) weights, a = sqrt(1 / fan_in), and zero biases.

    Args:
        layer_dims: [D_in, H1, H2, D_out]
        seed: RNG seed; identical seeds give identical parameters

    Returns:
        AdapterNetwork
    """
    dims = _check_dims(layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AdapterNetwork(dims, weights, biases)


def identity_adapter(layer_dims: Sequence[int]) -> AdapterNetwork:
    """Square adapter whose layers are identity maps (exact on non-negative inputs)."""
    dims = _check_dims(layer_dims)
    if len(set(dims)) != 1:
        raise UsageError(f"identity adapter needs equal layer dims, got {list(dims)}")
    d = dims[0]
    return AdapterNetwork(dims, [np.eye(d) for _ in range(3)], [np.zeros(d) for _ in range(3)])


def _as_batch(net: AdapterNetwork, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[np.newaxis, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise DimensionMismatchError(net.input_dim, batch.shape[-1], 'adapter input')
    return batch, single


def _forward_cache(net: AdapterNetwork, batch: np.ndarray):
    w1, w2, w3 = net.weights
    b1, b2, b3 = net.biases
    z1 = batch @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2
    a2 = np.maximum(z2, 0.0)
    out = a2 @ w3 + b3
    return (z1, a1, z2, a2), out


def forward(net: AdapterNetwork, x) -> np.ndarray:
    """
    Map an input vector (D_in,) or batch (n, D_in) to adapted embeddings.
    Rows are processed independently.
    """
    batch, single = _as_batch(net, x)
    _, out = _forward_cache(net, batch)
    return out[0] if single else out


def backward(net: AdapterNetwork, x_batch, upstream_grad) -> AdapterGradients:
    """
    Exact gradients of a scalar loss with respect to every weight and bias.

    Args:
        net: Adapter the loss was evaluated through
        x_batch: Inputs (n, D_in)
        upstream_grad: dLoss/dEmb_s per row, (n, D_out)

    Returns:
        AdapterGradients summed over the batch
    """
    batch, single = _as_batch(net, x_batch)
    grad = np.asarray(upstream_grad, dtype=np.float64)
    if single and grad.ndim == 1:
        grad = grad[np.newaxis, :]
    if grad.shape != (batch.shape[0], net.output_dim):
        raise DimensionMismatchError(
            (batch.shape[0], net.output_dim), grad.shape, 'adapter upstream gradient'
        )
    (z1, a1, z2, a2), _ = _forward_cache(net, batch)
    w1, w2, w3 = net.weights

    dw3 = a2.T @ grad
    db3 = grad.sum(axis=0)
    dz2 = (grad @ w3.T) * (z2 > 0.0)
    dw2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2.T) * (z1 > 0.0)
    dw1 = batch.T @ dz1
    db1 = dz1.sum(axis=0)
    return AdapterGradients([dw1, dw2, dw3], [db1, db2, db3])


def normalize_rows(out: np.ndarray) -> np.ndarray:
    """Length-normalize each row; all-zero rows stay zero."""
    norms = np.linalg.norm(out, axis=-1, keepdims=True)
    return np.divide(out, norms, out=np.zeros_like(out), where=norms > 0)


def normalize_backward(out: np.ndarray, grad_normalized: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. normalize_rows(out) back to a gradient w.r.t. out."""
    norms = np.linalg.norm(out, axis=-1, keepdims=True)
    unit = np.divide(out, norms, out=np.zeros_like(out), where=norms > 0)
    radial = np.sum(unit * grad_normalized, axis=-1, keepdims=True)
    return np.divide(grad_normalized - unit * radial, norms,
                     out=np.zeros_like(out), where=norms > 0)


def apply_gradients(net: AdapterNetwork, grads: AdapterGradients, learning_rate: float) -> None:
    """Plain SGD step in place."""
    for param, grad in zip(net.parameters(), grads.parameters()):
        param -= learning_rate * grad
