"""Central finite differences for checking analytic gradients."""

from typing import Callable, Iterable, Optional, Tuple

import numpy as np

DEFAULT_STEP = 1e-5
DEFAULT_FLOOR = 1e-4


def sample_indices(shape: Tuple[int, ...], count: Optional[int], rng: np.random.Generator):
    """All indices of `shape`, or `count` of them drawn without replacement."""
    every = list(np.ndindex(*shape))
    if count is None or count >= len(every):
        return every
    picked = rng.choice(len(every), size=count, replace=False)
    return [every[i] for i in sorted(picked)]


def central_difference(f: Callable[[], float], param: np.ndarray, indices: Iterable,
                       step: float = DEFAULT_STEP) -> np.ndarray:
    """
    Numeric partial derivatives of f() with respect to param[idx], perturbing
    param in place and restoring it afterwards.

    Returns:
        Array of derivatives in the order of `indices`
    """
    values = []
    for idx in indices:
        original = param[idx]
        param[idx] = original + step
        plus = f()
        param[idx] = original - step
        minus = f()
        param[idx] = original
        values.append((plus - minus) / (2.0 * step))
    return np.array(values)


def relative_error(analytic, numeric, floor: float = DEFAULT_FLOOR) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale))
