"""Input validation helpers shared across the library."""

from __future__ import annotations

import numpy as np

PROB_SUM_TOL = 1e-9


def check_logits(values) -> np.ndarray:
    """1-D finite float64 logit vector."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"logits must be a nonempty 1-D vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("logits must be finite")
    return arr


def check_prob_vector(values, tol: float = PROB_SUM_TOL) -> np.ndarray:
    """1-D probability vector: entries in [0, 1], sum within tol of 1."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"probabilities must be a nonempty 1-D vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("probabilities must be finite")
    if arr.min() < -tol or arr.max() > 1 + tol:
        raise ValueError("probabilities must lie in [0, 1]")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"probabilities sum to {total!r}, expected 1 within {tol}")
    return arr


def check_cluster_shape(size: int, n: int, m: int) -> None:
    """n clusters of m tokens must tile the vocabulary exactly."""
    if n < 1 or m < 1:
        raise ValueError(f"cluster grid must be positive, got n={n}, m={m}")
    if n * m != size:
        raise ValueError(f"n*m = {n}*{m} = {n * m} does not match vector length {size}")


def check_index(i: int, size: int, what: str = "index") -> int:
    i = int(i)
    if not 0 <= i < size:
        raise IndexError(f"{what} {i} out of range [0, {size})")
    return i
