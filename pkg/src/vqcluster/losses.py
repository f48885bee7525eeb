"""Token- and cluster-level cross-entropy losses with verified gradients.

The cluster probability of block j aggregates the token probabilities
Y[j*m : (j+1)*m] by exponentiating the probabilities themselves (values in
[0, 1], so the exponentials lie in [1, e]) and normalizing over the whole
vocabulary. The combined objective is tce + lam * cce. All math is float64;
gradients are hand-derived and checked against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_cluster_shape, check_index, check_logits, check_prob_vector

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class LossBreakdown:
    """Combined objective split into its parts; total = tce + lam * cce."""

    tce: float
    cce: float
    total: float
    lam: float
    clamped: bool = False  # a log argument hit the 1e-300 floor


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax (max-subtracted), float64."""
    arr = check_logits(logits)
    shifted = arr - arr.max()
    e = np.exp(shifted)
    return e / e.sum()


def _neg_log(p: float) -> tuple[float, bool]:
    if p < LOG_FLOOR:
        return -float(np.log(LOG_FLOOR)), True
    return -float(np.log(p)), False


def token_ce(probs, target: int) -> float:
    """-log probs[target]; probabilities below 1e-300 are clamped."""
    arr = check_prob_vector(probs)
    target = check_index(target, arr.size, "target")
    value, _ = _neg_log(float(arr[target]))
    return value


def cluster_probs(probs, n: int, m: int) -> np.ndarray:
    """Cluster-level distribution from a token-level one.

    Block j's mass is sum(exp(Y_i)) over its m tokens divided by the sum of
    exp(Y_i) over all tokens; the numerators partition the denominator, so
    the result sums to 1 up to float rounding.
    """
    arr = check_prob_vector(probs)
    check_cluster_shape(arr.size, n, m)
    groups = np.exp(arr).reshape(n, m).sum(axis=1)
    return groups / groups.sum()


def cluster_ce(probs, target_cluster: int, n: int, m: int) -> float:
    """-log of the target cluster's aggregated probability."""
    cp = cluster_probs(probs, n, m)
    target_cluster = check_index(target_cluster, n, "target cluster")
    value, _ = _neg_log(float(cp[target_cluster]))
    return value


def combined_loss(logits, target: int, lam: float, n: int, m: int) -> LossBreakdown:
    """tce + lam * cce for one prediction; the target cluster is target // m."""
    arr = check_logits(logits)
    check_cluster_shape(arr.size, n, m)
    target = check_index(target, arr.size, "target")
    if lam < 0:
        raise ValueError(f"loss weight must be >= 0, got {lam}")
    probs = softmax(arr)
    tce, clamped_t = _neg_log(float(probs[target]))
    cp = cluster_probs(probs, n, m)
    cce, clamped_c = _neg_log(float(cp[target // m]))
    return LossBreakdown(
        tce=tce,
        cce=cce,
        total=tce + lam * cce,
        lam=lam,
        clamped=clamped_t or clamped_c,
    )


def combined_loss_grad(logits, target: int, lam: float, n: int, m: int) -> np.ndarray:
    """Analytic d(total)/d(logits).

    The token part is softmax(l) - onehot(target). The cluster part chains
    dcce/dY_i = exp(Y_i) * (1/B - [i in target block]/A), with A the target
    block's exp-sum and B the full exp-sum, through the softmax Jacobian:
    dcce/dl_k = Y_k * (g_k - <g, Y>).
    """
    arr = check_logits(logits)
    check_cluster_shape(arr.size, n, m)
    target = check_index(target, arr.size, "target")
    if lam < 0:
        raise ValueError(f"loss weight must be >= 0, got {lam}")
    s = softmax(arr)
    grad = s.copy()
    grad[target] -= 1.0
    if lam != 0.0:
        e = np.exp(s)
        b = e.sum()
        block = slice((target // m) * m, (target // m + 1) * m)
        a = e[block].sum()
        g = e / b
        g[block] -= e[block] / a
        grad += lam * s * (g - (g * s).sum())
    return grad


def finite_diff_check(logits, target: int, lam: float, n: int, m: int, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central
    differences of the total loss: |analytic - fd| / (|analytic| + 1e-12)."""
    if h <= 0:
        raise ValueError(f"step size must be > 0, got {h}")
    arr = check_logits(logits)
    analytic = combined_loss_grad(arr, target, lam, n, m)
    worst = 0.0
    for k in range(arr.size):
        bumped = arr.copy()
        bumped[k] = arr[k] + h
        up = combined_loss(bumped, target, lam, n, m).total
        bumped[k] = arr[k] - h
        down = combined_loss(bumped, target, lam, n, m).total
        fd = (up - down) / (2.0 * h)
        rel = abs(analytic[k] - fd) / (abs(analytic[k]) + 1e-12)
        worst = max(worst, float(rel))
    return worst


def batch_combined_loss_and_grad(logits, targets, lam: float, n: int, m: int):
    """Row-wise combined loss and gradient for a (B, N) logit matrix.

    Returns (tce, cce, grad) with shapes (B,), (B,), (B, N). Matches the
    single-vector functions exactly; exists so training loops avoid a
    per-position Python round trip.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a (B, N) logit matrix, got shape {arr.shape}")
    check_cluster_shape(arr.shape[1], n, m)
    tgt = np.asarray(targets, dtype=np.int64)
    if tgt.shape != (arr.shape[0],):
        raise ValueError(f"targets shape {tgt.shape} does not match batch {arr.shape[0]}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= arr.shape[1]):
        raise IndexError(f"target out of range [0, {arr.shape[1]})")

    rows = np.arange(arr.shape[0])
    shifted = arr - arr.max(axis=1, keepdims=True)
    e_l = np.exp(shifted)
    s = e_l / e_l.sum(axis=1, keepdims=True)

    tce = -np.log(np.maximum(s[rows, tgt], LOG_FLOOR))

    e = np.exp(s)
    b = e.sum(axis=1)
    group_sums = e.reshape(arr.shape[0], n, m).sum(axis=2)
    tcluster = tgt // m
    a = group_sums[rows, tcluster]
    cce = -np.log(np.maximum(a / group_sums.sum(axis=1), LOG_FLOOR))

    grad = s.copy()
    grad[rows, tgt] -= 1.0
    if lam != 0.0:
        g = e / b[:, None]
        in_block = (np.arange(arr.shape[1]) // m)[None, :] == tcluster[:, None]
        g -= np.where(in_block, e / a[:, None], 0.0)
        gs = (g * s).sum(axis=1)
        grad += lam * s * (g - gs[:, None])
    return tce, cce, grad
