"""Balanced k-means over codebook rows, cluster statistics, and the exact
small-N ordering oracle.

The clusterer enforces equal cluster sizes with a greedy capacity pass:
points are visited in ascending order of distance to their nearest centroid
and each takes the closest centroid that still has room. The loop is fully
deterministic for a given seed (counter-based Philox PRNG, stable sorts,
index tie-breaks), so assignments reproduce bit-for-bit across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .codebook import Codebook
from .rearrange import PermutationMap


@dataclass
class ClusterAssignment:
    """Result of balanced k-means: every cluster has exactly m members."""

    assignment: np.ndarray  # (N,) cluster ids in [0, n)
    centroids: np.ndarray  # (n, C) float64
    n: int
    m: int
    seed: int
    iterations_run: int
    converged: bool

    def cluster_members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)


@dataclass
class ClusterStats:
    """Within-cluster distance statistics, per cluster and averaged.

    For each cluster: mean/min/max over pairwise member L2 distances, and
    the mean member-to-centroid distance. Aggregates average the per-cluster
    values over all clusters; size-1 clusters contribute 0 to the pairwise
    statistics.
    """

    mean_dist: float
    closest_dist: float
    largest_dist: float
    inner_mse: float
    per_cluster_mean: np.ndarray
    per_cluster_closest: np.ndarray
    per_cluster_largest: np.ndarray
    per_cluster_inner_mse: np.ndarray


def _point_centroid_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact (N, n) Euclidean distances, chunked to bound temp memory."""
    n_points = points.shape[0]
    out = np.empty((n_points, centroids.shape[0]), dtype=np.float64)
    block = max(1, int(2**23 // max(1, centroids.shape[0] * centroids.shape[1])))
    for start in range(0, n_points, block):
        chunk = points[start : start + block]
        d2 = ((chunk[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        out[start : start + block] = np.sqrt(d2)
    return out


def _greedy_balanced_pass(dist: np.ndarray, m: int) -> np.ndarray:
    """Capacity-constrained assignment for one iteration.

    Visit points ascending by distance to their nearest centroid (ties by
    point index); each point takes its nearest centroid with open capacity
    (ties by lower cluster id). No cluster ever exceeds m members.
    """
    n_points, n_clusters = dist.shape
    point_order = np.argsort(dist.min(axis=1), kind="stable")
    pref = np.argsort(dist, axis=1, kind="stable")
    sizes = np.zeros(n_clusters, dtype=np.int64)
    assignment = np.empty(n_points, dtype=np.int64)
    for p in point_order:
        for c in pref[p]:
            if sizes[c] < m:
                assignment[p] = c
                sizes[c] += 1
                break
    return assignment


def _sse(points: np.ndarray, centroids: np.ndarray, assignment: np.ndarray) -> float:
    return float(((points - centroids[assignment]) ** 2).sum())


def _fit_balanced(points: np.ndarray, n: int, max_iters: int, seed: int):
    n_points = points.shape[0]
    if n < 1:
        raise ValueError(f"cluster count must be >= 1, got {n}")
    if n > n_points:
        raise ValueError(f"cluster count {n} exceeds point count {n_points}")
    if n_points % n:
        raise ValueError(f"cluster count {n} does not divide point count {n_points}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    m = n_points // n

    rng = np.random.Generator(np.random.Philox(seed))
    centroids = points[rng.choice(n_points, size=n, replace=False)].copy()

    assignment = None
    converged = False
    iterations_run = 0
    sse_history: list[tuple[float, float]] = []
    for _ in range(max_iters):
        new_assignment = _greedy_balanced_pass(_point_centroid_dists(points, centroids), m)
        if assignment is not None and np.array_equal(new_assignment, assignment):
            converged = True
            break
        assignment = new_assignment
        iterations_run += 1
        pre = _sse(points, centroids, assignment)
        for j in range(n):
            centroids[j] = points[assignment == j].mean(axis=0)
        sse_history.append((pre, _sse(points, centroids, assignment)))
    return assignment, centroids, iterations_run, converged, sse_history


def balanced_kmeans(cb: Codebook, n: int, max_iters: int = 100, seed: int = 0) -> ClusterAssignment:
    """Cluster codebook rows into n groups of exactly N/n members each.

    ``iterations_run`` counts completed centroid-update iterations; a final
    pass that reproduces the previous assignment sets ``converged`` without
    incrementing the counter.
    """
    assignment, centroids, iterations_run, converged, _ = _fit_balanced(
        cb.as_float64(), n, max_iters, seed
    )
    return ClusterAssignment(
        assignment=assignment,
        centroids=centroids,
        n=n,
        m=cb.n_codes // n,
        seed=seed,
        iterations_run=iterations_run,
        converged=converged,
    )


class BalancedKMeans(BaseEstimator, ClusterMixin):
    """K-means with exact equal-size clusters, scikit-learn style.

    Requires ``n_clusters`` to divide the number of samples. Capacity is
    enforced during assignment, not post-hoc, so every intermediate state is
    feasible.

    Parameters
    ----------
    n_clusters : int, default=8
    max_iter : int, default=100
    random_state : int, default=0
        Seeds the counter-based PRNG (numpy Philox) that picks the initial
        centroids from the data rows without replacement.

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    labels_ : ndarray of shape (n_samples,)
    n_iter_ : int
    converged_ : bool
    sse_history_ : list of (float, float)
        Total squared member-to-centroid distance before and after each
        centroid update; the update step never increases it.
    """

    def __init__(self, n_clusters=8, max_iter=100, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        labels, centers, n_iter, converged, history = _fit_balanced(
            X, self.n_clusters, self.max_iter, self.random_state
        )
        self.labels_ = labels
        self.cluster_centers_ = centers
        self.n_iter_ = n_iter
        self.converged_ = converged
        self.sse_history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Nearest fitted centroid for each row (no capacity constraint)."""
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.argmin(_point_centroid_dists(X, self.cluster_centers_), axis=1)


def intra_cluster_stats(cb: Codebook, asg: ClusterAssignment) -> ClusterStats:
    """Within-cluster pairwise distances and member-to-centroid spread."""
    assignment = np.asarray(asg.assignment)
    if assignment.shape[0] != cb.n_codes:
        raise ValueError(
            f"assignment covers {assignment.shape[0]} points, codebook has {cb.n_codes}"
        )
    points = cb.as_float64()
    n = asg.n
    mean_d = np.zeros(n)
    closest_d = np.zeros(n)
    largest_d = np.zeros(n)
    inner = np.zeros(n)
    for j in range(n):
        members = points[assignment == j]
        centroid = np.asarray(asg.centroids[j], dtype=np.float64)
        inner[j] = np.sqrt(((members - centroid) ** 2).sum(axis=1)).mean()
        k = members.shape[0]
        if k < 2:
            continue
        d = np.sqrt(((members[:, None, :] - members[None, :, :]) ** 2).sum(axis=2))
        iu = np.triu_indices(k, 1)
        pair = d[iu]
        mean_d[j] = pair.mean()
        closest_d[j] = pair.min()
        largest_d[j] = pair.max()
    return ClusterStats(
        mean_dist=float(mean_d.mean()),
        closest_dist=float(closest_d.mean()),
        largest_dist=float(largest_d.mean()),
        inner_mse=float(inner.mean()),
        per_cluster_mean=mean_d,
        per_cluster_closest=closest_d,
        per_cluster_largest=largest_d,
        per_cluster_inner_mse=inner,
    )


def adjacency_cost(cb: Codebook, perm) -> float:
    """Sum of Euclidean gaps between consecutive rows after rearrangement.

    ``perm`` is a PermutationMap or a raw forward list. New position p holds
    old row inverse[p]; the cost is the length of the walk through the
    rearranged order. Summed with fsum so the total is independent of
    traversal direction.
    """
    if not isinstance(perm, PermutationMap):
        perm = PermutationMap.from_forward(perm)
    if len(perm) != cb.n_codes:
        raise ValueError(f"permutation size {len(perm)} != codebook size {cb.n_codes}")
    rows = cb.as_float64()[perm.inverse]
    gaps = np.sqrt(((rows[1:] - rows[:-1]) ** 2).sum(axis=1))
    return float(math.fsum(gaps.tolist()))


def hamiltonian_oracle(cb: Codebook, limit: int = 12) -> PermutationMap:
    """Exact minimum-adjacency-cost ordering via Held-Karp subset DP.

    O(2^N * N^2); refuses N > ``limit``. Edge weights are symmetric
    Euclidean distances. Among cost ties (within 1e-12 relative, which
    covers float accumulation noise on reversed or symmetric paths) the
    lexicographically smallest visiting order wins.
    """
    n = cb.n_codes
    if n > limit:
        raise ValueError(f"codebook size {n} exceeds oracle limit {limit}")
    if n == 1:
        return PermutationMap.identity(1)

    points = cb.as_float64()
    w = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))

    # g[mask][u] = min cost of a path visiting exactly `mask`, starting at u.
    full = (1 << n) - 1
    inf = float("inf")
    g = np.full((full + 1, n), inf)
    for u in range(n):
        g[1 << u][u] = 0.0
    for mask in range(1, full + 1):
        if mask & (mask - 1) == 0:
            continue
        for u in range(n):
            if not mask & (1 << u):
                continue
            rest = mask ^ (1 << u)
            best = inf
            for v in range(n):
                if rest & (1 << v):
                    cand = w[u, v] + g[rest][v]
                    if cand < best:
                        best = cand
            g[mask][u] = best

    best_total = g[full].min()
    tol = 1e-12 * (1.0 + abs(best_total))

    # Greedy front reconstruction: smallest vertex consistent with optimality
    # at every step yields the lexicographically smallest optimal path.
    path = []
    mask = full
    u = next(v for v in range(n) if g[full][v] <= best_total + tol)
    while True:
        path.append(u)
        rest = mask ^ (1 << u)
        if rest == 0:
            break
        budget = g[mask][u]
        step_tol = 1e-12 * (1.0 + abs(budget))
        u_next = next(
            v for v in range(n) if rest & (1 << v) and w[u, v] + g[rest][v] <= budget + step_tol
        )
        mask, u = rest, u_next

    forward = np.empty(n, dtype=np.int64)
    forward[np.asarray(path)] = np.arange(n)
    return PermutationMap.from_forward(forward)


def save_assignment(asg: ClusterAssignment, path) -> None:
    doc = {
        "n": int(asg.n),
        "m": int(asg.m),
        "seed": int(asg.seed),
        "iterations_run": int(asg.iterations_run),
        "converged": bool(asg.converged),
        "assignment": [int(a) for a in asg.assignment],
        "centroids": [[float(v) for v in row] for row in asg.centroids],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="ascii")


def load_assignment(path) -> ClusterAssignment:
    doc = json.loads(Path(path).read_text(encoding="ascii"))
    assignment = np.asarray(doc["assignment"], dtype=np.int64)
    centroids = np.asarray(doc["centroids"], dtype=np.float64)
    asg = ClusterAssignment(
        assignment=assignment,
        centroids=centroids,
        n=int(doc["n"]),
        m=int(doc["m"]),
        seed=int(doc["seed"]),
        iterations_run=int(doc["iterations_run"]),
        converged=bool(doc["converged"]),
    )
    if assignment.size and (assignment.min() < 0 or assignment.max() >= asg.n):
        raise ValueError(f"{path}: cluster id out of range [0, {asg.n})")
    return asg
