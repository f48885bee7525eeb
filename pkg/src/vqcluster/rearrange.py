"""Cluster-contiguous re-indexing of codebooks and token streams.

After balanced clustering, the codebook is reordered so cluster j occupies
the index block [j*m, (j+1)*m). The permutation is a pure re-indexing: the
embedding vectors themselves never change, so remapped tokens looked up in
the rearranged codebook reproduce the original embedding sequence exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .codebook import Codebook

if TYPE_CHECKING:
    from .clustering import ClusterAssignment

TOK1_MAGIC = b"TOK1"
_TOK_HEADER = struct.Struct("<4sI")


@dataclass(frozen=True)
class PermutationMap:
    """Bijection over [0, N): ``forward[old_index] = new_index``.

    ``n_clusters``/``cluster_size`` record the clustering that generated the
    permutation (None for permutations built by other means, e.g. the exact
    small-N ordering oracle).
    """

    forward: np.ndarray
    inverse: np.ndarray
    n_clusters: int | None = None
    cluster_size: int | None = None

    @classmethod
    def from_forward(cls, forward, n_clusters=None, cluster_size=None) -> "PermutationMap":
        fwd = np.asarray(forward, dtype=np.int64)
        n = fwd.shape[0]
        if fwd.ndim != 1 or not np.array_equal(np.sort(fwd), np.arange(n)):
            raise ValueError("forward map is not a bijection over [0, N)")
        inv = np.empty(n, dtype=np.int64)
        inv[fwd] = np.arange(n)
        fwd.setflags(write=False)
        inv.setflags(write=False)
        return cls(forward=fwd, inverse=inv, n_clusters=n_clusters, cluster_size=cluster_size)

    @classmethod
    def identity(cls, n: int) -> "PermutationMap":
        return cls.from_forward(np.arange(n))

    def __len__(self) -> int:
        return self.forward.shape[0]


def build_permutation(asg: "ClusterAssignment") -> PermutationMap:
    """Permutation sending cluster j's members to new indices [j*m, (j+1)*m).

    Within a cluster, members keep ascending old-index order. Requires a
    balanced assignment (every cluster exactly m members).
    """
    assignment = np.asarray(asg.assignment, dtype=np.int64)
    n, m = asg.n, asg.m
    sizes = np.bincount(assignment, minlength=n)
    if sizes.shape[0] != n or not (sizes == m).all():
        raise ValueError(f"assignment is not balanced: cluster sizes {sizes.tolist()} != {m}")
    # Stable sort by cluster id groups members contiguously, ties keep old order.
    order = np.argsort(assignment, kind="stable")
    forward = np.empty(assignment.shape[0], dtype=np.int64)
    forward[order] = np.arange(assignment.shape[0])
    return PermutationMap.from_forward(forward, n_clusters=n, cluster_size=m)


def apply_permutation(cb: Codebook, perm: PermutationMap) -> Codebook:
    """Reorder codebook rows: output row ``forward[i]`` is input row i."""
    if len(perm) != cb.n_codes:
        raise ValueError(f"permutation size {len(perm)} != codebook size {cb.n_codes}")
    return Codebook(cb.entries[perm.inverse])


def remap_tokens(tokens, perm: PermutationMap) -> np.ndarray:
    """Rewrite token indices through the forward map."""
    toks = np.asarray(tokens)
    if not np.issubdtype(toks.dtype, np.integer):
        raise ValueError("token indices must be integers")
    n = len(perm)
    if toks.size and (toks.min() < 0 or toks.max() >= n):
        raise IndexError(f"token index out of range [0, {n})")
    return perm.forward[toks]


def cluster_label(token: int, m: int):
    """Cluster id of a token index under size-m contiguous blocks: token // m."""
    if m < 1:
        raise ValueError(f"cluster size must be >= 1, got {m}")
    toks = np.asarray(token)
    if toks.size and toks.min() < 0:
        raise ValueError("token indices must be nonnegative")
    result = toks // m
    return int(result) if np.isscalar(token) or toks.ndim == 0 else result


def save_permutation(perm: PermutationMap, path) -> None:
    if perm.n_clusters is None or perm.cluster_size is None:
        raise ValueError("permutation lacks cluster metadata (n_clusters/cluster_size)")
    doc = {
        "n": perm.n_clusters,
        "m": perm.cluster_size,
        "forward": [int(v) for v in perm.forward],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="ascii")


def load_permutation(path) -> PermutationMap:
    doc = json.loads(Path(path).read_text(encoding="ascii"))
    return PermutationMap.from_forward(doc["forward"], n_clusters=doc["n"], cluster_size=doc["m"])


def save_tokens(tokens, path) -> None:
    """Write a flat token stream in the TOK1 format (u32 little-endian)."""
    toks = np.asarray(tokens, dtype=np.int64).ravel()
    if toks.size and (toks.min() < 0 or toks.max() > 0xFFFFFFFF):
        raise ValueError("token indices must fit in an unsigned 32-bit integer")
    payload = toks.astype("<u4").tobytes()
    Path(path).write_bytes(_TOK_HEADER.pack(TOK1_MAGIC, toks.size) + payload)


def load_tokens(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _TOK_HEADER.size:
        raise ValueError(f"{path}: truncated TOK1 header")
    magic, count = _TOK_HEADER.unpack_from(data, 0)
    if magic != TOK1_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _TOK_HEADER.size + 4 * count
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {count} tokens, got {len(data)}")
    return np.frombuffer(data, dtype="<u4", offset=_TOK_HEADER.size).astype(np.int64)


def save_token_jsonl(sequences, path) -> None:
    """JSON-lines alternative to TOK1: one {"tokens": [...], "class": int} per line."""
    with open(path, "w", encoding="ascii") as fh:
        for seq in sequences:
            fh.write(json.dumps({"tokens": [int(t) for t in seq.tokens], "class": int(seq.class_id)}))
            fh.write("\n")


def load_token_jsonl(path) -> list[tuple[int, np.ndarray]]:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            out.append((int(doc["class"]), np.asarray(doc["tokens"], dtype=np.int64)))
    return out


class CodebookRearranger(BaseEstimator, TransformerMixin):
    """Balanced k-means over table rows plus the cluster-contiguous reorder.

    ``fit(X)`` clusters the rows of X into ``n_clusters`` equal-size groups
    and derives the permutation; ``transform(X)`` reorders rows so each
    cluster is a contiguous index block. After fitting, ``remap(tokens)``
    rewrites token streams indexed against the original row order.

    Attributes
    ----------
    assignment_ : ClusterAssignment
    permutation_ : PermutationMap
    labels_ : ndarray of shape (n_rows,)
    """

    def __init__(self, n_clusters=8, max_iter=100, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        from .clustering import balanced_kmeans

        cb = X if isinstance(X, Codebook) else Codebook(X)
        self.assignment_ = balanced_kmeans(
            cb, self.n_clusters, max_iters=self.max_iter, seed=self.random_state
        )
        self.permutation_ = build_permutation(self.assignment_)
        self.labels_ = self.assignment_.assignment
        self.n_features_in_ = cb.dim
        return self

    def transform(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "permutation_")
        arr = X.entries if isinstance(X, Codebook) else np.asarray(X)
        if arr.shape[0] != len(self.permutation_):
            raise ValueError(f"expected {len(self.permutation_)} rows, got {arr.shape[0]}")
        out = arr[self.permutation_.inverse]
        return Codebook(out) if isinstance(X, Codebook) else out

    def inverse_transform(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "permutation_")
        arr = X.entries if isinstance(X, Codebook) else np.asarray(X)
        out = arr[self.permutation_.forward]
        return Codebook(out) if isinstance(X, Codebook) else out

    def remap(self, tokens) -> np.ndarray:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "permutation_")
        return remap_tokens(tokens, self.permutation_)
