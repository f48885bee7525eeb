"""Codebook storage, quantization, and neighbor-rank analysis.

A codebook is a table of N embedding vectors of dimension C. Entries are
stored in float32 (the on-disk precision); every distance computation is
accumulated in float64 so that rank orderings are stable across platforms.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

CBK1_MAGIC = b"CBK1"
_HEADER = struct.Struct("<4sII")  # magic, N, C


class CodebookFormatError(ValueError):
    """A codebook file failed to parse or violates a format invariant."""


class Codebook:
    """Immutable table of embeddings, rows indexed by token id.

    Parameters
    ----------
    entries : array-like of shape (N, C)
        Embedding vectors. Cast to float32; must be finite, N >= 1, C >= 1.
    """

    def __init__(self, entries):
        arr = np.asarray(entries, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"codebook entries must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"codebook needs at least one row and one column, got {arr.shape}")
        if not np.isfinite(arr).all():
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise ValueError(f"codebook entry {divmod(bad, arr.shape[1])} is not finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self.entries = arr

    @property
    def n_codes(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def as_float64(self) -> np.ndarray:
        """Entries widened to float64 for distance work."""
        return self.entries.astype(np.float64)

    def __len__(self) -> int:
        return self.n_codes

    def __eq__(self, other) -> bool:
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool(
            (self.entries == other.entries).all()
        )

    def __repr__(self) -> str:
        return f"Codebook(n_codes={self.n_codes}, dim={self.dim})"


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("binary", "csv"):
            raise ValueError(f"unknown codebook format {fmt!r}")
        return fmt
    return "csv" if Path(path).suffix.lower() == ".csv" else "binary"


def load_codebook(path, fmt: str | None = None) -> Codebook:
    """Load a codebook from a CBK1 binary file or a headerless CSV.

    ``fmt`` is "binary" or "csv"; when omitted it is inferred from the file
    extension (".csv" means CSV, anything else binary). Binary loads are
    bit-exact. Errors identify the offending byte offset (binary) or row
    (CSV).
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "binary":
        return _load_binary(path)
    return _load_csv(path)


def _load_binary(path: Path) -> Codebook:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise CodebookFormatError(
            f"{path}: truncated header, got {len(data)} bytes at byte offset 0"
        )
    magic, n, c = _HEADER.unpack_from(data, 0)
    if magic != CBK1_MAGIC:
        raise CodebookFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if n < 1 or c < 1:
        raise CodebookFormatError(f"{path}: invalid dimensions N={n}, C={c} at byte offset 4")
    expected = _HEADER.size + 4 * n * c
    if len(data) != expected:
        raise CodebookFormatError(
            f"{path}: expected {expected} bytes for N={n}, C={c}, got {len(data)}"
            f" (payload starts at byte offset {_HEADER.size})"
        )
    flat = np.frombuffer(data, dtype="<f4", count=n * c, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        off = _HEADER.size + 4 * int(bad[0])
        raise CodebookFormatError(f"{path}: non-finite value at byte offset {off}")
    return Codebook(flat.reshape(n, c))


def _load_csv(path: Path) -> Codebook:
    rows = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise CodebookFormatError(f"{path}: row {lineno}: {exc}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise CodebookFormatError(
                    f"{path}: row {lineno}: expected {width} columns, got {len(values)}"
                )
            if not all(np.isfinite(values)):
                raise CodebookFormatError(f"{path}: row {lineno}: non-finite value")
            rows.append(values)
    if not rows:
        raise CodebookFormatError(f"{path}: no rows")
    return Codebook(np.array(rows, dtype=np.float32))


def save_codebook(cb: Codebook, path, fmt: str | None = None) -> None:
    """Write a codebook. Binary round-trips are bit-exact; CSV keeps 9
    significant digits, which also round-trips float32 exactly."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "binary":
        payload = cb.entries.astype("<f4").tobytes(order="C")
        path.write_bytes(_HEADER.pack(CBK1_MAGIC, cb.n_codes, cb.dim) + payload)
    else:
        with open(path, "w", encoding="ascii") as fh:
            for row in cb.entries:
                fh.write(",".join(np.format_float_scientific(v, precision=8) for v in row))
                fh.write("\n")


def quantize(features, cb: Codebook) -> np.ndarray:
    """Map each feature vector to the index of its nearest codebook row.

    ``features`` is any array whose last axis has length C (h x w x C grids,
    flat (M, C) batches, or a single vector). Distance ties go to the lowest
    index. Returns an int64 array with the leading shape of ``features``.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim < 1 or feats.shape[-1] != cb.dim:
        raise ValueError(
            f"feature dimension {feats.shape[-1] if feats.ndim else 0} != codebook dim {cb.dim}"
        )
    if not np.isfinite(feats).all():
        raise ValueError("features must be finite")
    flat = feats.reshape(-1, cb.dim)
    entries = cb.as_float64()
    out = np.empty(flat.shape[0], dtype=np.int64)
    # Chunked exact differences: keeps the temp below ~64 MB and avoids the
    # |a|^2 - 2ab + |b|^2 trick, whose rounding can break tie ordering.
    block = max(1, int(2**23 // max(1, cb.n_codes * cb.dim)))
    for start in range(0, flat.shape[0], block):
        chunk = flat[start : start + block]
        d2 = ((chunk[:, None, :] - entries[None, :, :]) ** 2).sum(axis=2)
        out[start : start + block] = np.argmin(d2, axis=1)
    return out.reshape(feats.shape[:-1])


def lookup(tokens, cb: Codebook) -> np.ndarray:
    """Gather codebook rows for token indices; output rows are exact copies."""
    toks = np.asarray(tokens)
    if not np.issubdtype(toks.dtype, np.integer):
        raise ValueError("token indices must be integers")
    if toks.size and (toks.min() < 0 or toks.max() >= cb.n_codes):
        bad = toks.flat[int(np.flatnonzero((toks < 0) | (toks >= cb.n_codes))[0])]
        raise IndexError(f"token index {bad} out of range [0, {cb.n_codes})")
    return cb.entries[toks]


def _rank_order(cb: Codebook, i: int) -> np.ndarray:
    """Indices sorted by distance from row i: self first, then by
    (distance, index). Duplicates of row i cannot displace rank 0."""
    n = cb.n_codes
    if not 0 <= i < n:
        raise IndexError(f"index {i} out of range [0, {n})")
    entries = cb.as_float64()
    d2 = ((entries - entries[i]) ** 2).sum(axis=1)
    not_self = np.ones(n, dtype=np.int8)
    not_self[i] = 0
    # lexsort: last key is primary
    return np.lexsort((np.arange(n), d2, not_self))


def code_distance(cb: Codebook, i: int, j: int) -> int:
    """Rank of row j in the distance-sorted neighbor list of row i.

    Rank 0 is i itself; ties after self break to the lower index. The map
    j -> rank is a bijection on [0, N).
    """
    order = _rank_order(cb, i)
    if not 0 <= j < cb.n_codes:
        raise IndexError(f"index {j} out of range [0, {cb.n_codes})")
    ranks = np.empty(cb.n_codes, dtype=np.int64)
    ranks[order] = np.arange(cb.n_codes)
    return int(ranks[j])


def neighbors_within_rank(cb: Codebook, i: int, d: int) -> list[int]:
    """The d+1 indices whose code distance from row i is <= d, ordered by rank."""
    if not 0 <= d < cb.n_codes:
        raise IndexError(f"rank bound {d} out of range [0, {cb.n_codes})")
    order = _rank_order(cb, i)
    return [int(k) for k in order[: d + 1]]
