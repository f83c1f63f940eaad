"""Packed binary codes, Hamming-distance ranking, and retrieval metrics.

Codes live in {-1, +1}; a set bit means +1. Bits are packed least
significant first into little-endian 64-bit words, with any trailing pad
bits kept zero.

Code file (`.sahb`), little-endian:
    magic ``SAHB`` | u32 version=1 | u64 n | u64 l | per row ceil(l/64) u64
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .feature_store import LabelSet, relevance_matrix

CODE_MAGIC = b"SAHB"
CODE_VERSION = 1

MAX_CODE_LENGTH = 4096

RECALL_GRID = np.round(np.linspace(0.0, 1.0, 21), 2)


@dataclass(frozen=True)
class BinaryCodeSet:
    """n code rows of l bits packed into uint64 words."""

    l: int
    codes: np.ndarray  # (n, ceil(l/64)) uint64

    def __post_init__(self):
        if not 1 <= self.l <= MAX_CODE_LENGTH:
            raise DataError(f"code length must be in [1, {MAX_CODE_LENGTH}], got {self.l}")
        arr = np.ascontiguousarray(self.codes, dtype=np.uint64)
        words = (self.l + 63) // 64
        if arr.ndim != 2 or arr.shape[1] != words:
            raise DataError(f"code array shape {arr.shape} does not match l={self.l}")
        pad = words * 64 - self.l
        if pad and arr.size:
            if np.any(arr[:, -1] >> np.uint64(64 - pad)):
                raise DataError("trailing pad bits must be zero")
        arr.flags.writeable = False
        object.__setattr__(self, "codes", arr)

    @property
    def n(self) -> int:
        return self.codes.shape[0]


def binarize(z: np.ndarray) -> BinaryCodeSet:
    """Pack the signs of relaxed codes; sign(0) counts as +1."""
    z = np.atleast_2d(np.asarray(z))
    bits = z >= 0.0
    return pack_bits(bits)


def pack_bits(bits: np.ndarray) -> BinaryCodeSet:
    bits = np.ascontiguousarray(bits, dtype=bool)
    n, l = bits.shape
    words = (l + 63) // 64
    padded = np.zeros((n, words * 64), dtype=np.uint64)
    padded[:, :l] = bits
    weights = np.uint64(1) << np.arange(64, dtype=np.uint64)
    packed = (padded.reshape(n, words, 64) * weights).sum(axis=2, dtype=np.uint64)
    return BinaryCodeSet(l=l, codes=packed)


def unpack_signs(codes: BinaryCodeSet) -> np.ndarray:
    """Rows back to a dense (n, l) matrix over {-1, +1}."""
    n, words = codes.codes.shape
    shifts = np.arange(64, dtype=np.uint64)
    bits = ((codes.codes[:, :, None] >> shifts) & np.uint64(1)).astype(np.int8)
    flat = bits.reshape(n, words * 64)[:, : codes.l]
    return (flat * 2 - 1).astype(np.int8)


def hamming(x: np.ndarray, y: np.ndarray) -> int:
    """Count of differing bit positions between two packed code rows."""
    x = np.asarray(x, dtype=np.uint64)
    y = np.asarray(y, dtype=np.uint64)
    if x.shape != y.shape:
        raise DataError(f"code word counts differ: {x.shape} vs {y.shape}")
    return int(np.bitwise_count(x ^ y).sum())


def hamming_matrix(
    queries: BinaryCodeSet, db: BinaryCodeSet, block: int = 256
) -> np.ndarray:
    """All pairwise Hamming distances, (n_queries, n_db) int32."""
    if queries.l != db.l:
        raise DataError(f"code lengths differ: {queries.l} vs {db.l}")
    out = np.empty((queries.n, db.n), dtype=np.int32)
    for s in range(0, queries.n, block):
        q = queries.codes[s : s + block]
        xor = q[:, None, :] ^ db.codes[None, :, :]
        out[s : s + block] = np.bitwise_count(xor).sum(axis=2, dtype=np.int32)
    return out


@dataclass(frozen=True)
class RankedLists:
    """Per query, db positions ordered by (Hamming distance, original id)."""

    query_ids: np.ndarray  # (nq,) dataset ids
    db_ids: np.ndarray  # (ndb,) dataset ids
    order: np.ndarray  # (nq, ndb) positions into db_ids

    @property
    def n_queries(self) -> int:
        return self.query_ids.shape[0]

    @property
    def n_db(self) -> int:
        return self.db_ids.shape[0]

    def ranked_ids(self, q: int) -> np.ndarray:
        return self.db_ids[self.order[q]]


def rank(
    queries: BinaryCodeSet,
    db: BinaryCodeSet,
    query_ids: np.ndarray | None = None,
    db_ids: np.ndarray | None = None,
) -> RankedLists:
    """Sort the database for every query by ascending Hamming distance,
    breaking ties by ascending original id."""
    dists = hamming_matrix(queries, db)
    qids = np.arange(queries.n) if query_ids is None else np.asarray(query_ids, dtype=np.int64)
    dids = np.arange(db.n) if db_ids is None else np.asarray(db_ids, dtype=np.int64)
    if dids.shape[0] != db.n or qids.shape[0] != queries.n:
        raise DataError("id arrays do not match the code sets")
    order = np.empty((queries.n, db.n), dtype=np.int64)
    for q in range(queries.n):
        order[q] = np.lexsort((dids, dists[q]))
    return RankedLists(query_ids=qids, db_ids=dids, order=order)


def _relevance_in_rank_order(ranked: RankedLists, labels: LabelSet) -> np.ndarray:
    rel = relevance_matrix(labels)
    out = np.empty((ranked.n_queries, ranked.n_db), dtype=bool)
    for q in range(ranked.n_queries):
        out[q] = rel[ranked.query_ids[q], ranked.ranked_ids(q)]
    return out


def map_at_n(ranked: RankedLists, labels: LabelSet, n: int) -> float:
    """Mean over queries of average precision truncated at rank n.

    AP@n sums precision@k over the relevant ranks k <= n and divides by
    min(R_q, n), where R_q counts the query's relevant items in the whole
    database. Queries with R_q = 0 are excluded; if every query is excluded
    the metric is undefined.
    """
    if n < 1:
        raise DataError(f"rank cutoff must be >= 1, got {n}")
    rel = _relevance_in_rank_order(ranked, labels)
    totals = rel.sum(axis=1)
    aps = []
    for q in range(ranked.n_queries):
        r_q = int(totals[q])
        if r_q == 0:
            continue
        top = rel[q, :n]
        hits = np.flatnonzero(top)
        cum = np.arange(1, hits.size + 1)
        precisions = cum / (hits + 1)
        aps.append(precisions.sum() / min(r_q, n))
    if not aps:
        raise DataError("no query has any relevant item; mean average precision undefined")
    return float(np.mean(aps))


def precision_at_n(ranked: RankedLists, labels: LabelSet, n: int) -> float:
    """Mean over all queries of the relevant fraction within the top n."""
    if n < 1:
        raise DataError(f"rank cutoff must be >= 1, got {n}")
    rel = _relevance_in_rank_order(ranked, labels)
    return float(rel[:, :n].sum(axis=1).mean() / n)


def precision_series(ranked: RankedLists, labels: LabelSet, max_n: int) -> np.ndarray:
    """precision_at_n for every n in 1..min(max_n, db size), vectorized."""
    rel = _relevance_in_rank_order(ranked, labels)
    max_n = min(max_n, ranked.n_db)
    cum = np.cumsum(rel[:, :max_n], axis=1, dtype=np.float64)
    return (cum / np.arange(1, max_n + 1)).mean(axis=0)


def pr_curve(ranked: RankedLists, labels: LabelSet) -> np.ndarray:
    """Precision over the fixed recall grid {0.0, 0.05, ..., 1.0}.

    Per query the raw (recall, precision) staircase over every rank is
    reduced by max-interpolation -- precision at grid recall r is the best
    precision achieved at any recall >= r -- then averaged over queries.
    Queries without relevant items are skipped with a warning. Returns an
    array of (recall, precision) rows.
    """
    rel = _relevance_in_rank_order(ranked, labels)
    totals = rel.sum(axis=1)
    curves = []
    for q in range(ranked.n_queries):
        r_q = int(totals[q])
        if r_q == 0:
            warnings.warn(f"query {int(ranked.query_ids[q])} has no relevant items; skipped")
            continue
        cum = np.cumsum(rel[q], dtype=np.float64)
        ranks = np.arange(1, ranked.n_db + 1)
        precision = cum / ranks
        recall = cum / r_q
        # best precision at recall >= r, computed right-to-left
        best_from = np.maximum.accumulate(precision[::-1])[::-1]
        idx = np.searchsorted(recall, RECALL_GRID, side="left")
        grid_p = np.where(idx < recall.size, best_from[np.minimum(idx, recall.size - 1)], 0.0)
        curves.append(grid_p)
    if not curves:
        raise DataError("no query has any relevant item; PR curve undefined")
    mean_p = np.mean(np.stack(curves), axis=0)
    return np.column_stack([RECALL_GRID, mean_p])


def pr_raw(ranked: RankedLists, labels: LabelSet) -> np.ndarray:
    """Mean (recall, precision) at every rank, for exact reprocessing."""
    rel = _relevance_in_rank_order(ranked, labels)
    totals = rel.sum(axis=1)
    keep = totals > 0
    if not keep.any():
        raise DataError("no query has any relevant item")
    cum = np.cumsum(rel[keep], axis=1, dtype=np.float64)
    ranks = np.arange(1, ranked.n_db + 1)
    precision = (cum / ranks).mean(axis=0)
    recall = (cum / totals[keep, None]).mean(axis=0)
    return np.column_stack([ranks, recall, precision])


def save_codes(path, codes: BinaryCodeSet) -> None:
    with open(path, "wb") as fh:
        fh.write(CODE_MAGIC)
        fh.write(struct.pack("<IQQ", CODE_VERSION, codes.n, codes.l))
        fh.write(codes.codes.astype("<u8").tobytes())


def load_codes(path) -> BinaryCodeSet:
    raw = Path(path).read_bytes()
    if raw[:4] != CODE_MAGIC:
        raise FormatError(f"bad magic at offset 0: expected {CODE_MAGIC!r}, got {raw[:4]!r}")
    version, n, l = struct.unpack_from("<IQQ", raw, 4)
    if version != CODE_VERSION:
        raise FormatError(f"unsupported code-file version {version} at offset 4")
    words = (l + 63) // 64
    expected = 24 + n * words * 8
    if len(raw) != expected:
        raise FormatError(f"bad length: expected {expected} bytes, got {len(raw)}")
    codes = np.frombuffer(raw, dtype="<u8", offset=24).reshape(n, words)
    return BinaryCodeSet(l=int(l), codes=codes)
