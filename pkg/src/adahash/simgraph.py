"""Signed similarity graphs over feature vectors.

A graph stores, per row, the sorted indices of its +1 entries; every other
entry is implicitly -1. Construction marks each sample's nearest neighbors
by cosine similarity (low order), then the samples whose neighbor rows are
most alike (high order), and intersects the two. Between training rounds the
graph is refined by promoting -1 pairs whose learned-code similarity clears
a data-driven threshold; +1 entries are never demoted.

Snapshot file (`.sahw`), little-endian:
    magic ``SAHW`` | u32 version=1 | u64 n | per row: u32 k, then k u32 indices
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .feature_store import FeatureMatrix, LabelSet, relevance_matrix

GRAPH_MAGIC = b"SAHW"
GRAPH_VERSION = 1

NORM_EPSILON = 1e-12
DEFAULT_BLOCK = 256


@dataclass(frozen=True)
class SignedSimilarityMatrix:
    """n-by-n matrix over {-1, +1}, stored as per-row sorted +1 index lists."""

    n: int
    positives: tuple

    def __post_init__(self):
        if len(self.positives) != self.n:
            raise DataError(f"graph has {len(self.positives)} rows, declared n={self.n}")
        rows = []
        for i, row in enumerate(self.positives):
            arr = np.asarray(row, dtype=np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= self.n):
                raise DataError(f"graph row {i} has index outside [0, {self.n})")
            if arr.size and (np.diff(arr) <= 0).any():
                raise DataError(f"graph row {i} is not sorted and duplicate-free")
            arr.flags.writeable = False
            rows.append(arr)
        object.__setattr__(self, "positives", tuple(rows))

    @property
    def n_plus(self) -> int:
        return sum(row.size for row in self.positives)

    def to_dense_bool(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n), dtype=bool)
        for i, row in enumerate(self.positives):
            dense[i, row] = True
        return dense

    def to_sign_matrix(self) -> np.ndarray:
        return np.where(self.to_dense_bool(), 1.0, -1.0)

    def gather_signs(self, ids: np.ndarray) -> np.ndarray:
        """Signed sub-matrix over the given sample ids (rows and columns)."""
        ids = np.asarray(ids, dtype=np.int64)
        sub = np.full((ids.size, ids.size), -1.0)
        for a, i in enumerate(ids):
            hit = np.isin(ids, self.positives[i], assume_unique=False)
            sub[a, hit] = 1.0
        return sub

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignedSimilarityMatrix):
            return NotImplemented
        return self.n == other.n and all(
            np.array_equal(a, b) for a, b in zip(self.positives, other.positives)
        )


def from_dense_bool(dense: np.ndarray) -> SignedSimilarityMatrix:
    dense = np.asarray(dense, dtype=bool)
    n = dense.shape[0]
    return SignedSimilarityMatrix(n, tuple(np.flatnonzero(dense[i]) for i in range(n)))


@dataclass(frozen=True)
class AndRoundStats:
    """Per-round refresh statistics of the adaptive graph update."""

    round: int
    mu: float
    sigma: float
    m: float
    n_plus: int
    flipped: int


@dataclass(frozen=True)
class GraphQuality:
    """Harmonic-mean score of a graph against label-derived ground truth."""

    f: float
    precision: float
    recall: float
    degenerate: bool = False


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0 when either norm vanishes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise DataError(f"cosine_sim needs equal-length vectors, got {a.shape} and {b.shape}")
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom < NORM_EPSILON:
        return 0.0
    return float(a @ b / denom)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Rows scaled to unit norm; rows with norm below epsilon become zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms < NORM_EPSILON, 1.0, norms)
    out = x / safe
    out[norms.ravel() < NORM_EPSILON] = 0.0
    return out


def _block_ranges(n: int, block: int):
    return [(s, min(s + block, n)) for s in range(0, n, block)]


def _map_blocks(fn, ranges, threads: int | None):
    if threads is not None and threads <= 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ranges))


def pairwise_cosine_matrix(
    x: np.ndarray, block: int = DEFAULT_BLOCK, threads: int | None = 1
) -> np.ndarray:
    """Dense cosine-similarity matrix over the rows of x, computed in row blocks."""
    xn = normalize_rows(x)
    n = xn.shape[0]
    out = np.empty((n, n), dtype=np.float64)

    def fill(rng):
        s, e = rng
        out[s:e] = xn[s:e] @ xn.T
        return None

    _map_blocks(fill, _block_ranges(n, block), threads)
    return out


def _top_k_rows(scores_block, row_offset: int, k: int, n: int):
    """Per row: indices of the k largest scores, self excluded, ties to the lower index."""
    rows = []
    col_ids = np.arange(n)
    for local, row in enumerate(scores_block):
        i = row_offset + local
        row = row.copy()
        row[i] = -np.inf
        order = np.lexsort((col_ids, -row))
        top = order[:k]
        rows.append((i, np.sort(np.append(top, i))))
    return rows


def build_low_order(
    feats: FeatureMatrix | np.ndarray,
    k1: int,
    block: int = DEFAULT_BLOCK,
    threads: int | None = 1,
) -> SignedSimilarityMatrix:
    """Graph marking each sample, plus its k1 nearest others by cosine similarity."""
    x = feats.data if isinstance(feats, FeatureMatrix) else np.asarray(feats)
    n = x.shape[0]
    if not 1 <= k1 < n:
        raise DataError(f"k1 must satisfy 1 <= k1 < n, got k1={k1}, n={n}")
    xn = normalize_rows(x)

    def job(rng):
        s, e = rng
        return _top_k_rows(xn[s:e] @ xn.T, s, k1, n)

    rows: list = [None] * n
    for chunk in _map_blocks(job, _block_ranges(n, block), threads):
        for i, pos in chunk:
            rows[i] = pos
    return SignedSimilarityMatrix(n, tuple(rows))


def neighbor_row_similarity(wl: SignedSimilarityMatrix, i: int, j: int) -> float:
    """1 / (1 + L2 distance between the full signed rows i and j).

    Rows take values in {-1, +1}, so each position where exactly one row is
    +1 contributes 4 to the squared distance; with h such positions the
    value is 1 / (1 + 2*sqrt(h)). Equals 1 iff the rows are identical.
    """
    n = wl.n
    if not (0 <= i < n and 0 <= j < n):
        raise DataError(f"row index out of range: ({i}, {j}) with n={n}")
    shared = np.intersect1d(wl.positives[i], wl.positives[j], assume_unique=True).size
    h = wl.positives[i].size + wl.positives[j].size - 2 * shared
    return 1.0 / (1.0 + 2.0 * np.sqrt(h))


def build_high_order(
    wl: SignedSimilarityMatrix,
    k2: int,
    block: int = DEFAULT_BLOCK,
    threads: int | None = 1,
) -> SignedSimilarityMatrix:
    """Graph marking, per sample, the k2 samples with the most similar neighbor rows.

    Ranking by neighbor_row_similarity descending is equivalent to ranking by
    the count of differing row positions ascending, which is what is computed.
    """
    n = wl.n
    if not 1 <= k2 < n:
        raise DataError(f"k2 must satisfy 1 <= k2 < n, got k2={k2}, n={n}")
    dense = wl.to_dense_bool().astype(np.float32)
    sizes = dense.sum(axis=1)

    def job(rng):
        s, e = rng
        shared = dense[s:e] @ dense.T
        diff = sizes[s:e, None] + sizes[None, :] - 2.0 * shared
        # negate so that the shared top-k helper (largest first) ranks the
        # smallest difference count first
        return _top_k_rows(-diff, s, k2, n)

    rows: list = [None] * n
    for chunk in _map_blocks(job, _block_ranges(n, block), threads):
        for i, pos in chunk:
            rows[i] = pos
    return SignedSimilarityMatrix(n, tuple(rows))


def combine(wl: SignedSimilarityMatrix, wh: SignedSimilarityMatrix) -> SignedSimilarityMatrix:
    """Entry is +1 iff +1 in both inputs (intersection of the positive sets)."""
    if wl.n != wh.n:
        raise DataError(f"cannot combine graphs of size {wl.n} and {wh.n}")
    rows = tuple(
        np.intersect1d(a, b, assume_unique=True) for a, b in zip(wl.positives, wh.positives)
    )
    return SignedSimilarityMatrix(wl.n, rows)


def symmetrize(w: SignedSimilarityMatrix) -> SignedSimilarityMatrix:
    """Union-symmetrized graph: entry +1 iff +1 at (i, j) or (j, i)."""
    dense = w.to_dense_bool()
    return from_dense_bool(dense | dense.T)


def positive_similarities(w: SignedSimilarityMatrix, sim: np.ndarray) -> np.ndarray:
    """All sim entries at +1 positions, row by row."""
    return np.concatenate([sim[i, row] for i, row in enumerate(w.positives)])


def round_stats(
    w: SignedSimilarityMatrix, sim: np.ndarray, gamma: float, round_index: int = 0
) -> AndRoundStats:
    """Threshold statistics of the current graph without applying any update.

    mu and sigma are the mean and population standard deviation of sim over
    the +1 entries; the flip threshold is m = mu + gamma * sigma.
    """
    if sim.shape != (w.n, w.n):
        raise DataError(f"similarity matrix shape {sim.shape} does not match n={w.n}")
    if w.n_plus == 0:
        raise DataError("graph has no +1 entries; mean and deviation are undefined")
    vals = positive_similarities(w, sim)
    mu = float(vals.mean())
    sigma = float(np.sqrt(np.mean((vals - mu) ** 2)))
    return AndRoundStats(
        round=round_index,
        mu=mu,
        sigma=sigma,
        m=mu + gamma * sigma,
        n_plus=w.n_plus,
        flipped=0,
    )


def and_update(
    w: SignedSimilarityMatrix,
    sim: np.ndarray,
    gamma: float,
    round_index: int = 0,
) -> tuple[SignedSimilarityMatrix, AndRoundStats]:
    """Promote every -1 entry whose similarity reaches mu + gamma * sigma.

    The threshold is estimated over the similarities of the current +1
    entries only. No +1 entry is ever demoted, so the positive set grows
    monotonically. Refused when the graph has no +1 entries.
    """
    base = round_stats(w, sim, gamma, round_index)
    rows = []
    flipped = 0
    for i, pos in enumerate(w.positives):
        candidates = np.flatnonzero(sim[i] >= base.m)
        new = np.union1d(pos, candidates)
        flipped += new.size - pos.size
        rows.append(new)
    updated = SignedSimilarityMatrix(w.n, tuple(rows))
    stats = AndRoundStats(
        round=round_index,
        mu=base.mu,
        sigma=base.sigma,
        m=base.m,
        n_plus=updated.n_plus,
        flipped=flipped,
    )
    return updated, stats


def f_w(w: SignedSimilarityMatrix, labels: LabelSet) -> GraphQuality:
    """Precision/recall of the +1 set against label-relevant pairs, combined
    by harmonic mean. Zero with the degenerate flag when either side is empty
    or no +1 pair is actually relevant."""
    if labels.n != w.n:
        raise DataError(f"label count {labels.n} does not match graph size {w.n}")
    rel = relevance_matrix(labels)
    true_pos = sum(int(rel[i, row].sum()) for i, row in enumerate(w.positives))
    n_plus = w.n_plus
    n_rel = int(rel.sum())
    if n_plus == 0 or n_rel == 0 or true_pos == 0:
        return GraphQuality(f=0.0, precision=0.0, recall=0.0, degenerate=True)
    precision = true_pos / n_plus
    recall = true_pos / n_rel
    return GraphQuality(
        f=2.0 / (1.0 / precision + 1.0 / recall),
        precision=precision,
        recall=recall,
    )


def save_graph(path, w: SignedSimilarityMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<IQ", GRAPH_VERSION, w.n))
        for row in w.positives:
            fh.write(struct.pack("<I", row.size))
            fh.write(row.astype("<u4").tobytes())


def load_graph(path) -> SignedSimilarityMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != GRAPH_MAGIC:
        raise FormatError(f"bad magic at offset 0: expected {GRAPH_MAGIC!r}, got {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != GRAPH_VERSION:
        raise FormatError(f"unsupported graph-file version {version} at offset 4")
    (n,) = struct.unpack_from("<Q", raw, 8)
    offset = 16
    rows = []
    for i in range(n):
        if offset + 4 > len(raw):
            raise FormatError(f"truncated at offset {len(raw)}: expected row {i} count")
        (k,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + 4 * k > len(raw):
            raise FormatError(f"truncated at offset {len(raw)}: expected row {i} indices")
        rows.append(np.frombuffer(raw, dtype="<u4", count=k, offset=offset).astype(np.int64))
        offset += 4 * k
    if offset != len(raw):
        raise FormatError(f"trailing bytes at offset {offset}")
    return SignedSimilarityMatrix(n, tuple(rows))
