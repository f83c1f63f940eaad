"""Desk-scale synthetic datasets: well-separated Gaussian clusters on the
unit sphere, with cluster ids as single labels."""

from __future__ import annotations

import numpy as np

from .errors import DataError, UsageError
from .feature_store import FeatureMatrix, LabelSet, SplitSpec

CENTER_MAX_COS = 0.5  # pairwise angle >= 60 degrees
_CENTER_ATTEMPTS = 10000


def place_centers(clusters: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm cluster centers with pairwise cosine at most 0.5.

    Rejection-sampled; raises when the requested count cannot be placed in
    d dimensions within the attempt budget.
    """
    centers: list[np.ndarray] = []
    for _ in range(_CENTER_ATTEMPTS):
        v = rng.normal(size=d)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        v = v / norm
        if all(float(c @ v) <= CENTER_MAX_COS for c in centers):
            centers.append(v)
            if len(centers) == clusters:
                return np.stack(centers)
    raise DataError(
        f"could not place {clusters} centers at pairwise angle >= 60 degrees in "
        f"{d} dimensions ({len(centers)} placed)"
    )


def synth(
    clusters: int, per_cluster: int, d: int, spread: float, seed: int
) -> tuple[FeatureMatrix, LabelSet]:
    """Cluster-major sample matrix: point = center + N(0, spread^2) per axis."""
    if clusters < 2:
        raise UsageError(f"need at least 2 clusters, got {clusters}")
    if per_cluster < 1 or d < 1:
        raise UsageError(f"per_cluster and d must be >= 1, got {per_cluster}, {d}")
    if spread < 0:
        raise UsageError(f"spread must be >= 0, got {spread}")
    if seed < 0:
        raise UsageError(f"seed must be >= 0, got {seed}")
    rng = np.random.default_rng(seed)
    centers = place_centers(clusters, d, rng)
    points = np.repeat(centers, per_cluster, axis=0)
    if spread > 0:
        points = points + rng.normal(scale=spread, size=points.shape)
    membership = np.zeros((clusters * per_cluster, clusters), dtype=bool)
    membership[np.arange(clusters * per_cluster), np.repeat(np.arange(clusters), per_cluster)] = True
    return FeatureMatrix(points.astype(np.float32)), LabelSet(membership)


def holdout_split(clusters: int, per_cluster: int, query_fraction: float = 0.1) -> SplitSpec:
    """Per cluster, the first floor(fraction) samples become queries; the rest
    form the retrieval set, which doubles as the train set."""
    if not 0 < query_fraction < 1:
        raise UsageError(f"query fraction must be in (0, 1), got {query_fraction}")
    q = max(1, int(per_cluster * query_fraction))
    if q >= per_cluster:
        raise UsageError("query fraction leaves no retrieval samples per cluster")
    query = []
    rest = []
    for c in range(clusters):
        base = c * per_cluster
        query.extend(range(base, base + q))
        rest.extend(range(base + q, base + per_cluster))
    return SplitSpec(
        query_ids=np.asarray(query, dtype=np.int64),
        retrieval_ids=np.asarray(rest, dtype=np.int64),
        train_ids=np.asarray(rest, dtype=np.int64),
    )
