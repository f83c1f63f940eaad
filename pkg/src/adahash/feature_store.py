"""Bit-exact on-disk storage for feature matrices, label sets, and splits.

Feature file (`.sahf`), little-endian throughout:
    magic ``SAHF`` | u32 version=1 | u64 n | u64 d | n*d float32, row-major

Label file (`.sahl`):
    magic ``SAHL`` | u32 version=1 | u64 n | u32 c |
    per row: u16 k, then k u16 class indices

Split file: plain text with three sections ``query:``, ``retrieval:``,
``train:``, each followed by one decimal index per line.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

FEATURE_MAGIC = b"SAHF"
LABEL_MAGIC = b"SAHL"
FORMAT_VERSION = 1


def _read_exact(raw: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(raw):
        raise FormatError(f"truncated at offset {len(raw)}: expected {what}")
    return raw[offset : offset + size]


@dataclass(frozen=True)
class FeatureMatrix:
    """n samples by d dimensions, float32, every value finite."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"feature matrix must be 2-d and non-empty, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
            raise DataError(f"non-finite feature value at flat index {bad}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelSet:
    """Multi-hot class membership, n rows by c classes."""

    membership: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.membership, dtype=bool)
        if arr.ndim != 2:
            raise DataError(f"label membership must be 2-d, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "membership", arr)

    @property
    def n(self) -> int:
        return self.membership.shape[0]

    @property
    def c(self) -> int:
        return self.membership.shape[1]


def relevance(labels: LabelSet, i: int, j: int) -> bool:
    """True iff samples i and j share at least one label."""
    n = labels.n
    if not (0 <= i < n and 0 <= j < n):
        raise DataError(f"relevance index out of range: ({i}, {j}) with n={n}")
    return bool((labels.membership[i] & labels.membership[j]).any())


def relevance_matrix(labels: LabelSet) -> np.ndarray:
    """Dense boolean n-by-n matrix of pairwise label overlap."""
    m = labels.membership.astype(np.float32)
    return (m @ m.T) > 0.5


@dataclass(frozen=True)
class SplitSpec:
    query_ids: np.ndarray
    retrieval_ids: np.ndarray
    train_ids: np.ndarray

    def __post_init__(self):
        for name in ("query_ids", "retrieval_ids", "train_ids"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def validate(self, n: int) -> "SplitSpec":
        for name in ("query_ids", "retrieval_ids", "train_ids"):
            ids = getattr(self, name)
            if ids.size == 0:
                raise DataError(f"split section '{name}' is empty")
            if ids.min() < 0 or ids.max() >= n:
                raise DataError(f"split section '{name}' has index outside [0, {n})")
            if np.unique(ids).size != ids.size:
                raise DataError(f"split section '{name}' contains duplicates")
        if np.intersect1d(self.query_ids, self.retrieval_ids).size:
            raise DataError("query and retrieval sets overlap")
        if np.setdiff1d(self.train_ids, self.retrieval_ids).size:
            raise DataError("train set is not a subset of the retrieval set")
        return self


def write_features(path, matrix: FeatureMatrix | np.ndarray) -> None:
    if not isinstance(matrix, FeatureMatrix):
        matrix = FeatureMatrix(matrix)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IQQ", FORMAT_VERSION, matrix.n, matrix.d))
        fh.write(matrix.data.astype("<f4").tobytes())


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    magic = _read_exact(raw, 0, 4, "magic")
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic at offset 0: expected {FEATURE_MAGIC!r}, got {magic!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported feature-file version {version} at offset 4")
    n, d = struct.unpack_from("<QQ", _read_exact(raw, 8, 16, "header"), 0)
    if n < 1 or d < 1:
        raise FormatError(f"invalid header at offset 8: n={n}, d={d}")
    payload_size = n * d * 4
    payload = _read_exact(raw, 24, payload_size, f"{n * d} float32 values")
    if len(raw) != 24 + payload_size:
        raise FormatError(f"trailing bytes at offset {24 + payload_size}")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    finite = np.isfinite(values.ravel())
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise FormatError(f"non-finite value at offset {24 + bad * 4}")
    return FeatureMatrix(values)


def write_labels(path, labels: LabelSet | np.ndarray) -> None:
    if not isinstance(labels, LabelSet):
        labels = LabelSet(labels)
    if labels.c > 0xFFFF:
        raise DataError(f"class count {labels.c} exceeds the u16 index range")
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<IQI", FORMAT_VERSION, labels.n, labels.c))
        for row in labels.membership:
            idx = np.flatnonzero(row)
            fh.write(struct.pack("<H", idx.size))
            fh.write(idx.astype("<u2").tobytes())


def load_labels(path, n: int | None = None) -> LabelSet:
    raw = Path(path).read_bytes()
    magic = _read_exact(raw, 0, 4, "magic")
    if magic != LABEL_MAGIC:
        raise FormatError(f"bad magic at offset 0: expected {LABEL_MAGIC!r}, got {magic!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported label-file version {version} at offset 4")
    rows, c = struct.unpack_from("<QI", _read_exact(raw, 8, 12, "header"), 0)
    if n is not None and rows != n:
        raise DataError(f"label file declares n={rows}, caller expects n={n}")
    membership = np.zeros((rows, c), dtype=bool)
    offset = 20
    for i in range(rows):
        (k,) = struct.unpack_from("<H", _read_exact(raw, offset, 2, f"row {i} count"), 0)
        offset += 2
        idx = np.frombuffer(_read_exact(raw, offset, 2 * k, f"row {i} indices"), dtype="<u2")
        offset += 2 * k
        if k and idx.max() >= c:
            raise FormatError(f"class index {int(idx.max())} >= c={c} in row {i} (offset {offset})")
        membership[i, idx] = True
    if offset != len(raw):
        raise FormatError(f"trailing bytes at offset {offset}")
    return LabelSet(membership)


_SPLIT_SECTIONS = ("query", "retrieval", "train")


def write_split(path, split: SplitSpec) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for name, ids in zip(_SPLIT_SECTIONS, (split.query_ids, split.retrieval_ids, split.train_ids)):
            fh.write(f"{name}:\n")
            for i in ids:
                fh.write(f"{int(i)}\n")


def load_split(path, n: int | None = None) -> SplitSpec:
    sections: dict[str, list[int]] = {}
    current: list[int] | None = None
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), start=1):
        text = line.strip()
        if not text:
            continue
        if text.endswith(":"):
            name = text[:-1]
            if name not in _SPLIT_SECTIONS:
                raise FormatError(f"unknown split section '{name}' at line {lineno}")
            if name in sections:
                raise FormatError(f"duplicate split section '{name}' at line {lineno}")
            current = sections.setdefault(name, [])
            continue
        if current is None:
            raise FormatError(f"index before any section header at line {lineno}")
        try:
            current.append(int(text))
        except ValueError:
            raise FormatError(f"invalid index '{text}' at line {lineno}") from None
    missing = [s for s in _SPLIT_SECTIONS if s not in sections]
    if missing:
        raise FormatError(f"missing split sections: {', '.join(missing)}")
    split = SplitSpec(
        query_ids=np.asarray(sections["query"], dtype=np.int64),
        retrieval_ids=np.asarray(sections["retrieval"], dtype=np.int64),
        train_ids=np.asarray(sections["train"], dtype=np.int64),
    )
    if n is not None:
        split.validate(n)
    return split
