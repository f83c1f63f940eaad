"""Two-layer projection head mapping features to relaxed codes in (-1, 1).

Architecture: d -> hidden (relu) -> code length (tanh). Parameters are
stored in float32; all forward/backward arithmetic runs in float64 so that
analytic gradients check out against finite differences at tight tolerance.

Checkpoint file (`.sahc`), little-endian:
    magic ``SAHC`` | u32 version=1 | u64 d | u64 h | u64 l |
    float32 arrays in order: w1, b1, w2, b2, adam m (same four), adam v
    (same four), then the step counter t as a single float32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, NumericalError

CHECKPOINT_MAGIC = b"SAHC"
CHECKPOINT_VERSION = 1

DEFAULT_HIDDEN = 1000


@dataclass(frozen=True)
class HashHeadParams:
    w1: np.ndarray  # (d, h) float32
    b1: np.ndarray  # (h,)  float32
    w2: np.ndarray  # (h, l) float32
    b2: np.ndarray  # (l,)  float32

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if not np.isfinite(arr).all():
                raise DataError(f"non-finite value in parameter {name}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        d, h = self.w1.shape
        h2, l = self.w2.shape
        if h != h2 or self.b1.shape != (h,) or self.b2.shape != (l,):
            raise DataError("inconsistent parameter shapes")

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def h(self) -> int:
        return self.w1.shape[1]

    @property
    def l(self) -> int:
        return self.w2.shape[1]

    def arrays(self) -> tuple:
        return (self.w1, self.b1, self.w2, self.b2)


@dataclass(frozen=True)
class HeadGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> tuple:
        return (self.w1, self.b1, self.w2, self.b2)


@dataclass(frozen=True)
class AdamState:
    m: tuple  # four float32 arrays shaped like the parameters
    v: tuple
    t: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_params(d: int, h: int, l: int, seed: int) -> HashHeadParams:
    """Uniform Glorot weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    if min(d, h, l) < 1:
        raise DataError(f"dimensions must be >= 1, got d={d}, h={h}, l={l}")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d + h))
    lim2 = np.sqrt(6.0 / (h + l))
    return HashHeadParams(
        w1=rng.uniform(-lim1, lim1, size=(d, h)).astype(np.float32),
        b1=np.zeros(h, dtype=np.float32),
        w2=rng.uniform(-lim2, lim2, size=(h, l)).astype(np.float32),
        b2=np.zeros(l, dtype=np.float32),
    )


def init_adam(params: HashHeadParams) -> AdamState:
    zeros = tuple(np.zeros_like(a, dtype=np.float32) for a in params.arrays())
    return AdamState(m=zeros, v=tuple(np.copy(z) for z in zeros), t=0)


def _forward_parts(params: HashHeadParams, feats: np.ndarray):
    x = np.asarray(feats, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d:
        raise DataError(f"feature width {x.shape} does not match d={params.d}")
    pre = x @ params.w1.astype(np.float64) + params.b1.astype(np.float64)
    hidden = np.maximum(pre, 0.0)
    z = np.tanh(hidden @ params.w2.astype(np.float64) + params.b2.astype(np.float64))
    return x, pre, hidden, z


def forward(params: HashHeadParams, feats: np.ndarray) -> np.ndarray:
    """Relaxed codes: tanh(relu(x w1 + b1) w2 + b2), one row per sample."""
    return _forward_parts(params, feats)[3]


def forward_blocked(params: HashHeadParams, feats: np.ndarray, block: int = 1024) -> np.ndarray:
    n = feats.shape[0]
    out = np.empty((n, params.l), dtype=np.float64)
    for s in range(0, n, block):
        out[s : s + block] = forward(params, feats[s : s + block])
    return out


def backward(params: HashHeadParams, feats: np.ndarray, upstream: np.ndarray) -> HeadGrads:
    """Exact reverse-mode gradients of the forward map composed with upstream.

    upstream is dLoss/dz with shape (batch, l); the relu derivative at
    exactly zero is taken as zero.
    """
    x, pre, hidden, z = _forward_parts(params, feats)
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != z.shape:
        raise DataError(f"upstream shape {up.shape} does not match codes {z.shape}")
    d_logits = up * (1.0 - z * z)
    g_w2 = hidden.T @ d_logits
    g_b2 = d_logits.sum(axis=0)
    d_hidden = d_logits @ params.w2.astype(np.float64).T
    d_pre = d_hidden * (pre > 0.0)
    g_w1 = x.T @ d_pre
    g_b1 = d_pre.sum(axis=0)
    return HeadGrads(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2)


def adam_step(
    params: HashHeadParams, grads: HeadGrads, state: AdamState, eta: float
) -> tuple[HashHeadParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    new_params = []
    new_m = []
    new_v = []
    corr1 = 1.0 - state.beta1**t
    corr2 = 1.0 - state.beta2**t
    with np.errstate(over="ignore", invalid="ignore"):
        for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
            g = np.asarray(g, dtype=np.float64)
            m64 = state.beta1 * m.astype(np.float64) + (1.0 - state.beta1) * g
            v64 = state.beta2 * v.astype(np.float64) + (1.0 - state.beta2) * g * g
            step = eta * (m64 / corr1) / (np.sqrt(v64 / corr2) + state.eps)
            new_params.append((p.astype(np.float64) - step).astype(np.float32))
            new_m.append(m64.astype(np.float32))
            new_v.append(v64.astype(np.float32))
    if not all(np.isfinite(a).all() for a in new_params):
        raise NumericalError("non-finite parameter values after update; training diverged")
    updated = HashHeadParams(*new_params)
    return updated, AdamState(
        m=tuple(new_m), v=tuple(new_v), t=t,
        beta1=state.beta1, beta2=state.beta2, eps=state.eps,
    )


def save_checkpoint(path, params: HashHeadParams, state: AdamState) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQQQ", CHECKPOINT_VERSION, params.d, params.h, params.l))
        for arr in params.arrays() + state.m + state.v:
            fh.write(arr.astype("<f4").tobytes())
        fh.write(struct.pack("<f", float(state.t)))


def load_checkpoint(path) -> tuple[HashHeadParams, AdamState]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic at offset 0: expected {CHECKPOINT_MAGIC!r}, got {raw[:4]!r}")
    version, d, h, l = struct.unpack_from("<IQQQ", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 4")
    shapes = [(d, h), (h,), (h, l), (l,)]
    offset = 32
    groups = []
    for _ in range(3):  # params, adam m, adam v
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            if offset + 4 * count > len(raw):
                raise FormatError(f"truncated at offset {len(raw)}")
            arrays.append(
                np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
            )
            offset += 4 * count
        groups.append(tuple(arrays))
    if offset + 4 != len(raw):
        raise FormatError(f"bad length: step counter expected at offset {offset}")
    (t,) = struct.unpack_from("<f", raw, offset)
    params = HashHeadParams(*groups[0])
    state = AdamState(m=groups[1], v=groups[2], t=int(t))
    return params, state
