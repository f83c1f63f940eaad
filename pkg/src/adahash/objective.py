"""Similarity-preserving training objective with per-pair information weights.

The batch loss is sum_ij a_ij * (s_ij - w_ij)^2 + lambda * ||Z - sign(Z)||^2,
where s is the pairwise cosine matrix of the relaxed codes and a comes from
the negative log of a batch-wide softmax over s / tau: rare (dissimilar)
pairs carry more weight. Three weighting modes exist:

    pic        a_ij = -log p_ij           (dissimilar pairs weighted up)
    pic0       a_ij = 1                   (the unweighted baseline)
    pic_minus  a_ij = -log(1 - p_ij)      (the deliberately reversed variant)

The softmax normalizes over all b*b entries of the batch, diagonal included.
Gradients treat sign(Z) as a constant everywhere; the weights are constants
by default (``pic_grad="frozen"``) or differentiated (``"through"``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, UsageError
from .simgraph import NORM_EPSILON, normalize_rows

PIC_MODES = ("pic", "pic0", "pic_minus")
PIC_GRAD_MODES = ("frozen", "through")


@dataclass(frozen=True)
class PairBatch:
    """One training batch: sample ids, relaxed codes, and the gathered signed
    similarity sub-matrix for those ids."""

    ids: np.ndarray
    z: np.ndarray  # (b, l) float64
    w: np.ndarray  # (b, b) entries in {-1, +1}

    def __post_init__(self):
        b = self.z.shape[0]
        if self.w.shape != (b, b):
            raise DataError(f"w shape {self.w.shape} does not match batch size {b}")


def pairwise_cosine(z: np.ndarray) -> np.ndarray:
    """Cosine similarity between every pair of rows; zero rows give zeros."""
    zn = normalize_rows(z)
    return zn @ zn.T


def pic_log_p(s: np.ndarray, tau: float) -> np.ndarray:
    """Log of the batch-wide softmax of s / tau, stabilized via log-sum-exp."""
    if tau <= 0:
        raise UsageError(f"temperature must be positive, got {tau}")
    scaled = np.asarray(s, dtype=np.float64) / tau
    return scaled - logsumexp(scaled)


def pic_weights(s: np.ndarray, tau: float, mode: str = "pic") -> np.ndarray:
    """Nonnegative per-pair weights; see the module docstring for the modes."""
    if mode not in PIC_MODES:
        raise UsageError(f"unknown pic mode '{mode}'; expected one of {PIC_MODES}")
    if mode == "pic0":
        if tau <= 0:
            raise UsageError(f"temperature must be positive, got {tau}")
        return np.ones_like(np.asarray(s, dtype=np.float64))
    log_p = pic_log_p(s, tau)
    if mode == "pic":
        return -log_p
    # -log(1 - p) computed as -log(-expm1(log p)) to stay exact for p near 0 or 1
    return -np.log(-np.expm1(log_p))


def loss_l1(s: np.ndarray, w: np.ndarray, a: np.ndarray) -> float:
    """Weighted squared residual between code similarities and graph signs."""
    r = np.asarray(s, dtype=np.float64) - np.asarray(w, dtype=np.float64)
    return float(np.sum(np.asarray(a, dtype=np.float64) * r * r))


def loss_l0(s: np.ndarray, w: np.ndarray) -> float:
    """Unweighted residual, the degenerate a=1 case."""
    r = np.asarray(s, dtype=np.float64) - np.asarray(w, dtype=np.float64)
    return float(np.sum(r * r))


def binarize_signs(z: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = +1."""
    return np.where(np.asarray(z) >= 0.0, 1.0, -1.0)


def loss_l2_quant(z: np.ndarray) -> float:
    """Squared distance between relaxed codes and their binarization."""
    diff = np.asarray(z, dtype=np.float64) - binarize_signs(z)
    return float(np.sum(diff * diff))


def total_loss_and_grad(
    pb: PairBatch,
    tau: float,
    lam: float,
    mode: str = "pic",
    pic_grad: str = "frozen",
) -> tuple[float, np.ndarray]:
    """Batch loss and its exact gradient with respect to the relaxed codes.

    Returns (loss, dL/dz) with dL/dz shaped like pb.z. sign(z) is constant
    under differentiation; the pair weights are constant unless
    pic_grad="through".
    """
    if lam < 0:
        raise UsageError(f"quantization weight must be >= 0, got {lam}")
    if pic_grad not in PIC_GRAD_MODES:
        raise UsageError(f"unknown pic_grad '{pic_grad}'; expected one of {PIC_GRAD_MODES}")
    z = np.asarray(pb.z, dtype=np.float64)
    w = np.asarray(pb.w, dtype=np.float64)

    norms = np.linalg.norm(z, axis=1)
    zero_rows = norms < NORM_EPSILON
    zn = normalize_rows(z)
    s = zn @ zn.T

    a = pic_weights(s, tau, mode)
    r = s - w
    l1 = float(np.sum(a * r * r))
    b_codes = binarize_signs(z)
    quant_diff = z - b_codes
    l2 = float(np.sum(quant_diff * quant_diff))
    loss = l1 + lam * l2

    ds = 2.0 * a * r
    if pic_grad == "through" and mode != "pic0":
        p = np.exp(pic_log_p(s, tau))
        r2 = r * r
        if mode == "pic":
            ds = ds + (p * np.sum(r2) - r2) / tau
        else:  # pic_minus: a = -log(1 - p)
            q = p / np.maximum(1.0 - p, NORM_EPSILON)
            ds = ds + (q * r2 - p * np.sum(r2 * q)) / tau

    # chain d/ds through the cosine: for unit rows u_i, ds_ij/dz_i =
    # (u_j - s_ij * u_i) / ||z_i||; accumulate both orientations of each pair
    h = ds + ds.T
    row_mix = np.sum(h * s, axis=1, keepdims=True)
    safe_norms = np.where(zero_rows, 1.0, norms)[:, None]
    d_z = (h @ zn - row_mix * zn) / safe_norms
    d_z[zero_rows] = 0.0
    d_z = d_z + lam * 2.0 * quant_diff
    return loss, d_z
