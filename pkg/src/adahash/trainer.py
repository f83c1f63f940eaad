"""Round-based training loop over the similarity graph.

One run executes R rounds. Each round trains the head for T epochs of
mini-batches against the current graph, then recomputes the full pairwise
cosine matrix of the relaxed codes and lets the graph absorb newly similar
pairs. Batch order depends only on (seed, round, epoch), so identical
configurations reproduce identical runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import hash_head, objective, simgraph
from .errors import NumericalError, UsageError
from .feature_store import FeatureMatrix, LabelSet
from .hash_head import AdamState, HashHeadParams
from .simgraph import AndRoundStats, SignedSimilarityMatrix

PIC_MODES = objective.PIC_MODES


def default_k(n_train: int) -> int:
    """Neighbor count rule: 500 capped at one twentieth of the train set."""
    return max(1, min(500, n_train // 20))


@dataclass(frozen=True)
class TrainConfig:
    bits: int = 16
    k1: int | None = None  # None: apply default_k at train time
    k2: int | None = None
    tau: float = 1.0
    lam: float = 10.0
    gamma: float = 0.0
    rounds: int = 3
    epochs: int = 10
    batch_size: int = 50
    eta: float = 1e-4
    seed: int = 0
    pic_mode: str = "pic"
    pic_grad: str = "frozen"
    and_enabled: bool = True
    symmetrize: bool = False
    hidden: int = hash_head.DEFAULT_HIDDEN
    threads: int | None = 1

    def validate(self) -> "TrainConfig":
        if self.bits < 1:
            raise UsageError(f"bits must be >= 1, got {self.bits}")
        if self.rounds < 1:
            raise UsageError(f"rounds must be >= 1, got {self.rounds}")
        # epochs = 0 is a deliberate no-op schedule (graph built, no updates)
        if self.epochs < 0:
            raise UsageError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 2:
            raise UsageError(f"batch size must be >= 2, got {self.batch_size}")
        if self.tau <= 0:
            raise UsageError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise UsageError(f"lambda must be >= 0, got {self.lam}")
        if self.eta <= 0:
            raise UsageError(f"eta must be positive, got {self.eta}")
        if self.seed < 0:
            raise UsageError(f"seed must be >= 0, got {self.seed}")
        if self.hidden < 1:
            raise UsageError(f"hidden width must be >= 1, got {self.hidden}")
        if self.pic_mode not in PIC_MODES:
            raise UsageError(f"unknown pic mode '{self.pic_mode}'")
        if self.pic_grad not in objective.PIC_GRAD_MODES:
            raise UsageError(f"unknown pic_grad '{self.pic_grad}'")
        for name in ("k1", "k2"):
            k = getattr(self, name)
            if k is not None and k < 1:
                raise UsageError(f"{name} must be >= 1, got {k}")
        return self


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)  # length rounds * epochs
    round_stats: list = field(default_factory=list)  # AndRoundStats, length rounds
    round_fw: list = field(default_factory=list)  # length rounds, nan without labels
    initial_n_plus: int = 0
    initial_fw: float = float("nan")
    symmetrize_n_plus_before: int | None = None


@dataclass
class TrainResult:
    params: HashHeadParams
    adam: AdamState
    graph: SignedSimilarityMatrix
    report: TrainReport


def _epoch_order(seed: int, round_index: int, epoch_index: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([seed, round_index, epoch_index])
    return rng.permutation(n)


def build_initial_graph(
    feats: FeatureMatrix, k1: int, k2: int, threads: int | None = 1
) -> SignedSimilarityMatrix:
    """Low-order and high-order neighbor graphs intersected."""
    wl = simgraph.build_low_order(feats, k1, threads=threads)
    wh = simgraph.build_high_order(wl, k2, threads=threads)
    return simgraph.combine(wl, wh)


def _graph_fw(graph, labels) -> float:
    return simgraph.f_w(graph, labels).f if labels is not None else float("nan")


def train(
    feats: FeatureMatrix,
    cfg: TrainConfig,
    labels: LabelSet | None = None,
    initial_graph: SignedSimilarityMatrix | None = None,
    batch_probe=None,
) -> TrainResult:
    """Run the full schedule and return the trained head, final graph, and report.

    labels are only ever used to score graph quality for the report; they do
    not influence training. batch_probe, when given, is called as
    batch_probe(round, epoch, pair_batch, loss) after every batch.
    """
    cfg.validate()
    n, d = feats.n, feats.d
    k1 = cfg.k1 if cfg.k1 is not None else default_k(n)
    k2 = cfg.k2 if cfg.k2 is not None else default_k(n)
    if n < max(k1, k2) + 1:
        raise UsageError(f"need at least max(k1, k2) + 1 = {max(k1, k2) + 1} samples, got {n}")
    if labels is not None and labels.n != n:
        raise UsageError(f"label count {labels.n} does not match feature count {n}")

    report = TrainReport()
    if initial_graph is not None:
        if initial_graph.n != n:
            raise UsageError(f"initial graph size {initial_graph.n} does not match n={n}")
        graph = initial_graph
    else:
        graph = build_initial_graph(feats, k1, k2, threads=cfg.threads)
    if cfg.symmetrize:
        report.symmetrize_n_plus_before = graph.n_plus
        graph = simgraph.symmetrize(graph)
    report.initial_n_plus = graph.n_plus
    report.initial_fw = _graph_fw(graph, labels)

    params = hash_head.init_params(d, cfg.hidden, cfg.bits, cfg.seed)
    adam = hash_head.init_adam(params)
    x = feats.data

    for r in range(1, cfg.rounds + 1):
        for t in range(1, cfg.epochs + 1):
            order = _epoch_order(cfg.seed, r, t, n)
            batch_losses = []
            for start in range(0, n, cfg.batch_size):
                ids = order[start : start + cfg.batch_size]
                z = hash_head.forward(params, x[ids])
                pb = objective.PairBatch(ids=ids, z=z, w=graph.gather_signs(ids))
                loss, d_z = objective.total_loss_and_grad(
                    pb, cfg.tau, cfg.lam, mode=cfg.pic_mode, pic_grad=cfg.pic_grad
                )
                if not math.isfinite(loss):
                    raise NumericalError(
                        f"non-finite loss at round {r}, epoch {t}, batch start {start}"
                    )
                grads = hash_head.backward(params, x[ids], d_z)
                params, adam = hash_head.adam_step(params, grads, adam, cfg.eta)
                batch_losses.append(loss)
                if batch_probe is not None:
                    batch_probe(r, t, pb, loss)
            report.epoch_losses.append(float(np.mean(batch_losses)) if batch_losses else 0.0)
        z_all = hash_head.forward_blocked(params, x)
        sim = simgraph.pairwise_cosine_matrix(z_all, threads=cfg.threads)
        if cfg.and_enabled:
            graph, stats = simgraph.and_update(graph, sim, cfg.gamma, round_index=r)
        else:
            stats = simgraph.round_stats(graph, sim, cfg.gamma, round_index=r)
        report.round_stats.append(stats)
        report.round_fw.append(_graph_fw(graph, labels))

    return TrainResult(params=params, adam=adam, graph=graph, report=report)


ABLATION_CELLS = tuple(
    (mode, and_on) for mode in PIC_MODES for and_on in (False, True)
)


def ablation_grid(
    feats: FeatureMatrix,
    base_cfg: TrainConfig,
    labels: LabelSet | None = None,
) -> dict:
    """Train every (pic mode, graph refresh on/off) cell from a shared seed
    and a shared initial graph; returns {(mode, and_enabled): TrainResult}."""
    base_cfg.validate()
    n = feats.n
    k1 = base_cfg.k1 if base_cfg.k1 is not None else default_k(n)
    k2 = base_cfg.k2 if base_cfg.k2 is not None else default_k(n)
    w0 = build_initial_graph(feats, k1, k2, threads=base_cfg.threads)
    results = {}
    for mode, and_on in ABLATION_CELLS:
        cfg = replace(base_cfg, pic_mode=mode, and_enabled=and_on)
        results[(mode, and_on)] = train(
            feats, cfg, labels=labels, initial_graph=w0
        )
    return results
