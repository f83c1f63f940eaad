"""End-to-end run procedures shared by the HTTP service and the CLI.

Every run writes its manifest first, then its declared artifacts into the
output directory. Numeric CSV/JSON output uses shortest round-trip float
formatting, so byte-identical inputs and seeds give byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import hash_head, manifest, retrieval, simgraph, synthetic, trainer
from .errors import DataError, UsageError
from .feature_store import (
    FeatureMatrix,
    LabelSet,
    SplitSpec,
    load_features,
    load_labels,
    load_split,
    write_features,
    write_labels,
    write_split,
)
from .trainer import TrainConfig

ROUNDS_HEADER = "round,mu,sigma,m,n_plus,flipped,f_w"


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stats_row(stats: simgraph.AndRoundStats, fw: float) -> tuple:
    return (stats.round, stats.mu, stats.sigma, stats.m, stats.n_plus, stats.flipped, fw)


def _nan_to_none(x: float | None):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    return x


def run_synth(
    out_dir,
    clusters: int = 5,
    per_cluster: int = 200,
    dim: int = 32,
    spread: float = 0.15,
    seed: int = 0,
    query_fraction: float = 0.1,
) -> dict:
    out = _out_dir(out_dir)
    config = {
        "clusters": clusters,
        "per_cluster": per_cluster,
        "dim": dim,
        "spread": spread,
        "seed": seed,
        "query_fraction": query_fraction,
    }
    manifest.write_manifest(out, "synth", config, {}, seed)
    feats, labels = synthetic.synth(clusters, per_cluster, dim, spread, seed)
    split = synthetic.holdout_split(clusters, per_cluster, query_fraction)
    features_path = out / "features.sahf"
    labels_path = out / "labels.sahl"
    split_path = out / "split.txt"
    write_features(features_path, feats)
    write_labels(labels_path, labels)
    write_split(split_path, split)
    return {
        "features": str(features_path),
        "labels": str(labels_path),
        "split": str(split_path),
        "n": feats.n,
        "d": feats.d,
        "classes": labels.c,
    }


def run_graph(
    out_dir,
    features: str,
    k1: int | None = None,
    k2: int | None = None,
    gamma: float = 0.0,
    labels: str | None = None,
    symmetrize: bool = False,
    threads: int | None = 1,
) -> dict:
    out = _out_dir(out_dir)
    inputs = {"features": features}
    if labels:
        inputs["labels"] = labels
    config = {
        "features": str(features),
        "labels": str(labels) if labels else None,
        "k1": k1,
        "k2": k2,
        "gamma": gamma,
        "symmetrize": symmetrize,
        "threads": threads,
    }
    manifest.write_manifest(out, "graph", config, inputs, None)
    feats = load_features(features)
    k1 = k1 if k1 is not None else trainer.default_k(feats.n)
    k2 = k2 if k2 is not None else trainer.default_k(feats.n)
    graph = trainer.build_initial_graph(feats, k1, k2, threads=threads)
    n_plus_raw = graph.n_plus
    if symmetrize:
        graph = simgraph.symmetrize(graph)
    label_set = load_labels(labels, feats.n) if labels else None
    fw = simgraph.f_w(graph, label_set).f if label_set is not None else None
    sim = simgraph.pairwise_cosine_matrix(feats.data, threads=threads)
    stats = simgraph.round_stats(graph, sim, gamma, round_index=0)
    graph_path = out / "graph.sahw"
    simgraph.save_graph(graph_path, graph)
    _write_csv(
        out / "graph.csv",
        ROUNDS_HEADER,
        [_stats_row(stats, fw if fw is not None else float("nan"))],
    )
    return {
        "graph": str(graph_path),
        "stats": str(out / "graph.csv"),
        "n_plus": graph.n_plus,
        "n_plus_before_symmetrize": n_plus_raw if symmetrize else None,
        "f_w": fw,
        "mu": stats.mu,
        "sigma": stats.sigma,
        "m": stats.m,
    }


def _load_train_inputs(features, labels, split):
    feats = load_features(features)
    label_set = load_labels(labels, feats.n) if labels else None
    split_spec = load_split(split, feats.n) if split else None
    return feats, label_set, split_spec


def _subset(feats: FeatureMatrix, ids: np.ndarray) -> FeatureMatrix:
    return FeatureMatrix(feats.data[ids])


def _subset_labels(labels: LabelSet | None, ids: np.ndarray) -> LabelSet | None:
    if labels is None:
        return None
    return LabelSet(labels.membership[ids])


def train_artifacts(out: Path, result: trainer.TrainResult) -> dict:
    report = result.report
    checkpoint = out / "checkpoint.sahc"
    hash_head.save_checkpoint(checkpoint, result.params, result.adam)
    graph_path = out / "graph_final.sahw"
    simgraph.save_graph(graph_path, result.graph)
    _write_csv(
        out / "report.csv",
        "epoch,loss",
        [(i + 1, loss) for i, loss in enumerate(report.epoch_losses)],
    )
    _write_csv(
        out / "rounds.csv",
        ROUNDS_HEADER,
        [_stats_row(s, fw) for s, fw in zip(report.round_stats, report.round_fw)],
    )
    return {
        "checkpoint": str(checkpoint),
        "graph": str(graph_path),
        "report": str(out / "report.csv"),
        "rounds": str(out / "rounds.csv"),
        "initial_n_plus": report.initial_n_plus,
        "initial_f_w": _nan_to_none(report.initial_fw),
        "final_n_plus": result.graph.n_plus,
        "final_f_w": _nan_to_none(report.round_fw[-1] if report.round_fw else None),
        "final_loss": report.epoch_losses[-1] if report.epoch_losses else None,
    }


def run_train(
    out_dir,
    features: str,
    cfg: TrainConfig,
    labels: str | None = None,
    split: str | None = None,
    batch_probe=None,
) -> dict:
    out = _out_dir(out_dir)
    cfg.validate()
    inputs = {"features": features}
    if labels:
        inputs["labels"] = labels
    if split:
        inputs["split"] = split
    config = {"features": str(features), "labels": str(labels) if labels else None,
              "split": str(split) if split else None, **_cfg_dict(cfg)}
    manifest.write_manifest(out, "train", config, inputs, cfg.seed)
    feats, label_set, split_spec = _load_train_inputs(features, labels, split)
    if split_spec is not None:
        train_ids = split_spec.train_ids
        feats_train = _subset(feats, train_ids)
        labels_train = _subset_labels(label_set, train_ids)
    else:
        feats_train = feats
        labels_train = label_set
    result = trainer.train(feats_train, cfg, labels=labels_train, batch_probe=batch_probe)
    return train_artifacts(out, result)


def _cfg_dict(cfg: TrainConfig) -> dict:
    return {
        "bits": cfg.bits,
        "k1": cfg.k1,
        "k2": cfg.k2,
        "tau": cfg.tau,
        "lambda": cfg.lam,
        "gamma": cfg.gamma,
        "rounds": cfg.rounds,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "eta": cfg.eta,
        "seed": cfg.seed,
        "pic_mode": cfg.pic_mode,
        "pic_grad": cfg.pic_grad,
        "and_enabled": cfg.and_enabled,
        "symmetrize": cfg.symmetrize,
        "hidden": cfg.hidden,
        "threads": cfg.threads,
    }


def codes_for(params: hash_head.HashHeadParams, feats: FeatureMatrix, ids: np.ndarray):
    z = hash_head.forward_blocked(params, feats.data[ids])
    return retrieval.binarize(z)


def evaluate_checkpoint(
    params: hash_head.HashHeadParams,
    feats: FeatureMatrix,
    labels: LabelSet,
    split: SplitSpec,
    map_n: int = 5000,
    prec_n: int = 100,
    curve_max_n: int = 1000,
) -> dict:
    """Binarize query and retrieval codes, rank, and compute all metrics."""
    query_codes = codes_for(params, feats, split.query_ids)
    db_codes = codes_for(params, feats, split.retrieval_ids)
    ranked = retrieval.rank(
        query_codes, db_codes, query_ids=split.query_ids, db_ids=split.retrieval_ids
    )
    effective_map_n = map_n if map_n >= 1 else ranked.n_db
    metrics = {
        "map": retrieval.map_at_n(ranked, labels, effective_map_n),
        "map_n": effective_map_n,
        "precision": retrieval.precision_at_n(ranked, labels, prec_n),
        "precision_n": prec_n,
        "n_queries": int(split.query_ids.size),
        "n_db": int(split.retrieval_ids.size),
        "bits": query_codes.l,
    }
    curve = retrieval.pr_curve(ranked, labels)
    series = retrieval.precision_series(ranked, labels, curve_max_n)
    raw = retrieval.pr_raw(ranked, labels)
    return {
        "metrics": metrics,
        "pr_curve": curve,
        "precision_series": series,
        "pr_raw": raw,
        "db_codes": db_codes,
    }


def run_eval(
    out_dir,
    checkpoint: str,
    features: str,
    labels: str,
    split: str,
    map_n: int = 5000,
    prec_n: int = 100,
) -> dict:
    out = _out_dir(out_dir)
    inputs = {"checkpoint": checkpoint, "features": features, "labels": labels, "split": split}
    config = {
        "checkpoint": str(checkpoint),
        "features": str(features),
        "labels": str(labels),
        "split": str(split),
        "map_n": map_n,
        "prec_n": prec_n,
    }
    manifest.write_manifest(out, "eval", config, inputs, None)
    params, _ = hash_head.load_checkpoint(checkpoint)
    feats = load_features(features)
    if feats.d != params.d:
        raise DataError(f"checkpoint expects d={params.d}, features have d={feats.d}")
    label_set = load_labels(labels, feats.n)
    split_spec = load_split(split, feats.n)
    outcome = evaluate_checkpoint(params, feats, label_set, split_spec, map_n, prec_n)
    _write_json(out / "metrics.json", outcome["metrics"])
    _write_csv(out / "pr_curve.csv", "recall,precision", [tuple(r) for r in outcome["pr_curve"]])
    _write_csv(
        out / "precision_curve.csv",
        "n,precision",
        [(i + 1, p) for i, p in enumerate(outcome["precision_series"])],
    )
    _write_csv(
        out / "pr_raw.csv",
        "rank,recall,precision",
        [(int(r[0]), r[1], r[2]) for r in outcome["pr_raw"]],
    )
    retrieval.save_codes(out / "codes.sahb", outcome["db_codes"])
    return {
        "metrics": outcome["metrics"],
        "metrics_path": str(out / "metrics.json"),
        "pr_curve": str(out / "pr_curve.csv"),
        "precision_curve": str(out / "precision_curve.csv"),
        "codes": str(out / "codes.sahb"),
    }


def run_ablate(
    out_dir,
    features: str,
    cfg: TrainConfig,
    labels: str,
    split: str,
    grid_modes=None,
    grid_and=None,
    map_n: int = 100,
    prec_n: int = 100,
) -> dict:
    """Train every requested (pic mode, refresh on/off) cell from a shared
    initial graph and score each cell's retrieval quality."""
    out = _out_dir(out_dir)
    modes = tuple(grid_modes) if grid_modes else trainer.PIC_MODES
    and_states = tuple(grid_and) if grid_and is not None else (False, True)
    for mode in modes:
        if mode not in trainer.PIC_MODES:
            raise UsageError(f"unknown pic mode '{mode}' in grid")
    inputs = {"features": features, "labels": labels, "split": split}
    config = {
        "features": str(features), "labels": str(labels), "split": str(split),
        "grid_modes": list(modes), "grid_and": list(and_states),
        "map_n": map_n, "prec_n": prec_n, **_cfg_dict(cfg),
    }
    manifest.write_manifest(out, "ablate", config, inputs, cfg.seed)
    feats, label_set, split_spec = _load_train_inputs(features, labels, split)
    train_ids = split_spec.train_ids
    feats_train = _subset(feats, train_ids)
    labels_train = _subset_labels(label_set, train_ids)

    w0 = trainer.build_initial_graph(
        feats_train,
        cfg.k1 if cfg.k1 is not None else trainer.default_k(feats_train.n),
        cfg.k2 if cfg.k2 is not None else trainer.default_k(feats_train.n),
        threads=cfg.threads,
    )
    rows = []
    cells = {}
    for mode in modes:
        for and_on in and_states:
            cell_cfg = replace(cfg, pic_mode=mode, and_enabled=and_on)
            result = trainer.train(
                feats_train, cell_cfg, labels=labels_train, initial_graph=w0
            )
            cell_name = f"{mode}_{'and' if and_on else 'noand'}"
            cell_dir = _out_dir(out / "cells" / cell_name)
            artifacts = train_artifacts(cell_dir, result)
            outcome = evaluate_checkpoint(
                result.params, feats, label_set, split_spec, map_n, prec_n
            )
            rows.append(
                (
                    mode,
                    "on" if and_on else "off",
                    outcome["metrics"]["map"],
                    outcome["metrics"]["precision"],
                    artifacts["final_f_w"],
                    artifacts["final_n_plus"],
                )
            )
            cells[cell_name] = {
                "map": outcome["metrics"]["map"],
                "precision": outcome["metrics"]["precision"],
                "final_f_w": artifacts["final_f_w"],
                "final_n_plus": artifacts["final_n_plus"],
                "dir": str(cell_dir),
            }
    _write_csv(out / "ablate.csv", "pic,and,map,precision,f_w,n_plus", rows)
    return {"cells": cells, "table": str(out / "ablate.csv"), "initial_n_plus": w0.n_plus}
