"""Train configured models on one dataset and write recall curves and error reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os

import numpy as np

from . import __version__
from .config import RunConfig, model_kinds
from .data import as_dataset, norm_stats, read_vecs, synthesize
from .errorlab import figure2_study
from .evaluation import RecallCurve, brute_force_topk, default_checkpoints, recall_curve
from .neq import neq_train, norm_error_report
from .vq import sub_seed, train_quantizer

__all__ = ["SCHEMA_VERSION", "train_model", "load_inputs", "training_sample", "run_experiment",
           "write_curve_csv"]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CURVE_COLUMNS = ("T", "mean_recall", "stddev")
ERROR_COLUMNS = ("kind", "error", "ip_error")


def train_model(kind: str, data, M: int, K: int, *, mprime: int = 1, seed: int = 0,
                max_iters: int = 25, opq_rounds: int = 10, aq_rounds: int = 3,
                beam_width: int = 32, exact_norm: bool = False, normalize: bool = True):
    """``kind`` is a baseline (pq, opq, rq, aq) or its norm-explicit variant (ne-pq, ...)."""
    kw = dict(seed=seed, max_iters=max_iters, opq_rounds=opq_rounds, aq_rounds=aq_rounds,
              beam_width=beam_width)
    if kind.startswith("ne-"):
        return neq_train(data, kind[3:], M, mprime, K, exact_norm=exact_norm, normalize=normalize, **kw)
    return train_quantizer(kind, data, M, K, **kw)


def load_inputs(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.data:
        X = read_vecs(cfg.data)
        if not cfg.queries:
            raise FileNotFoundError("a dataset file needs a matching queries file")
        Q = as_dataset(read_vecs(cfg.queries), X.shape[1])
        return X, Q
    X = synthesize(cfg.synth_n, cfg.synth_d, cfg.profile, seed=sub_seed(cfg.seed, "data"))
    Q = synthesize(cfg.n_queries, cfg.synth_d, cfg.profile, seed=sub_seed(cfg.seed, "queries"))
    return X, Q


def training_sample(X: np.ndarray, size: int, seed: int) -> np.ndarray:
    """Uniform sample without replacement when the dataset exceeds ``size``."""
    if X.shape[0] <= size:
        return X
    idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], size, replace=False))
    return X[idx]


def write_curve_csv(curve: RecallCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for t, r, s in curve.rows():
            w.writerow((t, repr(r), repr(s)))


def _combine(curves: list[RecallCurve], meta: dict) -> RecallCurve:
    means = np.stack([c.mean_recall for c in curves])
    return RecallCurve(
        checkpoints=curves[0].checkpoints,
        mean_recall=means.mean(axis=0),
        stddev=means.std(axis=0) if len(curves) > 1 else np.zeros(means.shape[1]),
        per_query=curves[0].per_query if len(curves) == 1 else None,
        metadata=meta,
    )


def run_experiment(cfg: RunConfig, out_dir) -> dict:
    """Write per-model curve CSVs, norm/angular error clouds, figures and ``manifest.json``.

    Returns the manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    X, Q = load_inputs(cfg)
    n = X.shape[0]
    if cfg.topk > n:
        raise ValueError(f"topk={cfg.topk} exceeds the dataset size {n}")
    truth = brute_force_topk(X, Q, cfg.topk)
    checkpoints = cfg.checkpoints or default_checkpoints(n)

    curves, seeds, norm_errors, studies = {}, {}, {}, {}
    for kind in model_kinds(cfg):
        runs = []
        for rep in range(cfg.repetitions):
            seed = sub_seed(cfg.seed, "train", kind, rep)
            seeds[f"{kind}/{rep}"] = seed
            train = training_sample(X, cfg.train_sample, sub_seed(cfg.seed, "sample", rep))
            log.info("training %s (repetition %d, %d items)", kind, rep, train.shape[0])
            model = train_model(kind, train, cfg.m, cfg.k, mprime=cfg.mprime, seed=seed,
                                max_iters=cfg.max_iters, opq_rounds=cfg.opq_rounds,
                                aq_rounds=cfg.aq_rounds, beam_width=cfg.beam_width,
                                exact_norm=cfg.exact_norm, normalize=cfg.normalize)
            codes = model.encode(X)
            runs.append(recall_curve(model, X, Q, truth, checkpoints, codes=codes))
            if rep == 0:
                norm_errors[kind] = norm_error_report(model, X, codes)
                if cfg.error_study:
                    study = figure2_study(model, X, Q, k=cfg.topk, truth=truth, codes=codes)
                    studies[kind] = study.summary()
                    _write_error_study(study, os.path.join(out_dir, f"errors_{kind}.csv"))
        meta = {"kind": kind, "M": cfg.m, "mprime": cfg.mprime if kind.startswith("ne-") else 0,
                "K": cfg.k, "repetitions": cfg.repetitions}
        curves[kind] = _combine(runs, meta)
        write_curve_csv(curves[kind], os.path.join(out_dir, f"curve_{kind}.csv"))

    stats = norm_stats(X)
    figures = []
    if cfg.figures:
        from .plots import plot_norm_histogram, plot_recall_curves

        plot_recall_curves(curves, os.path.join(out_dir, "recall_curves.png"), cfg.topk)
        plot_norm_histogram(stats, os.path.join(out_dir, "norm_hist.png"))
        figures = ["recall_curves.png", "norm_hist.png"]

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "config": dataclasses.asdict(cfg),
        "seeds": seeds,
        "n": n,
        "d": int(X.shape[1]),
        "n_queries": int(Q.shape[0]),
        "checkpoints": [int(t) for t in curves[next(iter(curves))].checkpoints],
        "curves": {k: f"curve_{k}.csv" for k in curves},
        "mean_recall": {k: [float(v) for v in c.mean_recall] for k, c in curves.items()},
        "norm_error": norm_errors,
        "error_study": studies,
        "norm_stats": {"min": stats.min, "max": stats.max, "mean": stats.mean, "stddev": stats.stddev},
        "figures": figures,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _write_error_study(study, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERROR_COLUMNS)
        for kind, e, u in study.rows():
            w.writerow((kind, repr(e), repr(u)))
