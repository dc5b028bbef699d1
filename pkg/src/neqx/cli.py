"""Command-line entry point: ``neqx <subcommand> [flags]``.

Exit status is 0 on success, 2 for usage errors and missing files, 1 for any
other failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import load_config
from .data import NORM_PROFILES, as_dataset, read_ivecs, read_vecs, synthesize, write_vecs
from .errors import NeqxError
from .evaluation import brute_force_topk, default_checkpoints, recall_curve
from .experiment import run_experiment, train_model, training_sample, write_curve_csv
from .storage import append_codes, deserialize_index, serialize_index
from .vq import KINDS, sub_seed

log = logging.getLogger("neqx")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _existing(path: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _write_rows(path, header, rows) -> None:
    fh = open(path, "w", newline="") if path and path != "-" else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_synth(a) -> int:
    X = synthesize(a.n, a.d, a.profile, seed=a.seed)
    write_vecs(X, a.out)
    print(f"wrote {X.shape[0]} x {X.shape[1]} ({a.profile}) to {a.out}")
    return 0


def cmd_train(a) -> int:
    X = read_vecs(_existing(a.data))
    kind = ("ne-" if a.norm_explicit else "") + a.quantizer
    train = training_sample(X, a.train_sample, sub_seed(a.seed, "sample", 0))
    model = train_model(kind, train, a.m, a.k, mprime=a.mprime, seed=a.seed, max_iters=a.max_iters,
                        opq_rounds=a.opq_rounds, aq_rounds=a.aq_rounds, beam_width=a.beam_width,
                        exact_norm=a.exact_norm)
    codes = model.encode(X)
    serialize_index(model, codes, a.out)
    print(f"wrote {kind} index (M={a.m}, K={a.k}, n={X.shape[0]}) to {a.out}")
    return 0


def cmd_encode(a) -> int:
    model, _ = deserialize_index(_existing(a.index))
    X = as_dataset(read_vecs(_existing(a.data)), model.d)
    n = append_codes(a.index, model.encode(X))
    print(f"appended {X.shape[0]} items, index now holds {n}")
    return 0


def cmd_gt(a) -> int:
    X = read_vecs(_existing(a.data))
    Q = read_vecs(_existing(a.queries))
    truth = brute_force_topk(X, Q, a.topk)
    write_vecs(truth, a.out, "ivecs")
    print(f"wrote top-{a.topk} ground truth for {Q.shape[0]} queries to {a.out}")
    return 0


def cmd_eval(a) -> int:
    if a.config:
        overrides = {"topk": a.topk, "checkpoints": a.checkpoints, "seed": a.seed,
                     "repetitions": a.repetitions,
                     "quantizers": a.quantizers.split(",") if a.quantizers else None}
        cfg = load_config(_existing(a.config), overrides)
        out_dir = a.out or "report"
        manifest = run_experiment(cfg, out_dir)
        for kind, rec in manifest["mean_recall"].items():
            print(f"{kind}: " + " ".join(f"{t}:{r:.4f}" for t, r in zip(manifest["checkpoints"], rec)))
        print(f"report written to {out_dir}")
        return 0
    if not (a.index and a.queries and a.gt):
        raise UsageError("eval needs --index, --queries and --gt (or --config)")
    model, codes = deserialize_index(_existing(a.index))
    Q = read_vecs(_existing(a.queries))
    truth = read_ivecs(_existing(a.gt))
    topk = a.topk or 20
    if truth.shape[1] < topk:
        raise UsageError(f"ground truth holds {truth.shape[1]} ids per query, fewer than --topk {topk}")
    cps = a.checkpoints or default_checkpoints(codes.shape[0])
    curve = recall_curve(model, None, Q, truth[:, :topk], cps, codes=codes)
    if not a.out:
        _write_rows(None, ("T", "mean_recall", "stddev"), [(t, repr(r), repr(s)) for t, r, s in curve.rows()])
    else:
        write_curve_csv(curve, a.out)
        meta = {"schema_version": 1, "version": __version__, "index": a.index, "queries": a.queries,
                "gt": a.gt, "topk": topk, "kind": model.kind, "M": model.M, "K": model.K,
                "checkpoints": [int(t) for t in curve.checkpoints],
                "mean_recall": [float(r) for r in curve.mean_recall]}
        with open(os.path.splitext(a.out)[0] + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_imi_search(a) -> int:
    from .imi import candidate_rerank, train_neq_imi, train_vq_imi, traverse_neq, traverse_vq

    X = read_vecs(_existing(a.data))
    Q = as_dataset(read_vecs(_existing(a.queries)), X.shape[1])
    if a.kind == "neq":
        index = train_neq_imi(X, a.k, seed=a.seed)
    else:
        index = train_vq_imi(X, a.k, seed=a.seed)
    rows, probed = [], []
    for qi, q in enumerate(Q):
        if a.kind == "neq":
            tr = traverse_neq(index, q, a.budget, k=a.topk if a.early_stop else None,
                              data=X if a.early_stop else None)
        else:
            tr = traverse_vq(index, q, a.budget)
        ids, scores, short = candidate_rerank(tr.ids, q, X, a.topk)
        probed.append(tr.ids.size)
        for rank, (i, s) in enumerate(zip(ids, scores)):
            rows.append((qi, rank, int(i), repr(float(s)), tr.ids.size, int(short)))
    _write_rows(a.out, ("query", "rank", "id", "score", "candidates", "short"), rows)
    print(f"{Q.shape[0]} queries, mean candidates {np.mean(probed):.1f}", file=sys.stderr)
    return 0


def cmd_analyze(a) -> int:
    from .errorlab import figure2_study, verify_theorem1
    from .neq import norm_error_report

    model, codes = deserialize_index(_existing(a.index))
    X = as_dataset(read_vecs(_existing(a.data)), model.d)
    Q = as_dataset(read_vecs(_existing(a.queries)), model.d)
    if codes.shape[0] != X.shape[0]:
        codes = model.encode(X)
    os.makedirs(a.out, exist_ok=True)
    study = figure2_study(model, X, Q, k=a.topk, codes=codes)
    _write_rows(os.path.join(a.out, "error_study.csv"), ("kind", "error", "ip_error"),
                [(k, repr(e), repr(u)) for k, e, u in study.rows()])
    summary = {
        "schema_version": 1,
        "kind": model.kind,
        "error_study": study.summary(),
        "norm_error": norm_error_report(model, X, codes),
        "angle_bound": {
            "samples": a.samples,
            "violations_inside": verify_theorem1(a.samples, seed=a.seed, region="inside"),
            "violations_above": verify_theorem1(a.samples, seed=a.seed, region="above"),
        },
    }
    with open(os.path.join(a.out, "analysis.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_select_mprime(a) -> int:
    from .neq import evaluate_m_prime

    X = read_vecs(_existing(a.data))
    Q = as_dataset(read_vecs(_existing(a.queries)), X.shape[1])
    if a.m == 2:
        print(1)
        return 0
    table = evaluate_m_prime(X, a.quantizer, a.m, a.k, Q, k=a.topk, budget=a.budget, seed=a.seed)
    best = max(table.values())
    for mp, r in table.items():
        print(f"M'={mp}: recall@{a.budget} = {r:.4f}", file=sys.stderr)
    print(min(mp for mp, r in table.items() if r == best))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neqx", description="Norm-explicit quantization for inner-product search.")
    p.add_argument("--version", action="version", version=f"neqx {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--profile", choices=NORM_PROFILES, default="longtail")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a quantizer and write an index file")
    s.add_argument("--quantizer", choices=KINDS, required=True)
    s.add_argument("--norm-explicit", action="store_true")
    s.add_argument("--exact-norm", action="store_true")
    s.add_argument("--m", type=int, default=8)
    s.add_argument("--mprime", type=int, default=1)
    s.add_argument("--k", type=int, default=256)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--beam-width", type=int, default=32)
    s.add_argument("--opq-rounds", type=int, default=10)
    s.add_argument("--aq-rounds", type=int, default=3)
    s.add_argument("--max-iters", type=int, default=25)
    s.add_argument("--train-sample", type=int, default=100000)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", help="append codes of new items to an index")
    s.add_argument("--index", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("gt", help="exact top-k ground truth as ivecs")
    s.add_argument("--data", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--topk", type=int, default=20)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gt)

    s = sub.add_parser("eval", help="recall curve of an index, or a configured experiment")
    s.add_argument("--index")
    s.add_argument("--queries")
    s.add_argument("--gt")
    s.add_argument("--topk", type=int)
    s.add_argument("--checkpoints", type=_ints)
    s.add_argument("--config")
    s.add_argument("--quantizers", help="comma-separated, overrides the config")
    s.add_argument("--seed", type=int)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--out", help="curve CSV (index mode) or report directory (config mode)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("imi-search", help="multi-index candidates reranked by exact inner product")
    s.add_argument("--data", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--kind", choices=("vq", "neq"), default="neq")
    s.add_argument("--k", type=int, default=64, help="codewords per codebook")
    s.add_argument("--budget", type=int, default=1000, help="items to gather per query")
    s.add_argument("--topk", type=int, default=20)
    s.add_argument("--early-stop", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_imi_search)

    s = sub.add_parser("analyze", help="error decomposition, norm error and the angle-bound check")
    s.add_argument("--index", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--topk", type=int, default=20)
    s.add_argument("--samples", type=int, default=100000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("select-mprime", help="pick the number of norm codebooks on sample queries")
    s.add_argument("--quantizer", choices=KINDS, required=True)
    s.add_argument("--m", type=int, default=8)
    s.add_argument("--k", type=int, default=256)
    s.add_argument("--data", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--topk", type=int, default=20)
    s.add_argument("--budget", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_select_mprime)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NeqxError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

