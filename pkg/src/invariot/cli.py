"""
Command-line interface.

    invariot synth ...             noise sweep on synthetic point clouds (CSV + JSON)
    invariot align ...             two-stage embedding alignment with CSLS evaluation
    invariot check-gw ...          randomized GW / Frobenius cross-term check
    invariot check-procrustes ...  randomized closed-form dominance check

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 failed
verification.
"""

import argparse
import datetime
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .core import InvalidInputError, InvarianceBall, NumericalFailureError, parse_order
from .embeddings import (
    CSLS_K,
    BilingualDictionary,
    TwoStageConfig,
    load_dictionary,
    load_embeddings,
    translate,
    two_stage_solve,
    evaluate_precision,
    unit_normalize,
)
from .gromov import equivalence_suite
from .io import atomic_write_text, dumps_json, rows_to_csv, save_map
from .procrustes import closed_form_suite
from .sinkhorn import SinkhornSettings
from .solver import SolverConfig, TraceRecord
from .synthetic import CSV_FIELDS, DEFAULT_RESTARTS, run_noise_sweep

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_VERIFY = 4

# screened random starts for embedding alignment (see solver.solve)
ALIGN_RESTARTS = 64

logger = logging.getLogger("invariot")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be a positive finite number: {text!r}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def _order(text):
    try:
        return parse_order(text)
    except InvalidInputError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _float_list(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _add_solver_flags(sp, restarts):
    g = sp.add_argument_group("solver")
    g.add_argument("--p", type=_order, default=float("inf"), help="Schatten order: 1, 2, inf or a number >= 1 (default inf)")
    g.add_argument("--radius", type=_positive_float, default=None, help="ball radius (default: norm of the identity)")
    g.add_argument("--lambda0", type=_positive_float, default=1.0, help="initial regularization (default 1.0)")
    g.add_argument("--decay", type=_positive_float, default=0.95, help="annealing factor in (0, 1) (default 0.95)")
    g.add_argument("--lambda-min", type=_positive_float, default=1e-3, help="final regularization (default 1e-3)")
    g.add_argument("--max-iter", type=_positive_int, default=300, help="outer iteration cap (default 300)")
    g.add_argument("--tol", type=_positive_float, default=1e-6, help="relative change tolerance (default 1e-6)")
    g.add_argument("--sinkhorn-iters", type=_positive_int, default=1000, help="inner iteration cap (default 1000)")
    g.add_argument("--restarts", type=_positive_int, default=restarts,
                   help=f"random starts screened before the full solve (default {restarts})")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def _solver_config(args, d):
    ball = InvarianceBall(args.p, d, args.radius)
    return SolverConfig(
        ball=ball,
        lambda0=args.lambda0,
        decay=args.decay,
        lambda_min=args.lambda_min,
        outer_max_iters=args.max_iter,
        outer_tol=args.tol,
        sinkhorn=SinkhornSettings(max_inner_iters=args.sinkhorn_iters),
        seed=args.seed,
        restarts=args.restarts,
    )


def build_parser():
    parser = _Parser(prog="invariot", description="Optimal transport with global invariances.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("synth", help="noise sweep on synthetic point clouds")
    sp.add_argument("--d", type=_positive_int, default=3, help="dimension (default 3)")
    sp.add_argument("--n", type=_positive_int, default=100, help="points per cloud (default 100)")
    sp.add_argument("--family", type=_order, default=float("inf"), help="order of the planted map family (default inf)")
    sp.add_argument("--sigmas", type=_float_list, default=[0.0, 0.05, 0.1, 0.2], help="comma-separated noise levels")
    sp.add_argument("--methods", default="emd,sinkhorn,invariant-inf,invariant-2,oracle",
                    help="comma-separated: emd, sinkhorn, oracle, invariant (the family's order), invariant-<p>")
    sp.add_argument("--repetitions", type=_positive_int, default=5, help="instances per noise level (default 5)")
    sp.add_argument("--out", default="synth.csv", help="per-run CSV (default synth.csv)")
    sp.add_argument("--summary", default=None, help="aggregated JSON (default: --out with .json)")
    _add_solver_flags(sp, DEFAULT_RESTARTS)

    ap = sub.add_parser("align", help="align two embedding files and evaluate translation")
    ap.add_argument("--src", required=True, help="source embeddings (text format)")
    ap.add_argument("--tgt", required=True, help="target embeddings (text format)")
    ap.add_argument("--dict", default=None,
                    help="evaluation dictionary; without it every shared token is its own translation")
    ap.add_argument("--subsample-k", type=_positive_int, default=5000, help="stage 1 vocabulary (default 5000)")
    ap.add_argument("--stage2-vocab", type=_positive_int, default=20000, help="stage 2 vocabulary (default 20000)")
    ap.add_argument("--stage2-max-iter", type=_positive_int, default=50, help="stage 2 iteration cap (default 50)")
    ap.add_argument("--max-vocab", type=_positive_int, default=None, help="rows read per embedding file (default all)")
    ap.add_argument("--csls-k", type=_positive_int, default=CSLS_K, help=f"CSLS neighbourhood (default {CSLS_K})")
    ap.add_argument("--out", default="align.json", help="result JSON (default align.json)")
    ap.add_argument("--map-out", default=None, help="save the learned map as .npy")
    ap.add_argument("--trace", default=None, help="stream per-iteration records to this CSV")
    _add_solver_flags(ap, ALIGN_RESTARTS)

    gp = sub.add_parser("check-gw", help="randomized GW / Frobenius equivalence check")
    gp.add_argument("--trials", type=_positive_int, default=100)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--tol", type=_positive_float, default=1e-9)
    gp.add_argument("--out", default=None, help="also write the report as JSON")

    pp = sub.add_parser("check-procrustes", help="randomized closed-form dominance check")
    pp.add_argument("--trials", type=_positive_int, default=200)
    pp.add_argument("--samples", type=_positive_int, default=1000, help="random feasible maps per instance")
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--out", default=None, help="also write the report as JSON")
    return parser


def _timing(start):
    now = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    return {"timestamp": now, "runtime_s": round(time.perf_counter() - start, 3)}


def _cmd_synth(args, start):
    family = InvarianceBall(args.family, args.d)
    cfg = _solver_config(args, args.d)
    methods = [m for m in args.methods.split(",") if m.strip()]
    result = run_noise_sweep(args.d, args.n, family, args.sigmas, methods, args.repetitions, args.seed, cfg)
    atomic_write_text(args.out, rows_to_csv(CSV_FIELDS, result.csv_rows()))
    summary_path = args.summary or os.path.splitext(args.out)[0] + ".json"
    doc = result.summary()
    doc["command"] = "synth"
    doc["timing"] = _timing(start)
    atomic_write_text(summary_path, dumps_json(doc))
    for r in result.reports:
        print(f"{r.method:>14s} sigma={r.sigma:<6g} accuracy {r.accuracy_mean:.3f} +- {r.accuracy_std:.3f}"
              f"  map error {r.map_error_mean:.3g}")
    return EXIT_OK


class _TraceWriter:
    """Writes trace rows as they arrive to ``path.part`` and renames it when done."""

    def __init__(self, path):
        self.path = path
        self.part = path + ".part"
        self.fh = open(self.part, "w", encoding="utf-8", newline="")
        self.fh.write(rows_to_csv(("stage",) + TraceRecord.FIELDS, []))

    def __call__(self, stage, rec):
        self.fh.write(rows_to_csv(("stage",) + TraceRecord.FIELDS, [[stage] + rec.as_row()]).split("\n", 1)[1])
        self.fh.flush()

    def close(self, ok):
        self.fh.close()
        if ok:
            os.replace(self.part, self.path)
        else:
            os.unlink(self.part)


def _cmd_align(args, start):
    src = unit_normalize(load_embeddings(args.src, args.max_vocab))
    tgt = unit_normalize(load_embeddings(args.tgt, args.max_vocab))
    if src.dim != tgt.dim:
        raise InvalidInputError(f"dimension mismatch: {args.src} has d={src.dim}, {args.tgt} has d={tgt.dim}")
    V = min(src.vocab_size, tgt.vocab_size)
    stage2 = min(args.stage2_vocab, V)
    stage1 = min(args.subsample_k, stage2)
    cfg = TwoStageConfig(base=_solver_config(args, src.dim), stage1_size=stage1,
                         stage2_max_iters=args.stage2_max_iter, stage2_vocab=stage2)
    if args.dict:
        dictionary = load_dictionary(args.dict)
        dict_name = args.dict
    else:
        shared = set(tgt.tokens)
        dictionary = BilingualDictionary.identity([t for t in src.tokens if t in shared])
        dict_name = "identity"
    tracer = _TraceWriter(args.trace) if args.trace else None
    ok = False
    try:
        result = two_stage_solve(src.vectors, tgt.vectors, cfg, callback=tracer)
        ok = True
    finally:
        if tracer is not None:
            tracer.close(ok)
    P = result.stage2.map.matrix
    # dictionary entries missing from the source table are counted as skipped
    qtokens, ranked = translate(src, tgt, P, dictionary.sources, K=args.csls_k, topk=min(10, tgt.vocab_size))
    scores = evaluate_precision(ranked, dictionary, qtokens, tgt.tokens, ks=[k for k in (1, 5, 10) if k <= ranked.shape[1]])
    if args.map_out:
        save_map(args.map_out, P)
    doc = {
        "command": "align",
        "src": args.src,
        "tgt": args.tgt,
        "dictionary": dict_name,
        "config": {**cfg.as_dict(), "csls_k": args.csls_k, "max_vocab": args.max_vocab},
        "stage1": {"iterations": len(result.stage1.trace), "converged": result.stage1.converged,
                   "objective": result.stage1.trace.records[-1].objective},
        "stage2": {"iterations": len(result.stage2.trace), "converged": result.stage2.converged,
                   "objective": result.stage2.trace.records[-1].objective},
        **scores,
        "timing": _timing(start),
    }
    atomic_write_text(args.out, dumps_json(doc))
    print(" ".join(f"{k}={scores[k]:.4f}" for k in scores if k.startswith("P@"))
          + f" evaluated={scores['evaluated']} skipped={scores['skipped']}")
    return EXIT_OK


def _cmd_check_gw(args, start):
    rep = equivalence_suite(trials=args.trials, seed=args.seed, tol=args.tol)
    print(f"max |cross term - ||X G Y^T||_F^2| = {rep.max_abs_diff:.3e} over {rep.trials} trials; "
          f"quadruple-loop check on {rep.oracle_checked} trials, max deviation {rep.max_oracle_diff:.3e}")
    if args.out:
        atomic_write_text(args.out, dumps_json({"command": "check-gw", "seed": args.seed, **rep.as_dict()}))
    return EXIT_OK if rep.passed else EXIT_VERIFY


def _cmd_check_procrustes(args, start):
    rep = closed_form_suite(trials=args.trials, samples=args.samples, seed=args.seed)
    print(f"max relative value error {rep.max_value_error:.3e}; "
          f"min margin over {args.samples} random maps {rep.min_margin:.3e} ({rep.trials} trials)")
    if args.out:
        atomic_write_text(args.out, dumps_json({"command": "check-procrustes", "seed": args.seed,
                                                "samples": args.samples, **rep.as_dict()}))
    return EXIT_OK if rep.passed else EXIT_VERIFY


_COMMANDS = {
    "synth": _cmd_synth,
    "align": _cmd_align,
    "check-gw": _cmd_check_gw,
    "check-procrustes": _cmd_check_procrustes,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        return _COMMANDS[args.command](args, start)
    except (InvalidInputError, OSError) as exc:
        print(f"invariot: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalFailureError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"invariot: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
