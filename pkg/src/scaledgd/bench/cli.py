"""Command line entry point: ``run``, ``table`` and ``ingest``."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, load_experiment_config
from .io import DataFormatError, ingest_matrix_csv, write_trace
from .runner import OUTPUT_ENV, SweepSummary, resolve_output_dir, run_experiment, sweep_summary_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _cmd_run(args):
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.resolved["seed"] = args.seed
    out = resolve_output_dir(cfg, args.out)
    _, summary = run_experiment(cfg, out_dir=out, threads=args.threads)
    print(sweep_summary_table(summary))
    print(f"\nwrote {len(summary.rows)} traces and summary.json to {out}")
    return EXIT_OK


def _cmd_table(args):
    with open(args.summary) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{args.summary}:{exc.lineno}: {exc.msg}") from None
    summary = SweepSummary.from_dict(d)
    if not summary.rows:
        raise DataFormatError(f"{args.summary}: summary has no rows")
    print(sweep_summary_table(summary))
    return EXIT_OK


def _cmd_ingest(args):
    X = ingest_matrix_csv(args.data)
    print(f"{args.data}: {X.shape[0]} rows x {X.shape[1]} columns")
    if args.rank is None:
        return EXIT_OK
    from ..operators import ObservationMask
    from ..solvers_matrix import MatrixSolverConfig, solve_matrix_completion

    if not 1 <= args.rank <= min(X.shape):
        raise ConfigError(f"--rank must lie in [1, {min(X.shape)}]")
    if not 0 < args.p <= 1:
        raise ConfigError("--p must lie in (0, 1]")
    mask = ObservationMask.bernoulli(X.shape, args.p, seed=args.seed)
    cfg = MatrixSolverConfig(args.rank, max_iters=args.max_iters, stop_tol=args.stop_tol)
    # the full matrix is the reference, so the trace reports error against every entry
    res = solve_matrix_completion(mask, mask.project(X), X, cfg)
    s = np.linalg.svd(X, compute_uv=False)
    best = float(np.sqrt(np.sum(s[args.rank:] ** 2)) / np.linalg.norm(X))
    print(f"rank-{args.rank} completion from p={args.p}: status {res.status}, "
          f"{res.trace[-1]['t']} iterations, rel error {res.final_rel_error:.4e} "
          f"(best rank-{args.rank} approximation {best:.4e})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "ingest_trace.csv")
        write_trace(path, res.trace)
        print(f"trace written to {path}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="scaledgd-bench", description="Run ScaledGD benchmark experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", help=f"output directory (default: config output_dir, ${OUTPUT_ENV}, ./bench_out)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("table", help="print the median table of a summary.json")
    p.add_argument("summary")
    p.set_defaults(func=_cmd_table)

    p = sub.add_parser("ingest", help="load a dense CSV matrix, optionally complete it from a random sample")
    p.add_argument("data")
    p.add_argument("--rank", type=int)
    p.add_argument("--p", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--stop-tol", type=float, default=1e-8)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ingest)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
