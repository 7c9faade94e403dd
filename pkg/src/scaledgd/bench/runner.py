"""Sweep execution: instance generation, solver dispatch, trace and summary output."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..models import CorruptionSpec, GroundTruthSpec, gen_matrix_truth, gen_sparse_corruption, gen_tensor_truth
from ..operators import GaussianSensingOp, ObservationMask
from ..solvers_matrix import (
    MatrixSolverConfig,
    solve_matrix_completion,
    solve_matrix_rpca,
    solve_matrix_sensing,
    solve_scaledgd_lambda,
)
from ..solvers_tensor import (
    TensorSolverConfig,
    solve_tensor_completion,
    solve_tensor_rpca,
    solve_tensor_sensing,
)
from .io import write_trace

OUTPUT_ENV = "SCALEDGD_OUTPUT_DIR"
SUPPORT_RTOL = 1e-8


def derive_seed(*parts):
    """63-bit seed from a hash of the parts; stable across runs and platforms."""
    h = hashlib.blake2b("|".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") & (2 ** 63 - 1)


@dataclass
class SweepSummary:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {"metadata": self.metadata, "rows": self.rows}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d.get("rows", [])), dict(d.get("metadata", {})))

    def dumps(self):
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if not math.isfinite(x) else x
    if isinstance(x, np.integer):
        return int(x)
    return x


def _shape(pt, order):
    n = pt["n"]
    return tuple(n) if isinstance(n, list) else (n,) * order


def _truth_spec(problem, pt, seed):
    order = 3 if problem.startswith("tensor") else 2
    return GroundTruthSpec(_shape(pt, order), pt["r"], kappa=pt["kappa"], sigma_max=pt["sigma_max"],
                           seed=seed, symmetric=problem == "scaledgd_lambda")


def _solver_cfg(problem, pt, variant, run_seed):
    pre = "vanilla" if variant == "vanilla" else "scaled"
    common = dict(step_size=pt["step_size"], max_iters=pt["max_iters"], stop_tol=pt["stop_tol"],
                  preconditioner=pre, seed=run_seed)
    if problem.startswith("tensor"):
        return TensorSolverConfig(pt["r"], zeta0=pt["zeta0"], zeta1=pt["zeta1"], rho=pt["rho"],
                                  projection_radius=pt["projection_radius"], radius_const=pt["radius_const"], **common)
    rank = pt["overparam_rank"] if problem == "scaledgd_lambda" else pt["r"]
    alpha = pt["alpha_solver"] if pt["alpha_solver"] is not None else pt["alpha"]
    return MatrixSolverConfig(rank, alpha=alpha, projection_radius=pt["projection_radius"],
                              radius_const=pt["radius_const"], lam=pt["lam"], init_scale=pt["init_scale"],
                              mixed=variant == "mixed", switch_const=pt["switch_const"], **common)


def run_single(problem, pt, instance_seed, run_seed, variant):
    """Generate the instance for ``instance_seed`` and solve it; return ``(SolverResult, extras)``."""
    spec = _truth_spec(problem, pt, derive_seed(instance_seed, "truth"))
    tensor = problem.startswith("tensor")
    X, F = gen_tensor_truth(spec) if tensor else gen_matrix_truth(spec)
    cfg = _solver_cfg(problem, pt, variant, run_seed)
    meas_seed = derive_seed(instance_seed, "measurement")
    extras = {}
    if problem.endswith("sensing") or problem == "scaledgd_lambda":
        op = GaussianSensingOp(pt["m"], X.shape, seed=meas_seed, storage=pt["storage"])
        y = op.apply(X)
        if problem == "matrix_sensing":
            res = solve_matrix_sensing(op, y, X, cfg)
        elif problem == "tensor_sensing":
            res = solve_tensor_sensing(op, y, X, cfg)
        else:
            res = solve_scaledgd_lambda(op, y, X, cfg, true_rank=pt["r"])
            if res.factors is not None and cfg.rank > pt["r"]:
                s = np.linalg.svd(res.factors.L, compute_uv=False)
                extras["spurious_ratio"] = float(s[pt["r"]] / s[pt["r"] - 1])
            extras["switch_iteration"] = res.info.get("switch_iteration")
            extras["lambda"] = res.info.get("lambda")
    elif problem.endswith("completion"):
        mask = ObservationMask.bernoulli(X.shape, pt["p"], seed=meas_seed)
        Yobs = mask.project(X)
        res = (solve_tensor_completion if tensor else solve_matrix_completion)(mask, Yobs, X, cfg)
        extras["projection_radius"] = res.info.get("projection_radius")
    else:
        S = gen_sparse_corruption(X.shape, X, CorruptionSpec(pt["alpha"], pt["corruption_magnitude"],
                                                             seed=derive_seed(instance_seed, "corruption")))
        extras["corrupted_entries"] = int(np.count_nonzero(S))
        Y = X + S
        if tensor:
            res = solve_tensor_rpca(Y, X, cfg)
            extras.update(zeta0=res.info["zeta0"], zeta1=res.info["zeta1"], rho=res.info["rho"])
            col_f, col_i = res.trace.column("err_fro"), res.trace.column("err_inf")
            extras["entrywise_le_fro"] = bool(np.all(col_i <= col_f))
        else:
            res = solve_matrix_rpca(Y, X, cfg)
            Sh = res.info["sparse_estimate"]
            big = np.abs(Sh) > SUPPORT_RTOL * float(np.max(np.abs(X)))
            extras["support_subset"] = bool(not np.any(big & (S == 0)))
            # off-support entries of any size, including those at rounding level
            extras["off_support_nonzeros"] = int(np.sum((Sh != 0) & (S == 0)))
            extras["off_support_max_abs"] = float(np.max(np.abs(np.where(S == 0, Sh, 0.0))))
    return res, extras


def _task(cfg, idx, pt, rep, variant):
    inst = derive_seed(cfg.seed, idx, rep)
    run = derive_seed(cfg.seed, idx, rep, variant)
    res, extras = run_single(cfg.problem, pt, inst, run, variant)
    tol = pt["tol"]
    tr = res.trace
    row = {
        "sweep_parameter": cfg.sweep["parameter"] if cfg.sweep else None,
        "value": cfg.sweep["values"][idx] if cfg.sweep else None,
        "sweep_index": idx,
        "repetition": rep,
        "variant": variant,
        "iterations_to_tol": tr.iterations_to(tol),
        "tol": tol,
        "iterations": tr[-1]["t"],
        "final_rel_error": tr[-1]["rel_error_fro"],
        "wall_time": tr[-1]["wall_time"],
        "status": res.status,
        "instance_seed": inst,
        "run_seed": run,
    }
    row.update(extras)
    return tr, row


def trace_name(cfg, idx, rep, variant):
    return f"{cfg.problem}_s{idx:02d}_r{rep:02d}_{variant}.csv"


def resolve_output_dir(cfg, out_dir=None):
    return out_dir or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "bench_out"


def run_experiment(cfg, out_dir=None, threads=1, write=True):
    """Run every (sweep point, repetition, variant); return ``(traces, SweepSummary)``.

    Runs may execute on a thread pool; results are collected in task order
    and written by the calling thread, so output is independent of ``threads``.
    """
    tasks = [(idx, pt, rep, v) for idx, pt in enumerate(cfg.points())
             for rep in range(cfg.repetitions) for v in cfg.variants]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda a: _task(cfg, *a), tasks))
    else:
        results = [_task(cfg, *a) for a in tasks]
    traces = [tr for tr, _ in results]
    rows = [row for _, row in results]
    meta = {"config": cfg.to_dict(), "version": __version__, "n_runs": len(rows)}
    summary = SweepSummary(rows, meta)
    if write:
        out = resolve_output_dir(cfg, out_dir)
        os.makedirs(os.path.join(out, "traces"), exist_ok=True)
        for (idx, _, rep, v), tr, row in zip(tasks, traces, rows):
            name = trace_name(cfg, idx, rep, v)
            write_trace(os.path.join(out, "traces", name), tr)
            row["trace_file"] = os.path.join("traces", name)
        with open(os.path.join(out, "summary.json"), "w") as fh:
            fh.write(summary.dumps())
    return traces, summary


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------

def _median(vals):
    vals = [math.inf if v is None else v for v in vals]
    return float(np.median(vals)) if vals else math.nan


def summary_medians(summary):
    """Median over repetitions per (sweep value, variant), in first-appearance order."""
    rows = summary.rows if isinstance(summary, SweepSummary) else summary["rows"]
    if not rows:
        raise ValueError("summary has no rows")
    groups = {}
    for row in rows:
        key = (row["sweep_index"], row["variant"])
        groups.setdefault(key, []).append(row)
    out = []
    for (idx, variant), rs in sorted(groups.items(), key=lambda kv: kv[0][0]):
        out.append({
            "sweep_parameter": rs[0]["sweep_parameter"],
            "value": rs[0]["value"],
            "variant": variant,
            "repetitions": len(rs),
            "median_iterations_to_tol": _median([r["iterations_to_tol"] for r in rs]),
            "median_final_rel_error": _median([r["final_rel_error"] for r in rs]),
            "median_wall_time": _median([r["wall_time"] for r in rs]),
        })
    return out


def sweep_summary_table(summary):
    meds = summary_medians(summary)
    param = meds[0]["sweep_parameter"] or "-"

    def it(v):
        if math.isinf(v):
            return "not reached"
        return f"{v:g}"

    header = (param, "variant", "reps", "iters_to_tol", "final_rel_error", "wall_s")
    body = [(str(m["value"]) if m["value"] is not None else "-", m["variant"], str(m["repetitions"]),
             it(m["median_iterations_to_tol"]), f"{m['median_final_rel_error']:.3e}",
             f"{m['median_wall_time']:.2f}") for m in meds]
    widths = [max(len(h), *(len(r[j]) for r in body)) for j, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)
