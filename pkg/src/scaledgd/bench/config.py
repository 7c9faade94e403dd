"""Experiment configuration: one flat JSON object per experiment.

Keys (all optional except ``problem``, ``n`` and ``r``)::

    problem          matrix_sensing | matrix_rpca | matrix_completion |
                     tensor_sensing | tensor_rpca | tensor_completion | scaledgd_lambda
    n, r             size and (true) rank; ints, or lists for rectangular / multilinear
    kappa, sigma_max condition number and top singular value of the planted truth
    m                number of Gaussian measurements (sensing problems)
    p                observation probability (completion problems)
    alpha            corruption fraction (RPCA problems); corruption_magnitude c
    overparam_rank   fitted rank r' for scaledgd_lambda (defaults to r)
    step_size, max_iters, stop_tol, tol, lam, init_scale, switch_const,
    projection_radius, radius_const, zeta0, zeta1, rho, alpha_solver
    variants         subset of scaled | vanilla | mixed
    sweep            {"parameter": kappa|p|alpha|rank, "values": [...]}
    repetitions, seed, output_dir, reference_n, storage
"""

from __future__ import annotations

import copy
import difflib
import json
import math
from dataclasses import dataclass, field

PROBLEMS = (
    "matrix_sensing", "matrix_rpca", "matrix_completion",
    "tensor_sensing", "tensor_rpca", "tensor_completion", "scaledgd_lambda",
)
SWEEPABLE = ("kappa", "p", "alpha", "rank")
VARIANTS = ("scaled", "vanilla", "mixed")

# default step sizes per problem
DEFAULT_STEP = {
    "matrix_sensing": 0.5, "matrix_rpca": 0.5, "matrix_completion": 0.5,
    "tensor_sensing": 0.3, "tensor_completion": 0.3, "tensor_rpca": 0.2,
    "scaledgd_lambda": 0.3,
}

DEFAULTS = {
    "kappa": 1.0,
    "sigma_max": 1.0,
    "m": None,
    "p": None,
    "alpha": None,
    "alpha_solver": None,
    "corruption_magnitude": 10.0,
    "overparam_rank": None,
    "step_size": None,
    "max_iters": 500,
    "stop_tol": 1e-10,
    "tol": 1e-3,
    "lam": None,
    "init_scale": 1e-6,
    "switch_const": 10.0,
    "projection_radius": None,
    "radius_const": None,
    "zeta0": None,
    "zeta1": None,
    "rho": None,
    "variants": ["scaled"],
    "sweep": None,
    "repetitions": 1,
    "seed": 0,
    "output_dir": None,
    "reference_n": None,
    "storage": "auto",
}
KNOWN = ("problem", "n", "r") + tuple(DEFAULTS)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    problem: str
    params: dict
    sweep: dict | None = None
    repetitions: int = 1
    seed: int = 0
    output_dir: str | None = None
    resolved: dict = field(default_factory=dict)

    @property
    def is_tensor(self):
        return self.problem.startswith("tensor")

    @property
    def variants(self):
        return list(self.params["variants"])

    def points(self):
        """Parameter dicts, one per sweep point."""
        if not self.sweep:
            return [copy.deepcopy(self.params)]
        out = []
        for v in self.sweep["values"]:
            d = copy.deepcopy(self.params)
            d["r" if self.sweep["parameter"] == "rank" else self.sweep["parameter"]] = v
            out.append(d)
        return out

    def to_dict(self):
        return copy.deepcopy(self.resolved)


def _suggest(key):
    m = difflib.get_close_matches(key, KNOWN, n=1, cutoff=0.6)
    return f"; did you mean {m[0]!r}?" if m else ""


def _num(d, key, lo=None, hi=None, integer=False, lo_open=False):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field {key!r} must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"field {key!r} must be an integer, got {v!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"field {key!r} must be {'>' if lo_open else '>='} {lo}, got {v!r}")
    if hi is not None and v > hi:
        raise ConfigError(f"field {key!r} must be <= {hi}, got {v!r}")
    return int(v) if integer else float(v)


def _dims(problem, n, key):
    order = 3 if problem.startswith("tensor") else 2
    vals = n if isinstance(n, list) else [n] * order
    if len(vals) != order or any(isinstance(x, bool) or not isinstance(x, int) or x < 1 for x in vals):
        raise ConfigError(f"field {key!r} must be a positive int or a list of {order} positive ints, got {n!r}")
    return vals


def _check_point(problem, d):
    """Validate one fully-populated parameter dict (a sweep point)."""
    n = _dims(problem, d["n"], "n")
    if problem.startswith("tensor"):
        r = _dims(problem, d["r"], "r")
        if any(rk > nk for rk, nk in zip(r, n)):
            raise ConfigError(f"field 'r' {r} exceeds dimensions {n}")
    else:
        r = d["r"]
        if isinstance(r, bool) or not isinstance(r, int) or not 1 <= r <= min(n):
            raise ConfigError(f"field 'r' must be an int in [1, {min(n)}], got {r!r}")
        if problem == "scaledgd_lambda" and n[0] != n[1]:
            raise ConfigError("field 'n' must be square for scaledgd_lambda")
    _num(d, "kappa", lo=1)
    _num(d, "sigma_max", lo=0, lo_open=True)
    if problem.endswith("sensing") or problem == "scaledgd_lambda":
        if d["m"] is None:
            raise ConfigError(f"field 'm' is required for {problem}")
        _num(d, "m", lo=1, integer=True)
    if problem.endswith("completion"):
        if d["p"] is None:
            raise ConfigError(f"field 'p' is required for {problem}")
        _num(d, "p", lo=0, hi=1, lo_open=True)
    if problem.endswith("rpca"):
        if d["alpha"] is None:
            raise ConfigError(f"field 'alpha' is required for {problem}")
        _num(d, "alpha", lo=0, hi=0.5)
        if d["alpha"] >= 0.5:
            raise ConfigError("field 'alpha' must be < 0.5")


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a JSON object")
    for key in raw:
        if key not in KNOWN:
            raise ConfigError(f"unknown field {key!r}{_suggest(key)}")
    for key in ("problem", "n", "r"):
        if key not in raw:
            raise ConfigError(f"missing required field {key!r}")
    problem = raw["problem"]
    if problem not in PROBLEMS:
        m = difflib.get_close_matches(str(problem), PROBLEMS, n=1)
        raise ConfigError(f"field 'problem' has unknown value {problem!r}" + (f"; did you mean {m[0]!r}?" if m else ""))
    d = dict(DEFAULTS)
    d.update(copy.deepcopy(raw))
    d["problem"] = problem
    if d["step_size"] is None:
        d["step_size"] = DEFAULT_STEP[problem]
    _num(d, "step_size", lo=0, lo_open=True)
    _num(d, "max_iters", lo=0, integer=True)
    _num(d, "stop_tol", lo=0)
    _num(d, "tol", lo=0, lo_open=True)
    _num(d, "init_scale", lo=0, lo_open=True)
    _num(d, "switch_const", lo=0, lo_open=True)
    _num(d, "corruption_magnitude", lo=0, lo_open=True)
    for key in ("lam",):
        if d[key] is not None:
            _num(d, key, lo=0)
    for key in ("projection_radius", "zeta0", "zeta1"):
        if d[key] is not None:
            _num(d, key, lo=0, lo_open=True)
    if d["rho"] is not None:
        _num(d, "rho", lo=0, hi=1, lo_open=True)
    if d["radius_const"] is None:
        d["radius_const"] = 1.1 if problem.startswith("tensor") else 1.02
    _num(d, "radius_const", lo=0, lo_open=True)
    if problem == "tensor_rpca" and d["rho"] is None:
        d["rho"] = 1 - 0.45 * d["step_size"]
    if problem == "scaledgd_lambda" and d["overparam_rank"] is None:
        d["overparam_rank"] = d["r"]
    if d["overparam_rank"] is not None:
        _num(d, "overparam_rank", lo=1, integer=True)
    if d["storage"] not in ("auto", "materialized", "regenerate"):
        raise ConfigError(f"field 'storage' must be auto, materialized or regenerate, got {d['storage']!r}")

    variants = d["variants"]
    if isinstance(variants, str):
        variants = [variants]
    if not isinstance(variants, list) or not variants:
        raise ConfigError("field 'variants' must be a non-empty list")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"field 'variants' has unknown entry {v!r}")
        if v == "mixed" and problem != "scaledgd_lambda":
            raise ConfigError("variant 'mixed' is only defined for scaledgd_lambda")
    if len(set(variants)) != len(variants):
        raise ConfigError("field 'variants' has duplicates")
    d["variants"] = variants

    reps = _num(d, "repetitions", lo=1, integer=True)
    d["repetitions"] = reps
    seed = _num(d, "seed", lo=0, integer=True)
    d["seed"] = seed
    if d["output_dir"] is not None and not isinstance(d["output_dir"], str):
        raise ConfigError("field 'output_dir' must be a string")

    sweep = d["sweep"]
    if sweep is not None:
        if not isinstance(sweep, dict) or set(sweep) != {"parameter", "values"}:
            raise ConfigError("field 'sweep' must be an object with keys 'parameter' and 'values'")
        if sweep["parameter"] not in SWEEPABLE:
            raise ConfigError(f"field 'sweep.parameter' must be one of {', '.join(SWEEPABLE)}")
        if not isinstance(sweep["values"], list) or not sweep["values"]:
            raise ConfigError("field 'sweep.values' must be a non-empty list")
    cfg = ExperimentConfig(problem, d, sweep, reps, seed, d["output_dir"])
    for i, pt in enumerate(cfg.points()):
        try:
            _check_point(problem, pt)
        except ConfigError as exc:
            where = f" (sweep value #{i}: {sweep['values'][i]!r})" if sweep else ""
            raise ConfigError(f"{exc}{where}") from None
    if problem.endswith("rpca") and d["alpha_solver"] is not None:
        _num(d, "alpha_solver", lo=0, hi=0.5)

    # echo the rules for data-dependent defaults so the record is self-describing
    res = dict(d)
    if problem.endswith("completion") and res["projection_radius"] is None:
        res["projection_radius_rule"] = f"{res['radius_const']}*sqrt(mu_hat*r)*sigma_hat_max from the spectral init"
    if problem == "tensor_rpca":
        if res["zeta0"] is None:
            res["zeta0_rule"] = "1.5*max|X*|"
        if res["zeta1"] is None:
            res["zeta1_rule"] = "8*sqrt(mu^3 r1 r2 r3/(n1 n2 n3))*sigma_min(X*)"
    if problem == "scaledgd_lambda" and res["lam"] is None:
        res["lam_rule"] = "0.01*sigma_r(X*)"
    if res["reference_n"] is not None:
        n0 = res["n"][0] if isinstance(res["n"], list) else res["n"]
        res["desk_scale"] = n0 / res["reference_n"]
    cfg.resolved = res
    return cfg


def load_experiment_config(path):
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(raw)


def nan_to_none(x):
    return None if isinstance(x, float) and math.isnan(x) else x
