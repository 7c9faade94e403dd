"""Scaled gradient descent on two-factor matrix models.

Each solver builds the residual ``D_t`` whose products ``D_t R_t`` and
``D_t^T L_t`` are the factor gradients, then takes the scaled step

    L <- L - eta * D R (R^T R)^-1,    R <- R - eta * D^T L (L^T L)^-1.

``preconditioner="vanilla"`` drops the Gram inverses and rescales the step
by ``1/sigma_1(X_0)`` instead.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import MatrixFactors, SingularGramError, right_scale_solve, svd_top_r
from .models import ConvergenceTrace
from .operators import matrix_projection_scales, truncate_rows_cols

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max_iters"
STATUS_SINGULAR = "singular_preconditioner"
STATUS_DIVERGED = "diverged"

DEFAULT_ETA = 0.5
DEFAULT_RADIUS_CONST = 1.02
DEFAULT_SWITCH_CONST = 10.0
LAMBDA_FRACTION = 0.01


@dataclass
class MatrixSolverConfig:
    rank: int
    step_size: float = DEFAULT_ETA
    max_iters: int = 500
    stop_tol: float = 1e-10
    preconditioner: str = "scaled"
    alpha: float | None = None  # corruption fraction for RPCA
    projection_radius: float | None = None
    radius_const: float = DEFAULT_RADIUS_CONST
    lam: float | None = None
    init_scale: float = 1e-6
    mixed: bool = False
    switch_const: float = DEFAULT_SWITCH_CONST
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be positive")
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.preconditioner not in ("scaled", "vanilla"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.projection_radius is not None and self.projection_radius <= 0:
            raise ValueError("projection radius must be positive")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be positive")


@dataclass
class SolverResult:
    factors: object
    estimate: np.ndarray
    trace: ConvergenceTrace
    status: str
    info: dict = field(default_factory=dict)

    @property
    def final_rel_error(self):
        return self.trace[-1]["rel_error_fro"] if len(self.trace) else math.nan


class _Monitor:
    """Trace bookkeeping and the stopping rule shared by every solver."""

    def __init__(self, truth, stop_tol):
        self.truth = None if truth is None else np.asarray(truth, dtype=float)
        if self.truth is not None:
            self.nf = float(np.linalg.norm(self.truth))
            self.ni = float(np.max(np.abs(self.truth)))
        self.stop_tol = stop_tol
        self.trace = ConvergenceTrace()
        self.t0 = time.perf_counter()
        self.prev = None

    def record(self, t, X, event="", **extra):
        """Append iteration ``t``; return True when the stopping rule fires."""
        if self.truth is not None:
            if X.shape != self.truth.shape:
                raise ValueError(f"truth of shape {self.truth.shape} does not match estimate {X.shape}")
            E = X - self.truth
            ef, ei = float(np.linalg.norm(E)), float(np.max(np.abs(E)))
            rf = ef / self.nf if self.nf > 0 else ef
            ri = ei / self.ni if self.ni > 0 else ei
            extra.update(err_fro=ef, err_inf=ei)
        else:
            rf = ri = math.nan
        if self.prev is not None:
            d = float(np.linalg.norm(X - self.prev))
            nx = float(np.linalg.norm(X))
            extra["rel_change"] = d / nx if nx > 0 else d
        self.trace.append(t, rf, ri, time.perf_counter() - self.t0, event, **extra)
        if self.truth is None:
            self.prev = X.copy()
            return "rel_change" in extra and extra["rel_change"] <= self.stop_tol
        return rf <= self.stop_tol


def _split_sqrt(svd):
    h = np.sqrt(svd.S)
    return svd.U * h, svd.V * h


def _check_init(init, n1, n2, r):
    if init.L.shape != (n1, r) or init.R.shape != (n2, r):
        raise ValueError(f"init factors {init.L.shape}, {init.R.shape} do not match ({n1},{n2}) at rank {r}")
    return init.L.astype(float, copy=True), init.R.astype(float, copy=True)


def _factor_step(L, R, D, cfg, vscale, ridge=0.0):
    eta = cfg.step_size
    GL, GR = D @ R, D.T @ L
    if cfg.preconditioner == "vanilla":
        return L - (eta * vscale) * GL, R - (eta * vscale) * GR
    return L - eta * right_scale_solve(GL, R, ridge), R - eta * right_scale_solve(GR, L, ridge)


def _vanilla_scale(L, R):
    s1 = float(np.linalg.norm(L @ R.T, 2))
    return 1.0 / s1 if s1 > 0 else 1.0


# divergence is detected and reported through the status, not as warnings
@np.errstate(over="ignore", invalid="ignore")
def _iterate(L, R, residual, cfg, truth, project=None, info=None):
    """Generic loop: ``residual(L, R) -> D``; ``project(L, R) -> (L, R, n_scaled_rows)``."""
    info = {} if info is None else info
    mon = _Monitor(truth, cfg.stop_tol)
    vscale = _vanilla_scale(L, R) if cfg.preconditioner == "vanilla" else 1.0
    info["vanilla_step_scale"] = vscale
    status = STATUS_MAX_ITERS
    extra = info.pop("_t0_extra", {})
    stop = mon.record(0, L @ R.T, **extra)
    if stop:
        status = STATUS_CONVERGED
    t = 0
    while status != STATUS_CONVERGED and t < cfg.max_iters:
        D = residual(L, R)
        try:
            L, R = _factor_step(L, R, D, cfg, vscale)
        except SingularGramError:
            status = STATUS_SINGULAR
            break
        extra = {}
        if project is not None:
            L, R, nrows = project(L, R)
            extra["projected_rows"] = nrows
        t += 1
        X = L @ R.T
        if not np.all(np.isfinite(X)):
            status = STATUS_DIVERGED
            break
        if mon.record(t, X, **extra):
            status = STATUS_CONVERGED
    return SolverResult(MatrixFactors(L, R) if np.all(np.isfinite(L)) and np.all(np.isfinite(R)) else None,
                        L @ R.T, mon.trace, status, info)


# --------------------------------------------------------------------------
# losses and gradients
# --------------------------------------------------------------------------

def matrix_sensing_loss(op, y, L, R):
    r = op.apply(L @ R.T) - y
    return 0.5 * float(r @ r)


def matrix_sensing_grad(op, y, L, R):
    """``(grad_L, grad_R)`` of half the squared measurement residual."""
    D = op.adjoint(op.apply(L @ R.T) - y)
    return D @ R, D.T @ L


def symmetric_sensing_loss(op, y, L):
    r = op.apply(L @ L.T) - y
    return 0.5 * float(r @ r)


def symmetric_sensing_grad(op, y, L):
    D = op.adjoint(op.apply(L @ L.T) - y)
    return (D + D.T) @ L


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------

def solve_matrix_sensing(op, y, truth=None, cfg=None, init=None):
    """Spectral initialization from the top-r SVD of ``A*(y)`` followed by scaled steps."""
    if cfg is None:
        raise ValueError("a MatrixSolverConfig is required")
    y = np.asarray(y, dtype=float)
    if len(op.shape) != 2 or y.shape != (op.m,):
        raise ValueError("operator must act on matrices and y must have one entry per measurement")
    n1, n2 = op.shape
    r = cfg.rank
    if r > min(n1, n2):
        raise ValueError(f"rank {r} exceeds matrix dimensions {op.shape}")
    if init is None:
        L, R = _split_sqrt(svd_top_r(op.adjoint(y), r))
    else:
        L, R = _check_init(init, n1, n2, r)
    return _iterate(L, R, lambda L, R: op.adjoint(op.apply(L @ R.T) - y), cfg, truth)


def solve_matrix_rpca(Y, truth=None, cfg=None, init=None):
    """Robust PCA: truncation-based sparse estimate, then scaled steps on ``L R^T + S - Y``."""
    if cfg is None or cfg.alpha is None:
        raise ValueError("RPCA needs a config with the corruption fraction alpha")
    if not 0 <= cfg.alpha < 0.5:
        raise ValueError("alpha must lie in [0, 1/2)")
    Y = np.asarray(Y, dtype=float)
    r = cfg.rank
    a2 = min(2 * cfg.alpha, 1.0)
    if init is None:
        L, R = _split_sqrt(svd_top_r(Y - truncate_rows_cols(Y, cfg.alpha), r))
    else:
        L, R = _check_init(init, *Y.shape, r)
    state = {}

    def residual(L, R):
        X = L @ R.T
        S = truncate_rows_cols(Y - X, a2)
        state["S"] = S
        return X + S - Y

    res = _iterate(L, R, residual, cfg, truth)
    # the sparse estimate paired with the final factors
    res.info["sparse_estimate"] = truncate_rows_cols(Y - res.estimate, a2)
    return res


def default_radius(svd, n1, n2, const=DEFAULT_RADIUS_CONST):
    """``const * sqrt(mu r) * sigma_1`` with mu and sigma_1 taken from a spectral estimate."""
    r = len(svd.S)
    mu = max(n1 / r * float(np.max(np.sum(svd.U ** 2, axis=1))),
             n2 / r * float(np.max(np.sum(svd.V ** 2, axis=1))))
    return const * math.sqrt(mu * r) * float(svd.S[0])


def _project(L, R, B):
    sl, sr = matrix_projection_scales(MatrixFactors(L, R), B)
    n = int(np.sum(sl < 1) + np.sum(sr < 1))
    return L * sl[:, None], R * sr[:, None], n


def solve_matrix_completion(mask, Yobs, truth=None, cfg=None, init=None):
    """Completion from ``P_Omega`` observations with the scaled projection after every step."""
    if cfg is None:
        raise ValueError("a MatrixSolverConfig is required")
    Yobs = mask.project(Yobs)
    n1, n2 = mask.shape
    p, r = mask.p, cfg.rank
    info = {}
    if init is None:
        svd = svd_top_r(Yobs / p, r)
        L, R = _split_sqrt(svd)
        B = cfg.projection_radius or default_radius(svd, n1, n2, cfg.radius_const)
    else:
        L, R = _check_init(init, n1, n2, r)
        B = cfg.projection_radius
    info["projection_radius"] = B
    project = None
    if B is not None:
        project = lambda L, R: _project(L, R, B)  # noqa: E731
        L, R, n0 = project(L, R)
        info["_t0_extra"] = {"projected_rows": n0}
    dense = mask.dense
    return _iterate(L, R, lambda L, R: np.where(dense, L @ R.T - Yobs, 0.0) / p, cfg, truth, project, info)


def mixed_init_switch(L, lam, switch_const=DEFAULT_SWITCH_CONST):
    """True once ``sigma_min(L)^2 >= switch_const * lam``: the ridge can be dropped."""
    s = np.linalg.svd(L, compute_uv=False)
    return lam > 0 and s[-1] ** 2 >= switch_const * lam


def default_lambda(truth, rank):
    """``0.01 * sigma_r(X*)``, i.e. a hundredth of the squared smallest singular value of the factor."""
    s = np.linalg.svd(np.asarray(truth, dtype=float), compute_uv=False)
    return LAMBDA_FRACTION * float(s[rank - 1])


# divergence is detected and reported through the status, not as warnings
@np.errstate(over="ignore", invalid="ignore")
def solve_scaledgd_lambda(op, y, truth=None, cfg=None, init=None, true_rank=None):
    """Symmetric model ``X = L L^T`` from small random initialization with a ridge in the preconditioner.

    Step: ``L <- L - eta * A*(A(L L^T) - y) L (L^T L + lam I)^-1``. With
    ``cfg.mixed`` the ridge is dropped once :func:`mixed_init_switch` fires.
    """
    if cfg is None:
        raise ValueError("a MatrixSolverConfig is required")
    y = np.asarray(y, dtype=float)
    n1, n2 = op.shape
    if n1 != n2:
        raise ValueError("symmetric sensing needs a square operator shape")
    n, r = n1, cfg.rank
    lam = cfg.lam
    if lam is None:
        if truth is None:
            raise ValueError("lambda must be given when the ground truth is withheld")
        lam = default_lambda(truth, true_rank or r)
    if init is None:
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x4C414D]))
        L = cfg.init_scale * rng.standard_normal((n, r)) / math.sqrt(n)
    else:
        L = np.array(init.L if isinstance(init, MatrixFactors) else init, dtype=float)
        if L.shape != (n, r):
            raise ValueError(f"init of shape {L.shape} does not match ({n},{r})")
    info = {"lambda": lam}
    vscale = 1.0
    if cfg.preconditioner == "vanilla":
        s1 = float(np.linalg.norm(op.adjoint(y), 2))
        vscale = 1.0 / s1 if s1 > 0 else 1.0
    info["vanilla_step_scale"] = vscale
    mon = _Monitor(truth, cfg.stop_tol)
    status = STATUS_CONVERGED if mon.record(0, L @ L.T) else STATUS_MAX_ITERS
    switched_at = None
    t = 0
    while status != STATUS_CONVERGED and t < cfg.max_iters:
        D = op.adjoint(op.apply(L @ L.T) - y)
        G = D @ L
        if cfg.preconditioner == "vanilla":
            L = L - cfg.step_size * vscale * G
        else:
            try:
                L = L - cfg.step_size * right_scale_solve(G, L, lam)
            except SingularGramError:
                status = STATUS_SINGULAR
                break
        t += 1
        event = ""
        if cfg.mixed and switched_at is None and cfg.preconditioner == "scaled" and \
                mixed_init_switch(L, lam, cfg.switch_const):
            switched_at, lam, event = t, 0.0, "switch"
        X = L @ L.T
        if not np.all(np.isfinite(X)):
            status = STATUS_DIVERGED
            break
        if mon.record(t, X, event=event):
            status = STATUS_CONVERGED
    info["switch_iteration"] = switched_at
    if cfg.mixed and switched_at is None:
        info["note"] = "no-switch"
    F = MatrixFactors(L, L) if np.all(np.isfinite(L)) else None
    return SolverResult(F, L @ L.T, mon.trace, status, info)

