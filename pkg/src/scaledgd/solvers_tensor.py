"""Scaled gradient descent on Tucker factorizations ``(U, V, W) . G``.

Every iteration forms one residual tensor ``E`` (the gradient of the loss
with respect to the full tensor) and updates

    U <- U - eta * M1(E) bU (bU^T bU)^-1        (likewise V with M2, W with M3)
    G <- G - eta * ((U^T U)^-1 U^T, (V^T V)^-1 V^T, (W^T W)^-1 W^T) . E

where ``bU, bV, bW`` are the breve factors of the iteration-start state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .linalg import (
    SingularGramError,
    TuckerFactors,
    breve_factors,
    eig_top_r_sym,
    hosvd,
    matricize,
    multilinear_product,
    right_scale_solve,
)
from .models import incoherence, spectral_stats
from .operators import soft_shrink, tensor_projection_scales
from .solvers_matrix import (
    STATUS_CONVERGED,
    STATUS_DIVERGED,
    STATUS_MAX_ITERS,
    STATUS_SINGULAR,
    SolverResult,
    _Monitor,
)

ETA_SENSING = 0.3
ETA_COMPLETION = 0.3
ETA_RPCA = 0.2
DEFAULT_RADIUS_CONST = 1.1
SPARSE_P_MAX = 0.25
ZETA1_CONST = 8.0
ZETA0_FACTOR = 1.5
RHO_SLOPE = 0.45


@dataclass
class TensorSolverConfig:
    rank: tuple
    step_size: float | None = None  # None: per-problem default
    max_iters: int = 500
    stop_tol: float = 1e-10
    preconditioner: str = "scaled"
    zeta0: float | None = None
    zeta1: float | None = None
    rho: float | None = None
    p: float | None = None
    projection_radius: float | None = None
    radius_const: float = DEFAULT_RADIUS_CONST
    sparse: object = "auto"
    seed: int = 0

    def __post_init__(self):
        r = self.rank
        self.rank = tuple(int(x) for x in (r if np.iterable(r) else (r, r, r)))
        if len(self.rank) != 3 or min(self.rank) < 1:
            raise ValueError(f"invalid multilinear rank {self.rank}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.preconditioner not in ("scaled", "vanilla"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.rho is not None and not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.projection_radius is not None and self.projection_radius <= 0:
            raise ValueError("projection radius must be positive")
        if self.sparse not in ("auto", True, False):
            raise ValueError("sparse must be 'auto', True or False")

    def eta(self, default):
        return default if self.step_size is None else self.step_size


def _gram_inv(X):
    return right_scale_solve(np.eye(X.shape[1]), X)


def _check_ranks(shape, ranks):
    if any(r > n for r, n in zip(ranks, shape)):
        raise ValueError(f"ranks {ranks} exceed tensor dimensions {shape}")


def _check_init(F, shape, ranks):
    if F.dims != tuple(shape) or F.ranks != tuple(ranks):
        raise ValueError(f"init factors of dims {F.dims} / ranks {F.ranks} do not match {shape} / {ranks}")
    return TuckerFactors(*(np.array(a, dtype=float) for a in (F.U, F.V, F.W, F.G)))


def dense_grads(F, E, breve=None):
    """Raw factor gradients ``(M1(E) bU, M2(E) bV, M3(E) bW, (U^T, V^T, W^T) . E)``."""
    bU, bV, bW = breve_factors(F) if breve is None else breve
    return (matricize(E, 1) @ bU, matricize(E, 2) @ bV, matricize(E, 3) @ bW,
            multilinear_product(F.U.T, F.V.T, F.W.T, E))


class _SparseResidual:
    """Residual supported on a fixed index set, kept as values plus unfolding patterns."""

    def __init__(self, shape, idx):
        n1, n2, n3 = shape
        self.shape = shape
        self.i1, self.i2, self.i3 = (np.ascontiguousarray(idx[:, k]) for k in range(3))
        self.unf = []
        for rows, cols, sh in ((self.i1, self.i2 + n2 * self.i3, (n1, n2 * n3)),
                               (self.i2, self.i1 + n1 * self.i3, (n2, n1 * n3)),
                               (self.i3, self.i1 + n1 * self.i2, (n3, n1 * n2))):
            # carry entry numbers through the conversion to recover the csr data order
            M = sparse.csr_matrix((np.arange(1, len(rows) + 1, dtype=float), (rows, cols)), shape=sh)
            order = M.data.astype(np.int64) - 1
            self.unf.append((M, order))

    def values(self, F):
        """Entries of ``(U, V, W) . G`` on the index set."""
        T = np.einsum("na,abc->nbc", F.U[self.i1], F.G, optimize=True)
        T = np.einsum("nbc,nb->nc", T, F.V[self.i2], optimize=True)
        return np.einsum("nc,nc->n", T, F.W[self.i3])

    def unfold(self, e, k):
        M, order = self.unf[k]
        M = M.copy()
        M.data = e[order]
        return M

    def grads(self, F, e, breve):
        bU, bV, bW = breve
        gU = self.unfold(e, 0) @ bU
        gV = self.unfold(e, 1) @ bV
        gW = self.unfold(e, 2) @ bW
        gG = np.einsum("n,na,nb,nc->abc", e, F.U[self.i1], F.V[self.i2], F.W[self.i3], optimize=True)
        return gU, gV, gW, gG

    def gram(self, y, k, p):
        """``p^-2 M_k(Y) M_k(Y)^T`` for a tensor observed on the index set."""
        M = self.unfold(y, k)
        return (M @ M.T).toarray() / p ** 2

    def project_core(self, y, U, V, W):
        return np.einsum("n,na,nb,nc->abc", y, U[self.i1], V[self.i2], W[self.i3], optimize=True)


def _tucker_step(F, grads, breve, eta, vanilla, vscale):
    gU, gV, gW, gG = grads
    if vanilla:
        fs = eta * vscale
        return TuckerFactors(F.U - fs * gU, F.V - fs * gV, F.W - fs * gW, F.G - eta * gG)
    bU, bV, bW = breve
    U = F.U - eta * right_scale_solve(gU, bU)
    V = F.V - eta * right_scale_solve(gV, bV)
    W = F.W - eta * right_scale_solve(gW, bW)
    G = F.G - eta * multilinear_product(_gram_inv(F.U), _gram_inv(F.V), _gram_inv(F.W), gG)
    return TuckerFactors(U, V, W, G)


def _vanilla_scale(F):
    """``1/sigma_max^2`` of the current estimate: the factor-block curvature at orthonormal factors."""
    smax = max(float(np.linalg.norm(matricize(F.full(), k), 2)) for k in (1, 2, 3))
    return 1.0 / smax ** 2 if smax > 0 else 1.0


def _finite(F):
    return all(np.all(np.isfinite(a)) for a in (F.U, F.V, F.W, F.G))


# divergence is detected and reported through the status, not as warnings
@np.errstate(over="ignore", invalid="ignore")
def _iterate(F, grads_fn, cfg, eta, truth, info, project=None, before_step=None, t0_extra=None):
    """``grads_fn(F, breve, t) -> raw grads``; ``project(F) -> (F, n_scaled_rows)``."""
    mon = _Monitor(truth, cfg.stop_tol)
    vanilla = cfg.preconditioner == "vanilla"
    vscale = _vanilla_scale(F) if vanilla else 1.0
    info["vanilla_step_scale"] = vscale
    info["step_size"] = eta
    status = STATUS_CONVERGED if mon.record(0, F.full(), **(t0_extra or {})) else STATUS_MAX_ITERS
    t = 0
    while status != STATUS_CONVERGED and t < cfg.max_iters:
        breve = breve_factors(F)
        extra = {} if before_step is None else before_step(t)
        grads = grads_fn(F, breve, t)
        try:
            Fn = _tucker_step(F, grads, breve, eta, vanilla, vscale)
        except SingularGramError:
            status = STATUS_SINGULAR
            break
        except ValueError:
            status = STATUS_DIVERGED
            break
        if project is not None:
            Fn, nrows = project(Fn)
            extra["projected_rows"] = nrows
        F = Fn
        t += 1
        X = F.full()
        if not np.all(np.isfinite(X)):
            status = STATUS_DIVERGED
            break
        if mon.record(t, X, **extra):
            status = STATUS_CONVERGED
    return SolverResult(F if _finite(F) else None, F.full(), mon.trace, status, info)


# --------------------------------------------------------------------------
# tensor sensing
# --------------------------------------------------------------------------

def tensor_sensing_loss(op, y, F):
    r = op.apply(F.full()) - y
    return 0.5 * float(r @ r)


def tensor_sensing_grad(op, y, F):
    """Gradients ``(dU, dV, dW, dG)`` of half the squared measurement residual."""
    E = op.adjoint(op.apply(F.full()) - y)
    return dense_grads(F, E)


def solve_tensor_sensing(op, y, truth=None, cfg=None, init=None):
    """HOSVD of ``A*(y)`` followed by scaled steps on the measurement residual."""
    if cfg is None:
        raise ValueError("a TensorSolverConfig is required")
    y = np.asarray(y, dtype=float)
    if len(op.shape) != 3 or y.shape != (op.m,):
        raise ValueError("operator must act on order-3 tensors and y must have one entry per measurement")
    _check_ranks(op.shape, cfg.rank)
    F = hosvd(op.adjoint(y), cfg.rank) if init is None else _check_init(init, op.shape, cfg.rank)
    info = {"residual_evals": 0}

    def grads(F, breve, t):
        info["residual_evals"] += 1
        return dense_grads(F, op.adjoint(op.apply(F.full()) - y), breve)

    return _iterate(F, grads, cfg, cfg.eta(ETA_SENSING), truth, info)


# --------------------------------------------------------------------------
# tensor robust PCA
# --------------------------------------------------------------------------

def threshold_constant(F, shape):
    """``8 sqrt(mu^3 r1 r2 r3 / (n1 n2 n3)) sigma_min`` from orthonormal Tucker factors."""
    mu = incoherence(F)
    smin = spectral_stats(F.G, F.ranks).sigma_min
    return ZETA1_CONST * math.sqrt(mu ** 3 * math.prod(F.ranks) / math.prod(shape)) * smin, mu, smin


def resolve_thresholds(Y, cfg, truth=None):
    """Fill ``(zeta0, zeta1, rho)``: the recovery-regime values from the truth when given, spectral proxies otherwise."""
    eta = cfg.eta(ETA_RPCA)
    rho = cfg.rho if cfg.rho is not None else 1 - RHO_SLOPE * eta
    notes = {}
    zeta0, zeta1 = cfg.zeta0, cfg.zeta1
    if truth is not None:
        Ft = hosvd(truth, cfg.rank)
        if zeta0 is None:
            zeta0 = ZETA0_FACTOR * float(np.max(np.abs(truth)))
            notes["zeta0_source"] = "truth"
        if zeta1 is None:
            zeta1, mu, smin = threshold_constant(Ft, Y.shape)
            notes.update(zeta1_source="truth", mu=mu, sigma_min=smin)
    else:
        if zeta0 is None:
            # low-rank part of the observation as a stand-in for the unobservable truth
            zeta0 = ZETA0_FACTOR * float(np.max(np.abs(hosvd(Y, cfg.rank).full())))
            notes["zeta0_source"] = "estimate"
        if zeta1 is None:
            F0 = hosvd(Y - soft_shrink(Y, zeta0), cfg.rank)
            zeta1, mu, smin = threshold_constant(F0, Y.shape)
            notes.update(zeta1_source="estimate", mu=mu, sigma_min=smin)
    return zeta0, zeta1, rho, notes


def threshold_schedule(zeta1, rho, t):
    """Threshold used for the sparse update at iteration ``t`` (zero-based): ``zeta_{t+1} = rho^t zeta_1``."""
    return zeta1 * rho ** t


def solve_tensor_rpca(Y, truth=None, cfg=None, init=None):
    """Soft-shrinkage of the residual with a geometrically decaying threshold, then scaled steps."""
    if cfg is None:
        raise ValueError("a TensorSolverConfig is required")
    Y = np.asarray(Y, dtype=float)
    _check_ranks(Y.shape, cfg.rank)
    zeta0, zeta1, rho, notes = resolve_thresholds(Y, cfg, truth)
    info = dict(notes, zeta0=zeta0, zeta1=zeta1, rho=rho, residual_evals=0)
    if init is None:
        F = hosvd(Y - soft_shrink(Y, zeta0), cfg.rank)
    else:
        F = _check_init(init, Y.shape, cfg.rank)
    state = {}

    def before(t):
        state["zeta"] = threshold_schedule(zeta1, rho, t)
        return {"zeta": state["zeta"]}

    def grads(F, breve, t):
        info["residual_evals"] += 1
        X = F.full()
        S = soft_shrink(Y - X, state["zeta"])
        return dense_grads(F, X + S - Y, breve)

    res = _iterate(F, grads, cfg, cfg.eta(ETA_RPCA), truth, info, before_step=before, t0_extra={"zeta": zeta0})
    return res


# --------------------------------------------------------------------------
# tensor completion
# --------------------------------------------------------------------------

def offdiag(M):
    out = np.array(M, dtype=float)
    np.fill_diagonal(out, 0.0)
    return out


def default_radius(F, const=DEFAULT_RADIUS_CONST):
    """``const * sqrt(mu r) * sigma_max`` with ``r = max(ranks)``, from orthonormal factors and their core."""
    mu = incoherence(F)
    smax = spectral_stats(F.G, F.ranks).sigma_max
    return const * math.sqrt(mu * max(F.ranks)) * smax


def project_tucker(F, B):
    su, sv, sw = tensor_projection_scales(F, B)
    n = int(np.sum(su < 1) + np.sum(sv < 1) + np.sum(sw < 1))
    return TuckerFactors(F.U * su[:, None], F.V * sv[:, None], F.W * sw[:, None], F.G), n


def completion_init(mask, Yobs, ranks, sp=None):
    """Diagonally-deleted Gram eigenvectors per mode and the rescaled projected core."""
    p = mask.p
    if sp is not None:
        y = Yobs[tuple(mask.indices.T)]
        grams = [offdiag(sp.gram(y, k, p)) for k in range(3)]
    else:
        grams = [offdiag(matricize(Yobs, k + 1) @ matricize(Yobs, k + 1).T / p ** 2) for k in range(3)]
    U, V, W = (eig_top_r_sym(Gm, r)[0] for Gm, r in zip(grams, ranks))
    if sp is not None:
        G = sp.project_core(y, U, V, W) / p
    else:
        G = multilinear_product(U.T, V.T, W.T, Yobs) / p
    return TuckerFactors(U, V, W, G), grams


def solve_tensor_completion(mask, Yobs, truth=None, cfg=None, init=None):
    """Spectral initialization, then ``1/p``-weighted masked steps each followed by the scaled projection.

    For ``p <= 0.25`` (or ``cfg.sparse=True``) the masked residual is kept as
    a value list on the observed indices.
    """
    if cfg is None:
        raise ValueError("a TensorSolverConfig is required")
    shape = mask.shape
    _check_ranks(shape, cfg.rank)
    p = cfg.p if cfg.p is not None else mask.p
    use_sparse = cfg.sparse is True or (cfg.sparse == "auto" and p <= SPARSE_P_MAX)
    Yobs = mask.project(Yobs)
    sp = _SparseResidual(shape, mask.indices) if use_sparse else None
    info = {"residual_evals": 0, "sparse": use_sparse}
    if init is None:
        Fp, grams = completion_init(mask, Yobs, cfg.rank, sp)
        info["init_gram_diag_max"] = max(float(np.max(np.abs(np.diag(Gm)))) for Gm in grams)
        B = cfg.projection_radius or default_radius(Fp, cfg.radius_const)
    else:
        Fp = _check_init(init, shape, cfg.rank)
        B = cfg.projection_radius
    info["projection_radius"] = B
    project = None
    t0_extra = {}
    F = Fp
    if B is not None:
        project = lambda F: project_tucker(F, B)  # noqa: E731
        F, n0 = project(Fp)
        t0_extra["projected_rows"] = n0

    if use_sparse:
        y = Yobs[tuple(mask.indices.T)]

        def grads(F, breve, t):
            info["residual_evals"] += 1
            e = (sp.values(F) - y) / p
            return sp.grads(F, e, breve)
    else:
        dense = mask.dense

        def grads(F, breve, t):
            info["residual_evals"] += 1
            E = np.where(dense, F.full() - Yobs, 0.0) / p
            return dense_grads(F, E, breve)

    return _iterate(F, grads, cfg, cfg.eta(ETA_COMPLETION), truth, info, project=project, t0_extra=t0_extra)
