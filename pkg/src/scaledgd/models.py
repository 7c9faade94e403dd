"""Planted low-rank instances, sparse corruptions, and evaluation metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .linalg import (
    MatrixFactors,
    SvdResult,
    TuckerFactors,
    matricize,
    multilinear_product,
    svd_top_r,
)

ORTHO_CHECK_TOL = 1e-8
KAPPA_FLOOR = 1e-14
TENSOR_KAPPA_RTOL = 1e-10


class CorruptionWarning(UserWarning):
    """Requested corruption fraction admits no nonzero entry at this size."""


@dataclass
class GroundTruthSpec:
    shape: tuple
    rank: object  # int for matrices, 3-tuple for tensors
    kappa: float = 1.0
    sigma_max: float = 1.0
    seed: int = 0
    symmetric: bool = False

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.shape) not in (2, 3):
            raise ValueError(f"shape must have 2 or 3 entries, got {self.shape}")
        if len(self.shape) == 3:
            r = self.rank
            self.rank = tuple(int(x) for x in (r if np.iterable(r) else (r, r, r)))
            if any(not 1 <= rk <= nk for rk, nk in zip(self.rank, self.shape)):
                raise ValueError(f"rank {self.rank} out of range for shape {self.shape}")
            if self.symmetric:
                raise ValueError("symmetric ground truth is only defined for matrices")
        else:
            self.rank = int(self.rank)
            if not 1 <= self.rank <= min(self.shape):
                raise ValueError(f"rank {self.rank} out of range for shape {self.shape}")
            if self.symmetric and self.shape[0] != self.shape[1]:
                raise ValueError("symmetric ground truth needs a square shape")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.sigma_max <= 0:
            raise ValueError("sigma_max must be positive")

    @property
    def is_tensor(self):
        return len(self.shape) == 3

    def to_dict(self):
        d = asdict(self)
        d["shape"] = list(self.shape)
        if self.is_tensor:
            d["rank"] = list(self.rank)
        return d


@dataclass
class CorruptionSpec:
    alpha: float
    magnitude: float = 10.0  # uniform on [-c ||X||_inf, c ||X||_inf]
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ValueError(f"corruption fraction must lie in [0, 1), got {self.alpha}")
        if self.magnitude <= 0:
            raise ValueError("corruption magnitude must be positive")


@dataclass
class ConvergenceTrace:
    """Per-iteration records ``{t, rel_error_fro, rel_error_inf, wall_time, event, ...}``."""

    records: list = field(default_factory=list)

    def append(self, t, rel_error_fro=math.nan, rel_error_inf=math.nan, wall_time=0.0, event="", **extra):
        if self.records and t <= self.records[-1]["t"]:
            raise ValueError("trace iterations must be strictly increasing")
        rec = {"t": int(t), "rel_error_fro": float(rel_error_fro), "rel_error_inf": float(rel_error_inf),
               "wall_time": float(wall_time), "event": event}
        rec.update(extra)
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, key):
        return np.array([rec.get(key, math.nan) for rec in self.records], dtype=float)

    @property
    def errors(self):
        return self.column("rel_error_fro")

    def iterations_to(self, tol):
        """First ``t`` with relative Frobenius error at or below ``tol``, else ``None``."""
        for rec in self.records:
            if rec["rel_error_fro"] <= tol:
                return rec["t"]
        return None

    def events(self, name):
        return [rec["t"] for rec in self.records if rec["event"] == name]

    def contraction_ratios(self, t_lo, t_hi):
        """``e_{t+1}/e_t`` for ``t_lo <= t < t_hi`` where both errors are recorded and positive."""
        e = {rec["t"]: rec["rel_error_fro"] for rec in self.records}
        out = [e[t + 1] / e[t] for t in range(t_lo, t_hi) if t in e and t + 1 in e and e[t] > 0]
        return np.array(out)


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------

def _rng(seed, salt):
    return np.random.default_rng(np.random.SeedSequence([int(seed), salt]))


def random_orthonormal(rng, n, r):
    Q, R = np.linalg.qr(rng.standard_normal((n, r)))
    # fix the QR sign ambiguity so the factor is a deterministic function of the draw
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def geometric_spectrum(r, kappa, sigma_max=1.0):
    if r == 1:
        return np.array([float(sigma_max)])
    return sigma_max * kappa ** (-np.arange(r) / (r - 1))


def gen_matrix_truth(spec):
    """Rank-r matrix with geometrically spaced singular values from ``sigma_max`` to ``sigma_max/kappa``.

    Returns ``(X, SvdResult)``; for symmetric specs ``X = L L^T`` with
    ``L = U sqrt(Sigma)`` and ``V = U``.
    """
    n1, n2 = spec.shape
    r = spec.rank
    rng = _rng(spec.seed, 0x4D4154)
    sig = geometric_spectrum(r, spec.kappa, spec.sigma_max)
    U = random_orthonormal(rng, n1, r)
    V = U if spec.symmetric else random_orthonormal(rng, n2, r)
    X = (U * sig) @ V.T
    if spec.symmetric:
        X = 0.5 * (X + X.T)
    return X, SvdResult(U=U, S=sig, V=V)


def _spread_core(ranks, sig):
    """Core with entry ``sig[j]`` placed at ``(j mod r1, j mod r2, j mod r3)``, ``j < max(ranks)``.

    Within every unfolding the rows have disjoint supports, so ``M_k(G) M_k(G)^T``
    is diagonal (non-increasing when ``sig`` is).
    """
    G = np.zeros(ranks)
    for j, s in enumerate(sig):
        G[j % ranks[0], j % ranks[1], j % ranks[2]] = s
    return G


def _core_kappa(G):
    svals = [np.linalg.svd(matricize(G, k), compute_uv=False) for k in (1, 2, 3)]
    return max(s[0] for s in svals) / min(s[-1] for s in svals)


def tensor_core(ranks, kappa, sigma_max=1.0):
    """Core tensor whose unfoldings are row-orthogonal and whose tensor condition number is ``kappa``.

    Equal ranks give the superdiagonal core with geometric values, hitting
    ``kappa`` exactly. Unequal ranks spread ``max(ranks)`` geometric values
    cyclically and bisect the decay rate to match ``kappa``; targets below the
    smallest achievable value are clamped (with a warning).
    """
    ranks = tuple(ranks)
    R = max(ranks)
    if len(set(ranks)) == 1:
        return _spread_core(ranks, geometric_spectrum(R, kappa, sigma_max))

    def build(q):
        G = _spread_core(ranks, q ** np.arange(R))
        return G * (sigma_max / max(np.linalg.norm(matricize(G, k), 2) for k in (1, 2, 3)))

    k_min = _core_kappa(build(1.0))
    if kappa <= k_min:
        if kappa < k_min * (1 - 1e-12):
            warnings.warn(f"kappa={kappa} unreachable for ranks {ranks}; using {k_min:.6g}")
        return build(1.0)
    lo, hi = 1e-12, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _core_kappa(build(mid)) > kappa:
            lo = mid
        else:
            hi = mid
    return build(hi)


def gen_tensor_truth(spec):
    """Tucker tensor ``(U, V, W) . G`` with orthonormal factors and row-orthogonal unfoldings of ``G``."""
    ranks = spec.rank
    for k in range(3):
        others = math.prod(ranks) // ranks[k]
        if ranks[k] > others:
            raise ValueError(f"multilinear rank {ranks} is infeasible: r{k + 1} exceeds the product of the others")
    rng = _rng(spec.seed, 0x54454E)
    U, V, W = (random_orthonormal(rng, n, r) for n, r in zip(spec.shape, ranks))
    G = tensor_core(ranks, spec.kappa, spec.sigma_max)
    F = TuckerFactors(U, V, W, G)
    return F.full(), F


def _fiber_caps(shape, alpha):
    # fiber along mode k has length shape[k]
    return [int(math.floor(round(alpha * n, 9))) for n in shape]


def gen_sparse_corruption(shape, base, spec):
    """Sparse corruption in the alpha-fraction class, support drawn by rejection.

    Every entry is proposed independently with probability ``alpha`` (in a
    random order) and accepted only while every row/column (every fiber, for
    tensors) through it holds fewer than ``floor(alpha * n)`` accepted entries.
    Values are uniform on ``[-c ||base||_inf, c ||base||_inf]``.
    """
    shape = tuple(int(s) for s in shape)
    S = np.zeros(shape)
    if spec.alpha == 0:
        return S
    caps = _fiber_caps(shape, spec.alpha)
    if min(caps) == 0:
        warnings.warn(f"alpha={spec.alpha} allows no corrupted entry per fiber at shape {shape}; "
                      "returning zero corruption", CorruptionWarning)
        return S
    rng = _rng(spec.seed, 0x53504152)
    nd = len(shape)
    total = math.prod(shape)
    order = rng.permutation(total)
    proposed = order[rng.random(total) < spec.alpha]
    # count per fiber: fiber along mode k is identified by the other indices
    counts = [dict() for _ in range(nd)]
    accepted = []
    for lin in proposed:
        idx = np.unravel_index(lin, shape)
        keys = [tuple(idx[j] for j in range(nd) if j != k) for k in range(nd)]
        if all(counts[k].get(keys[k], 0) < caps[k] for k in range(nd)):
            for k in range(nd):
                counts[k][keys[k]] = counts[k].get(keys[k], 0) + 1
            accepted.append(idx)
    amp = spec.magnitude * float(np.max(np.abs(base))) if np.size(base) else spec.magnitude
    vals = rng.uniform(-amp, amp, size=len(accepted))
    for idx, v in zip(accepted, vals):
        S[idx] = v
    return S


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

class SpectralStats(NamedTuple):
    sigma_max: float
    sigma_min: float
    kappa: float


def spectral_stats(X, rank):
    """Largest / smallest of the leading singular values and their ratio.

    For tensors the extremes are taken over the three unfoldings, using the
    top ``rank[k]`` values of mode ``k``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        s = np.linalg.svd(X, compute_uv=False)
        if not 1 <= rank <= len(s):
            raise ValueError(f"rank {rank} out of range")
        smax, smin = s[0], s[rank - 1]
    elif X.ndim == 3:
        ranks = tuple(rank) if np.iterable(rank) else (rank,) * 3
        tops, bots = [], []
        for k in range(3):
            s = np.linalg.svd(matricize(X, k + 1), compute_uv=False)
            if not 1 <= ranks[k] <= len(s):
                raise ValueError(f"rank {ranks} out of range")
            tops.append(s[0])
            bots.append(s[ranks[k] - 1])
        smax, smin = max(tops), min(bots)
    else:
        raise ValueError(f"expected a matrix or order-3 tensor, got shape {X.shape}")
    kappa = math.inf if smin < KAPPA_FLOOR * smax or smax == 0 else smax / smin
    return SpectralStats(float(smax), float(smin), float(kappa))


def _coherence(Q):
    n, r = Q.shape
    if np.linalg.norm(Q.T @ Q - np.eye(r)) > ORTHO_CHECK_TOL:
        raise ValueError("incoherence needs factors with orthonormal columns")
    return n / r * float(np.max(np.sum(Q * Q, axis=1)))


def incoherence(factors):
    """Smallest mu satisfying the incoherence definition for an SVD or orthonormal Tucker factors."""
    if isinstance(factors, SvdResult):
        mats = (factors.U, factors.V)
    elif isinstance(factors, TuckerFactors):
        mats = (factors.U, factors.V, factors.W)
    else:
        mats = tuple(factors)
    return max(_coherence(np.asarray(Q, dtype=float)) for Q in mats)


class FactorDistance(NamedTuple):
    """Upper estimate of the GL(r)-aligned factor distance."""

    value: float
    Q: np.ndarray
    singular: bool = False
    is_estimate: bool = True


def _dist_objective(q, L, R, Ls, Rs, d, r):
    Q = q.reshape(r, r)
    try:
        Qit = np.linalg.inv(Q).T
    except np.linalg.LinAlgError:
        return math.inf, np.zeros_like(q)
    if not np.all(np.isfinite(Qit)):
        return math.inf, np.zeros_like(q)
    E1 = (L @ Q - Ls) * d
    E2 = (R @ Qit - Rs) * d
    f = float(np.sum(E1 * E1) + np.sum(E2 * E2))
    g1 = 2 * L.T @ (E1 * d)
    H = 2 * R.T @ (E2 * d)
    g2 = -Qit @ H.T @ Qit
    return f, (g1 + g2).ravel()


def dist_factor_metric(F, Fstar, sigma_star, n_starts=5, max_iter=500, seed=0):
    """Estimate ``inf_Q ||(LQ - L*) S^1/2||^2 + ||(R Q^-T - R*) S^1/2||^2`` and return its square root.

    Local quasi-Newton descent over ``Q`` from the identity, the balancing
    point, their reflections (the other sign of det Q) and ``n_starts``
    random perturbations; the best value wins.
    Every line search is monotone, so the estimate only ever decreases.
    """
    L, R = np.asarray(F.L, float), np.asarray(F.R, float)
    Ls, Rs = np.asarray(Fstar.L, float), np.asarray(Fstar.R, float)
    sig = np.asarray(sigma_star, dtype=float)
    if L.shape != Ls.shape or R.shape != Rs.shape:
        raise ValueError("factor shapes do not match")
    if np.any(sig <= 0):
        raise ValueError("sigma_star must be positive")
    r = L.shape[1]
    d = np.sqrt(sig)[None, :]

    starts = [np.eye(r)]
    # balancing point: Q with Q^T L^T L Q = Q^-1 R^T R Q^-T, via the symmetric geometric mean
    try:
        A, B = L.T @ L, R.T @ R
        wa, Va = np.linalg.eigh(A)
        Ah = (Va * np.sqrt(np.maximum(wa, 0))) @ Va.T
        Aih = (Va / np.sqrt(wa)) @ Va.T
        wm, Vm = np.linalg.eigh(Ah @ B @ Ah)
        M = (Vm * np.sqrt(np.sqrt(np.maximum(wm, 0)))) @ Vm.T
        Qb = Aih @ M
        if np.all(np.isfinite(Qb)) and abs(np.linalg.det(Qb)) > 0:
            starts.append(Qb)
    except np.linalg.LinAlgError:
        pass
    # GL(r) has two components (sign of det); descent cannot cross det = 0, so seed both
    J = np.eye(r)
    J[0, 0] = -1.0
    starts += [S @ J for S in starts]
    rng = np.random.default_rng(seed)
    base = starts[len(starts) // 2 - 1]
    for i in range(n_starts):
        side = base if i % 2 == 0 else base @ J
        starts.append(side @ (np.eye(r) + 0.3 * rng.standard_normal((r, r)) / math.sqrt(r)))

    best_f, best_Q, singular = math.inf, np.eye(r), False
    for Q0 in starts:
        f0, _ = _dist_objective(Q0.ravel(), L, R, Ls, Rs, d, r)
        if not math.isfinite(f0):
            singular = True
            continue
        res = optimize.minimize(_dist_objective, Q0.ravel(), args=(L, R, Ls, Rs, d, r), jac=True,
                                method="BFGS", options={"maxiter": max_iter, "gtol": 1e-14})
        f = res.fun if math.isfinite(res.fun) and res.fun <= f0 else f0
        Q = res.x.reshape(r, r) if f == res.fun else Q0
        if not math.isfinite(res.fun):
            singular = True
        if f < best_f:
            best_f, best_Q = f, Q
    return FactorDistance(math.sqrt(max(best_f, 0.0)), best_Q, singular)
