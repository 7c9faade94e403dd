"""Dense matrix / order-3 tensor kernels shared by every solver.

Tensors are plain ``ndarray`` objects of shape ``(n1, n2, n3)`` indexed as
``T[i1, i2, i3]``. Whenever a tensor is flattened (serialization, sensing
inner products) the canonical layout is mode-1-major: entry ``(i1, i2, i3)``
sits at ``i1 + n1 * (i2 + n2 * i3)``, i.e. Fortran order. With that layout the
mode-1 unfolding is a plain reshape and the Kronecker identities

    M1((U, V, W) . G) = U M1(G) (W kron V)^T
    M2((U, V, W) . G) = V M2(G) (W kron U)^T
    M3((U, V, W) . G) = W M3(G) (V kron U)^T

hold literally with ``numpy.kron``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

# tolerances; every public function also takes them as keyword overrides
ORTHO_TOL = 1e-10
SYM_TOL = 1e-10
PIVOT_FLOOR = 1e-14


class DimensionError(ValueError):
    """Operand shapes are inconsistent."""


class SingularGramError(np.linalg.LinAlgError):
    """A Gram matrix is numerically singular and no ridge was supplied.

    Solvers catch this and report ``singular_preconditioner``: it signals rank
    collapse of a factor.
    """


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")


@dataclass(frozen=True, eq=False)
class SvdResult:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return (self.U * self.S) @ self.V.T


@dataclass(frozen=True, eq=False)
class MatrixFactors:
    L: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        if self.L.ndim != 2 or self.R.ndim != 2 or self.L.shape[1] != self.R.shape[1]:
            raise DimensionError(f"factor shapes {self.L.shape} and {self.R.shape} do not share a rank")
        _check_finite("L", self.L)
        _check_finite("R", self.R)

    @property
    def rank(self):
        return self.L.shape[1]

    def product(self):
        return self.L @ self.R.T


@dataclass(frozen=True, eq=False)
class TuckerFactors:
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        ranks = (self.U.shape[1], self.V.shape[1], self.W.shape[1])
        if self.G.shape != ranks:
            raise DimensionError(f"core shape {self.G.shape} does not match factor ranks {ranks}")
        for name in ("U", "V", "W", "G"):
            _check_finite(name, getattr(self, name))

    @property
    def dims(self):
        return (self.U.shape[0], self.V.shape[0], self.W.shape[0])

    @property
    def ranks(self):
        return self.G.shape

    def full(self):
        return multilinear_product(self.U, self.V, self.W, self.G)


# --------------------------------------------------------------------------
# unfolding
# --------------------------------------------------------------------------

_UNFOLD_PERM = {1: (0, 1, 2), 2: (1, 0, 2), 3: (2, 0, 1)}


def _check_mode(mode):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def matricize(T, mode):
    """Mode-``mode`` unfolding; remaining indices vary in ascending-mode order.

    Mode 1: ``out[i1, i2 + n2*i3] = T[i1, i2, i3]`` (zero-based).
    """
    _check_mode(mode)
    T = np.asarray(T)
    if T.ndim != 3:
        raise DimensionError(f"expected an order-3 tensor, got shape {T.shape}")
    P = np.transpose(T, _UNFOLD_PERM[mode])
    return P.reshape(P.shape[0], -1, order="F")


def tensorize(M, mode, dims):
    """Inverse of :func:`matricize`."""
    _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    perm = _UNFOLD_PERM[mode]
    pdims = tuple(dims[k] for k in perm)
    M = np.asarray(M)
    if M.shape != (pdims[0], pdims[1] * pdims[2]):
        raise DimensionError(f"matrix of shape {M.shape} is not a mode-{mode} unfolding of {dims}")
    P = M.reshape(pdims, order="F")
    return np.transpose(P, np.argsort(perm))


def mode_product(T, A, mode):
    """``T x_mode A``: multiply mode ``mode`` of ``T`` by the matrix ``A``."""
    _check_mode(mode)
    k = mode - 1
    if A.shape[1] != T.shape[k]:
        raise DimensionError(f"cannot apply {A.shape} matrix to mode {mode} of tensor {T.shape}")
    out = np.tensordot(A, T, axes=(1, k))
    return np.moveaxis(out, 0, k)


def multilinear_product(A, B, C, G):
    """``(A, B, C) . G``, entrywise sum_j A[i1,j1] B[i2,j2] C[i3,j3] G[j1,j2,j3]."""
    G = np.asarray(G)
    if G.ndim != 3:
        raise DimensionError(f"core must be order-3, got shape {G.shape}")
    mats = [np.asarray(A), np.asarray(B), np.asarray(C)]
    for k, M in enumerate(mats):
        if M.ndim != 2 or M.shape[1] != G.shape[k]:
            raise DimensionError(f"factor {k + 1} of shape {M.shape} does not match core {G.shape}")
    # contract the modes with the largest shrink ratio first
    order = sorted(range(3), key=lambda k: mats[k].shape[0] / max(mats[k].shape[1], 1))
    out = G
    for k in order:
        out = mode_product(out, mats[k], k + 1)
    return out


# --------------------------------------------------------------------------
# spectral kernels
# --------------------------------------------------------------------------

def _sign_fix(vecs):
    """Flip each column so its largest-magnitude entry is positive (first index on ties)."""
    if vecs.size == 0:
        return vecs, np.ones(vecs.shape[1])
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs, signs


def svd_top_r(M, r):
    """Top-``r`` singular triplets of a dense matrix.

    Returns an :class:`SvdResult` with ``S`` non-increasing and the sign of
    each left singular vector fixed so its largest-magnitude entry is positive.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {M.shape}")
    if not 1 <= r <= min(M.shape):
        raise ValueError(f"rank {r} out of range for a {M.shape[0]}x{M.shape[1]} matrix")
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    U, V = U[:, :r], Vt[:r].T
    U, signs = _sign_fix(U)
    return SvdResult(U=U, S=S[:r].copy(), V=V * signs)


def eig_top_r_sym(M, r, sym_tol=SYM_TOL):
    """Eigenpairs of the ``r`` algebraically largest eigenvalues of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if not 1 <= r <= M.shape[0]:
        raise ValueError(f"rank {r} out of range for a {M.shape[0]}x{M.shape[0]} matrix")
    scale = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > sym_tol * max(scale, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    w, Q = np.linalg.eigh(M)
    vals = w[::-1][:r].copy()
    vecs, _ = _sign_fix(Q[:, ::-1][:, :r])
    return vecs, vals


def hosvd(T, ranks):
    """Top-``ranks`` HOSVD: per-mode leading left singular vectors and the projected core."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 3:
        raise DimensionError(f"expected an order-3 tensor, got shape {T.shape}")
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 3 or any(not 1 <= r <= n for r, n in zip(ranks, T.shape)):
        raise ValueError(f"ranks {ranks} out of range for tensor of shape {T.shape}")
    U, V, W = (svd_top_r(matricize(T, k + 1), ranks[k]).U for k in range(3))
    G = multilinear_product(U.T, V.T, W.T, T)
    return TuckerFactors(U, V, W, G)


def breve_factors(F):
    """The three (n_j n_k) x r_i matrices ``M_i((...) . G)^T`` with mode ``i`` left as identity.

    ``F.U @ breveU.T`` equals ``M1(F.full())``, and likewise for modes 2 and 3.
    """
    U, V, W, G = F.U, F.V, F.W, F.G
    bU = np.kron(W, V) @ matricize(G, 1).T
    bV = np.kron(W, U) @ matricize(G, 2).T
    bW = np.kron(V, U) @ matricize(G, 3).T
    return bU, bV, bW


def right_scale_solve(Gr, B, ridge=0.0, pivot_floor=PIVOT_FLOOR):
    """Return ``Gr @ inv(B^T B + ridge*I)`` via a Cholesky solve.

    Raises :class:`SingularGramError` when ``ridge == 0`` and the Gram matrix
    has its smallest eigenvalue below ``pivot_floor`` times its largest.
    """
    Gr = np.asarray(Gr, dtype=float)
    B = np.asarray(B, dtype=float)
    if Gr.ndim != 2 or B.ndim != 2 or Gr.shape[1] != B.shape[1]:
        raise DimensionError(f"cannot right-scale {Gr.shape} by the Gram matrix of {B.shape}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    r = B.shape[1]
    H = B.T @ B
    H = 0.5 * (H + H.T)
    if ridge > 0:
        H = H + ridge * np.eye(r)
    else:
        ev = np.linalg.eigvalsh(H)
        if ev[-1] <= 0 or ev[0] <= pivot_floor * ev[-1]:
            raise SingularGramError(f"Gram matrix is singular (eigenvalues in [{ev[0]:.3e}, {ev[-1]:.3e}])")
    try:
        c = sla.cho_factor(H, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise SingularGramError(str(exc)) from exc
    # X H = Gr  <=>  H X^T = Gr^T
    return sla.cho_solve(c, Gr.T, check_finite=False).T


def pinv_rows(U, ridge=0.0):
    """``inv(U^T U) U^T``, the left pseudo-inverse used by the core updates."""
    return right_scale_solve(U, U, ridge).T
