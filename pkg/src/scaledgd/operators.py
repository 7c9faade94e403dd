"""Measurement models and the nonsmooth operators used by the solvers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import DimensionError, MatrixFactors, TuckerFactors, breve_factors

# doubles; above this the sensing matrices are regenerated from the seed on every call
DEFAULT_MEMORY_BUDGET = 2 * 10**8
# measurements per RNG substream; both storage modes draw identical chunks
CHUNK = 256


def _substream(seed, chunk):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chunk)])))


class GaussianSensingOp:
    """Linear map ``X -> (<A_i, X>)_i`` with i.i.d. N(0, 1/m) entries in every ``A_i``.

    ``storage`` is ``"materialized"``, ``"regenerate"`` or ``"auto"`` (pick by
    memory budget). Measurement chunks are drawn from per-chunk Philox
    substreams, so both modes see bitwise-identical ``A_i``.
    """

    def __init__(self, m, shape, seed=0, storage="auto", memory_budget=DEFAULT_MEMORY_BUDGET):
        self.m = int(m)
        self.shape = tuple(int(s) for s in shape)
        self.seed = int(seed)
        if self.m < 1:
            raise ValueError("m must be positive")
        if len(self.shape) not in (2, 3):
            raise ValueError(f"shape must be a matrix or order-3 tensor shape, got {self.shape}")
        size = int(np.prod(self.shape))
        if storage == "auto":
            storage = "materialized" if self.m * size <= memory_budget else "regenerate"
        if storage not in ("materialized", "regenerate"):
            raise ValueError(f"unknown storage mode {storage!r}")
        self.storage = storage
        self._A = None
        if storage == "materialized":
            self._A = np.concatenate([blk for _, blk in self._chunks()], axis=0)

    @classmethod
    def from_arrays(cls, A):
        """Wrap explicit measurement arrays ``A`` of shape ``(m, *shape)``."""
        A = np.asarray(A, dtype=float)
        op = cls.__new__(cls)
        op.m, op.shape, op.seed, op.storage = A.shape[0], A.shape[1:], -1, "explicit"
        op._A = A
        return op

    def _chunks(self):
        if self._A is not None:
            # same blocking as regenerate mode so both modes round identically
            for start in range(0, self.m, CHUNK):
                yield start, self._A[start:start + CHUNK]
            return
        scale = 1.0 / math.sqrt(self.m)
        for c, start in enumerate(range(0, self.m, CHUNK)):
            k = min(CHUNK, self.m - start)
            yield start, _substream(self.seed, c).standard_normal((k,) + self.shape) * scale

    def measurement(self, i):
        """The ``i``-th measurement array ``A_i``."""
        if self._A is not None:
            return self._A[i].copy()
        c, off = divmod(i, CHUNK)
        k = min(CHUNK, self.m - c * CHUNK)
        blk = _substream(self.seed, c).standard_normal((k,) + self.shape) * (1.0 / math.sqrt(self.m))
        return blk[off]

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape != self.shape:
            raise DimensionError(f"input of shape {X.shape} does not match operator shape {self.shape}")
        return X

    def apply(self, X):
        X = self._check(X)
        out = np.empty(self.m)
        nd = len(self.shape)
        for start, blk in self._chunks():
            out[start:start + blk.shape[0]] = np.tensordot(blk, X, axes=nd)
        return out

    __call__ = apply

    def adjoint(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise DimensionError(f"expected {self.m} measurements, got shape {y.shape}")
        out = np.zeros(self.shape)
        for start, blk in self._chunks():
            out += np.tensordot(y[start:start + blk.shape[0]], blk, axes=1)
        return out

    def to_dict(self):
        return {"shape": list(self.shape), "m": self.m, "seed": self.seed, "storage": self.storage}

    @classmethod
    def from_dict(cls, d):
        return cls(d["m"], d["shape"], seed=d["seed"], storage=d.get("storage", "auto"))


def sensing_apply(op, X):
    return op.apply(X)


def sensing_adjoint(op, y):
    return op.adjoint(y)


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Bernoulli(p) sample of entry positions.

    ``indices`` is the lexicographically sorted ``(|Omega|, ndim)`` index array;
    ``dense`` the matching boolean array.
    """

    shape: tuple
    p: float
    seed: int
    indices: np.ndarray = field(repr=False)
    dense: np.ndarray = field(repr=False)

    @classmethod
    def bernoulli(cls, shape, p, seed=0):
        shape = tuple(int(s) for s in shape)
        if not 0 < p <= 1:
            raise ValueError(f"observation probability must lie in (0, 1], got {p}")
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6D61736B]))
        dense = rng.random(shape) < p
        return cls._from_dense(dense, p, seed)

    @classmethod
    def _from_dense(cls, dense, p, seed):
        idx = np.argwhere(dense)  # C-order scan is lexicographic
        return cls(dense.shape, float(p), int(seed), idx, dense)

    @classmethod
    def from_indices(cls, shape, indices, p, seed=-1):
        shape = tuple(int(s) for s in shape)
        dense = np.zeros(shape, dtype=bool)
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, len(shape))
        if idx.size and (np.any(idx < 0) or np.any(idx >= np.array(shape))):
            raise ValueError("mask index out of range")
        if idx.size:
            dense[tuple(idx.T)] = True
        if dense.sum() != len(idx):
            raise ValueError("duplicate mask indices")
        return cls._from_dense(dense, p, seed)

    @property
    def count(self):
        return len(self.indices)

    def project(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape != self.shape:
            raise DimensionError(f"input of shape {X.shape} does not match mask shape {self.shape}")
        return np.where(self.dense, X, 0.0)

    def save(self, path):
        """Sorted index list, one zero-based index tuple per line, after a ``#`` header."""
        with open(path, "w") as fh:
            fh.write("# " + json.dumps({"shape": list(self.shape), "p": self.p, "seed": self.seed}) + "\n")
            for row in self.indices:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("#"):
                raise ValueError(f"{path}: missing mask header line")
            meta = json.loads(header[1:])
            rows = [tuple(int(v) for v in line.split()) for line in fh if line.strip()]
        return cls.from_indices(meta["shape"], rows, meta["p"], meta.get("seed", -1))


def mask_project(mask, X):
    return mask.project(X)


def soft_shrink(X, zeta):
    """Entrywise ``sign(x) * max(0, |x| - zeta)``."""
    if zeta < 0:
        raise ValueError("shrinkage threshold must be nonnegative")
    X = np.asarray(X, dtype=float)
    return np.sign(X) * np.maximum(np.abs(X) - zeta, 0.0)


def keep_count(alpha_bar, n):
    """Order-statistic index ``ceil(alpha_bar * n)``, robust to float noise in the product."""
    return int(math.ceil(round(alpha_bar * n, 9)))


def truncate_rows_cols(M, alpha_bar):
    """Keep entries among the ``ceil(alpha_bar*n)`` largest magnitudes of both their row and column.

    Magnitudes tied with the cutoff are kept. ``alpha_bar == 0`` keeps nothing.
    """
    if not 0 <= alpha_bar <= 1:
        raise ValueError(f"truncation fraction must lie in [0, 1], got {alpha_bar}")
    M = np.asarray(M, dtype=float)
    n1, n2 = M.shape
    kr, kc = keep_count(alpha_bar, n2), keep_count(alpha_bar, n1)
    if kr == 0 or kc == 0:
        return np.zeros_like(M)
    A = np.abs(M)
    row_cut = -np.partition(-A, kr - 1, axis=1)[:, kr - 1]
    col_cut = -np.partition(-A, kc - 1, axis=0)[kc - 1, :]
    keep = (A >= row_cut[:, None]) & (A >= col_cut[None, :])
    return np.where(keep, M, 0.0)


def _row_scale(rows_norm, n, radius):
    scale = np.ones_like(rows_norm)
    bad = np.sqrt(n) * rows_norm > radius
    scale[bad] = radius / (np.sqrt(n) * rows_norm[bad])
    return scale


def matrix_projection_scales(F, radius):
    """Row scaling factors of the scaled projection, computed from the input factors."""
    L, R = F.L, F.R
    n1, n2 = L.shape[0], R.shape[0]
    # ||L_i R^T|| = ||L_i (R^T R)^{1/2}||, evaluated without forming L R^T
    Hr, Hl = R.T @ R, L.T @ L
    ln = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", L, Hr, L), 0.0))
    rn = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", R, Hl, R), 0.0))
    return _row_scale(ln, n1, radius), _row_scale(rn, n2, radius)


def scaled_project_matrix(F, radius):
    """Scaled projection onto weighted-incoherent factor pairs (closed form)."""
    if radius <= 0:
        raise ValueError("projection radius must be positive")
    sl, sr = matrix_projection_scales(F, radius)
    return MatrixFactors(F.L * sl[:, None], F.R * sr[:, None])


def tensor_projection_scales(F, radius):
    bU, bV, bW = breve_factors(F)
    out = []
    for X, b in ((F.U, bU), (F.V, bV), (F.W, bW)):
        H = b.T @ b
        norms = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, H, X), 0.0))
        out.append(_row_scale(norms, X.shape[0], radius))
    return tuple(out)


def scaled_project_tensor(F, radius):
    """Tucker scaled projection; rows rescaled by mode-k unfolding row norms, core untouched."""
    if radius <= 0:
        raise ValueError("projection radius must be positive")
    su, sv, sw = tensor_projection_scales(F, radius)
    return TuckerFactors(F.U * su[:, None], F.V * sv[:, None], F.W * sw[:, None], F.G)
