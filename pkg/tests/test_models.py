import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import scalar_dist
from scaledgd.linalg import MatrixFactors, SvdResult, TuckerFactors, matricize, svd_top_r
from scaledgd.models import (
    ConvergenceTrace,
    CorruptionSpec,
    CorruptionWarning,
    GroundTruthSpec,
    dist_factor_metric,
    gen_matrix_truth,
    gen_sparse_corruption,
    gen_tensor_truth,
    geometric_spectrum,
    incoherence,
    random_orthonormal,
    spectral_stats,
)


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- specs

def test_spec_validation():
    with pytest.raises(ValueError):
        GroundTruthSpec((5, 5), 6)
    with pytest.raises(ValueError):
        GroundTruthSpec((5, 5), 2, kappa=0.5)
    with pytest.raises(ValueError):
        GroundTruthSpec((5, 5), 2, sigma_max=0)
    with pytest.raises(ValueError):
        GroundTruthSpec((5, 6), 2, symmetric=True)
    assert GroundTruthSpec((4, 5, 6), 2).rank == (2, 2, 2)
    with pytest.raises(ValueError):
        CorruptionSpec(1.0)


# ---------------------------------------------------------------- matrix truth

def test_matrix_truth_rank_one():
    X, svd = gen_matrix_truth(GroundTruthSpec((6, 5), 1, kappa=50, seed=1))
    assert spectral_stats(X, 1).kappa == pytest.approx(1.0)


def test_matrix_truth_geometric_values():
    X, svd = gen_matrix_truth(GroundTruthSpec((8, 7), 3, kappa=10, seed=2))
    np.testing.assert_allclose(svd_top_r(X, 3).S, [1, 10 ** -0.5, 0.1], rtol=1e-10)
    np.testing.assert_allclose(geometric_spectrum(3, 10), [1, 10 ** -0.5, 0.1])
    assert spectral_stats(X, 3).kappa == pytest.approx(10, rel=1e-10)


def test_matrix_truth_orthonormal_and_exact():
    X, svd = gen_matrix_truth(GroundTruthSpec((20, 15), 4, kappa=5, seed=3))
    assert np.linalg.norm(svd.U.T @ svd.U - np.eye(4)) < 1e-10
    assert np.linalg.norm(svd.V.T @ svd.V - np.eye(4)) < 1e-10
    assert np.linalg.norm((svd.U * svd.S) @ svd.V.T - X) == 0


@given(st.integers(1, 5), st.floats(1, 100), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25)
def test_matrix_truth_kappa_exact(r, kappa, seed):
    X, _ = gen_matrix_truth(GroundTruthSpec((12, 10), r, kappa=kappa, seed=seed))
    expect = kappa if r > 1 else 1.0
    assert spectral_stats(X, r).kappa == pytest.approx(expect, rel=1e-10)


def test_matrix_truth_symmetric():
    X, svd = gen_matrix_truth(GroundTruthSpec((10, 10), 3, kappa=4, seed=4, symmetric=True))
    assert np.array_equal(X, X.T)
    L = svd.U * np.sqrt(svd.S)
    np.testing.assert_allclose(L @ L.T, X, atol=1e-14)


def test_matrix_truth_reproducible():
    spec = GroundTruthSpec((6, 6), 2, kappa=3, seed=99)
    assert np.array_equal(gen_matrix_truth(spec)[0], gen_matrix_truth(spec)[0])


# ---------------------------------------------------------------- tensor truth

def test_tensor_truth_rank_one():
    X, F = gen_tensor_truth(GroundTruthSpec((4, 5, 6), (1, 1, 1), kappa=7, seed=5))
    st_ = spectral_stats(X, (1, 1, 1))
    assert st_.kappa == pytest.approx(1.0)
    assert st_.sigma_max == pytest.approx(np.linalg.norm(X))


def test_tensor_truth_superdiagonal_kappa():
    X, F = gen_tensor_truth(GroundTruthSpec((5, 6, 7), (2, 2, 2), kappa=8, seed=6))
    for k in (1, 2, 3):
        np.testing.assert_allclose(svd_top_r(matricize(X, k), 2).S, [1, 1 / 8], rtol=1e-10)
    assert spectral_stats(X, (2, 2, 2)).kappa == pytest.approx(8, rel=1e-10)
    assert np.linalg.norm(F.W.T @ F.W - np.eye(2)) < 1e-10


@pytest.mark.parametrize("ranks,kappa", [((2, 2, 2), 5), ((3, 3, 3), 20), ((2, 3, 4), 6), ((4, 2, 3), 3)])
def test_tensor_truth_core_condition(ranks, kappa):
    X, F = gen_tensor_truth(GroundTruthSpec((8, 8, 8), ranks, kappa=kappa, seed=7))
    assert spectral_stats(X, ranks).kappa == pytest.approx(kappa, rel=0.05)
    for k in (1, 2, 3):
        M = matricize(F.G, k)
        Gram = M @ M.T
        assert np.linalg.norm(Gram - np.diag(np.diag(Gram))) <= 1e-8
        assert np.all(np.diff(np.diag(Gram)) <= 1e-15)


def test_tensor_truth_infeasible():
    with pytest.raises(ValueError):
        gen_tensor_truth(GroundTruthSpec((5, 5, 5), (1, 1, 3)))


def test_tensor_spectral_stats_oracle():
    X, _ = gen_tensor_truth(GroundTruthSpec((5, 6, 7), (2, 2, 2), kappa=3, seed=8))
    X = X + 0.01 * rng(8).standard_normal(X.shape)
    tops = [svd_top_r(matricize(X, k), 2).S for k in (1, 2, 3)]
    st_ = spectral_stats(X, (2, 2, 2))
    assert st_.sigma_max == pytest.approx(max(s[0] for s in tops))
    assert st_.sigma_min == pytest.approx(min(s[1] for s in tops))


def test_spectral_stats_diagonal():
    assert spectral_stats(np.eye(2), 2).kappa == 1
    assert tuple(spectral_stats(np.diag([4.0, 2.0]), 2)) == (4, 2, 2)
    assert spectral_stats(np.diag([1.0, 0.0]), 2).kappa == math.inf


# ---------------------------------------------------------------- corruption

def _fiber_counts(S):
    nz = S != 0
    return [nz.sum(axis=k) for k in range(S.ndim)]


def test_corruption_zero_alpha():
    S = gen_sparse_corruption((5, 5), np.ones((5, 5)), CorruptionSpec(0.0))
    assert not np.any(S)


def test_corruption_matrix_partial_permutation():
    S = gen_sparse_corruption((10, 10), np.ones((10, 10)), CorruptionSpec(0.1, seed=3))
    for c in _fiber_counts(S):
        assert np.all(c <= 1)


def test_corruption_tensor_fibers():
    X = rng(9).standard_normal((6, 6, 6))
    S = gen_sparse_corruption(X.shape, X, CorruptionSpec(1 / 3, seed=4))
    assert np.count_nonzero(S) > 0
    for c in _fiber_counts(S):
        assert np.all(c <= 2)
    assert np.max(np.abs(S)) <= 10 * np.max(np.abs(X))


@given(st.floats(0.12, 0.5), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20)
def test_corruption_class_membership(alpha, seed):
    shape = (12, 9)
    S = gen_sparse_corruption(shape, np.ones(shape), CorruptionSpec(alpha, seed=seed))
    assert np.all((S != 0).sum(axis=1) <= math.floor(alpha * 9 + 1e-9))
    assert np.all((S != 0).sum(axis=0) <= math.floor(alpha * 12 + 1e-9))


def test_corruption_empty_class_warns():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        S = gen_sparse_corruption((10, 10, 10), np.ones((10, 10, 10)), CorruptionSpec(0.05))
    assert not np.any(S)
    assert any(issubclass(x.category, CorruptionWarning) for x in w)


# ---------------------------------------------------------------- incoherence

def test_incoherence_spike():
    U = np.eye(6)[:, :2]
    assert incoherence((U,)) == pytest.approx(3.0)


def test_incoherence_flat():
    H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]]) / 2.0
    assert incoherence((H[:, :2],)) == pytest.approx(1.0)


def test_incoherence_row_scan():
    U = random_orthonormal(rng(10), 20, 2)
    scan = max(sum(U[i, j] ** 2 for j in range(2)) for i in range(20)) * 20 / 2
    assert incoherence((U,)) == pytest.approx(scan)
    V = random_orthonormal(rng(11), 15, 2)
    assert incoherence(SvdResult(U=U, S=np.ones(2), V=V)) == pytest.approx(
        max(scan, incoherence((V,))))


@given(st.integers(0, 2 ** 31 - 1))
def test_incoherence_rotation_invariant(seed):
    g = rng(seed)
    U = random_orthonormal(g, 12, 3)
    Q = random_orthonormal(g, 3, 3)
    assert abs(incoherence((U,)) - incoherence((U @ Q,))) <= 1e-10


def test_incoherence_tensor_and_errors():
    _, F = gen_tensor_truth(GroundTruthSpec((6, 7, 8), (2, 2, 2), seed=12))
    assert incoherence(F) == pytest.approx(max(incoherence((M,)) for M in (F.U, F.V, F.W)))
    with pytest.raises(ValueError):
        incoherence((2 * np.eye(3)[:, :1],))


# ---------------------------------------------------------------- factor distance

def _pair(seed, n1=8, n2=7, r=2):
    g = rng(seed)
    return MatrixFactors(g.standard_normal((n1, r)), g.standard_normal((n2, r)))


def test_dist_identical_is_zero():
    F = _pair(13)
    assert dist_factor_metric(F, F, np.ones(2)).value <= 1e-12
    assert dist_factor_metric(F, F, np.ones(2)).is_estimate


def test_dist_gl_class_is_zero():
    Fs = _pair(14)
    Q0 = np.eye(2) + 0.3 * rng(15).standard_normal((2, 2))
    F = MatrixFactors(Fs.L @ Q0, Fs.R @ np.linalg.inv(Q0).T)
    assert dist_factor_metric(F, Fs, np.array([2.0, 0.5])).value <= 1e-10


def test_dist_scalar_oracle():
    for seed in range(5):
        g = rng(100 + seed)
        L, R, Ls, Rs = (g.standard_normal(n) for n in (6, 5, 6, 5))
        F = MatrixFactors(L[:, None], R[:, None])
        Fs = MatrixFactors(Ls[:, None], Rs[:, None])
        est = dist_factor_metric(F, Fs, np.array([1.7])).value
        assert est == pytest.approx(scalar_dist(L, R, Ls, Rs, 1.7), abs=1e-6)


def test_dist_gl_invariance():
    Fs = _pair(16)
    F = _pair(17)
    Q = np.eye(2) + 0.5 * rng(18).standard_normal((2, 2))
    G = MatrixFactors(F.L @ Q, F.R @ np.linalg.inv(Q).T)
    s = np.array([1.0, 0.3])
    assert dist_factor_metric(F, Fs, s).value == pytest.approx(dist_factor_metric(G, Fs, s).value, abs=1e-6)


def test_dist_not_above_identity_start():
    Fs, F = _pair(19), _pair(20)
    s = np.array([1.0, 0.5])
    raw = math.sqrt(np.sum(((F.L - Fs.L) * np.sqrt(s)) ** 2) + np.sum(((F.R - Fs.R) * np.sqrt(s)) ** 2))
    assert dist_factor_metric(F, Fs, s).value <= raw


def test_dist_errors():
    with pytest.raises(ValueError):
        dist_factor_metric(_pair(1), _pair(2, n1=9), np.ones(2))
    with pytest.raises(ValueError):
        dist_factor_metric(_pair(1), _pair(2), np.array([1.0, 0.0]))


# ---------------------------------------------------------------- traces

def test_trace_basics():
    tr = ConvergenceTrace()
    for t, e in enumerate([1.0, 0.5, 0.25, 1e-4]):
        tr.append(t, e, e / 2, 0.1 * t, event="init" if t == 0 else "", zeta=1.0)
    assert len(tr) == 4
    assert tr.iterations_to(0.3) == 2
    assert tr.iterations_to(1e-9) is None
    assert tr.events("init") == [0]
    np.testing.assert_allclose(tr.contraction_ratios(0, 2), [0.5, 0.5])
    np.testing.assert_array_equal(tr.column("zeta"), np.ones(4))
    with pytest.raises(ValueError):
        tr.append(3, 0.1)


def test_tucker_full_matches_truth_factors():
    X, F = gen_tensor_truth(GroundTruthSpec((4, 5, 6), (2, 2, 2), kappa=2, seed=21))
    assert isinstance(F, TuckerFactors)
    np.testing.assert_allclose(F.full(), X)
