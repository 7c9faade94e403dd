import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import inv2x2, jacobi_eigh, tucker_by_sums, unfold_by_loops
from scaledgd.linalg import (
    DimensionError,
    SingularGramError,
    TuckerFactors,
    breve_factors,
    eig_top_r_sym,
    hosvd,
    matricize,
    multilinear_product,
    right_scale_solve,
    svd_top_r,
    tensorize,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def rand_tucker(dims, ranks, seed=0):
    g = rng(seed)
    return TuckerFactors(*(g.standard_normal((n, r)) for n, r in zip(dims, ranks)), g.standard_normal(ranks))


# ---------------------------------------------------------------- matricize

def test_matricize_single_entry():
    T = np.zeros((2, 2, 2))
    T[0, 1, 0] = 7
    M = matricize(T, 1)
    assert M.shape == (2, 4)
    assert M[0, 1] == 7
    assert np.count_nonzero(M) == 1


def test_matricize_zero():
    assert not np.any(matricize(np.zeros((2, 3, 4)), 1))
    assert matricize(np.zeros((2, 3, 4)), 1).shape == (2, 12)


def test_matricize_matches_index_formula():
    T = rng(1).standard_normal((2, 3, 4))
    # one-based (3, 2 + (4-1)*2) = (3, 8) in mode 2 holds entry (2, 3, 4)
    assert matricize(T, 2)[2, 7] == T[1, 2, 3]
    for k in (1, 2, 3):
        np.testing.assert_array_equal(matricize(T, k), unfold_by_loops(T, k))


def test_matricize_bad_mode():
    with pytest.raises(ValueError):
        matricize(np.zeros((2, 2, 2)), 4)


def test_flat_layout_is_mode1_major():
    T = rng(2).standard_normal((3, 4, 5))
    flat = T.reshape(-1, order="F")
    i1, i2, i3 = 2, 1, 3
    assert flat[i1 + 3 * (i2 + 4 * i3)] == T[i1, i2, i3]
    np.testing.assert_array_equal(matricize(T, 1).reshape(-1, order="F"), flat)


dims_st = st.tuples(*(st.integers(1, 6),) * 3)


@given(dims_st, st.integers(0, 2 ** 31 - 1))
def test_tensorize_inverts_matricize(dims, seed):
    T = rng(seed).standard_normal(dims)
    for k in (1, 2, 3):
        np.testing.assert_array_equal(tensorize(matricize(T, k), k, dims), T)


def test_tensorize_zero_and_known():
    np.testing.assert_array_equal(tensorize(np.zeros((3, 20)), 1, (3, 4, 5)), np.zeros((3, 4, 5)))
    T = rng(3).standard_normal((2, 3, 4))
    np.testing.assert_array_equal(tensorize(unfold_by_loops(T, 1), 1, T.shape), T)


def test_tensorize_shape_mismatch():
    with pytest.raises(DimensionError):
        tensorize(np.zeros((3, 19)), 1, (3, 4, 5))


# ---------------------------------------------------------------- multilinear product

def test_multilinear_identity():
    G = rng(4).standard_normal((2, 3, 4))
    np.testing.assert_array_equal(multilinear_product(np.eye(2), np.eye(3), np.eye(4), G), G)


def test_multilinear_scalar_core():
    one = np.ones((2, 1))
    out = multilinear_product(one, 2 * one, one, np.full((1, 1, 1), 2.0))
    np.testing.assert_array_equal(out, np.full((2, 2, 2), 4.0))


def test_multilinear_matches_triple_sum():
    F = rand_tucker((4, 5, 6), (2, 2, 2), seed=5)
    np.testing.assert_allclose(F.full(), tucker_by_sums(F.U, F.V, F.W, F.G), rtol=1e-12, atol=1e-12)


def test_multilinear_dimension_error():
    with pytest.raises(DimensionError):
        multilinear_product(np.ones((4, 3)), np.ones((5, 2)), np.ones((6, 2)), np.ones((2, 2, 2)))


@given(st.tuples(*(st.integers(1, 5),) * 3), st.tuples(*(st.integers(1, 3),) * 3), st.integers(0, 2 ** 31 - 1))
def test_matricization_identities(dims, ranks, seed):
    F = rand_tucker(dims, ranks, seed)
    X = F.full()
    scale = max(np.linalg.norm(X), 1e-300)
    U, V, W, G = F.U, F.V, F.W, F.G
    for k, rhs in ((1, U @ matricize(G, 1) @ np.kron(W, V).T),
                   (2, V @ matricize(G, 2) @ np.kron(W, U).T),
                   (3, W @ matricize(G, 3) @ np.kron(V, U).T)):
        assert np.linalg.norm(matricize(X, k) - rhs) <= 1e-10 * scale


# ---------------------------------------------------------------- spectral kernels

def test_svd_diagonal():
    res = svd_top_r(np.diag([3.0, 2.0, 1.0]), 2)
    np.testing.assert_allclose(res.S, [3, 2])


def test_svd_exact_rank():
    g = rng(6)
    M = g.standard_normal((10, 2)) @ g.standard_normal((2, 8))
    res = svd_top_r(M, 2)
    assert np.linalg.norm(res.reconstruct() - M) < 1e-10 * np.linalg.norm(M)
    assert np.linalg.norm(res.U.T @ res.U - np.eye(2)) < 1e-10
    assert np.linalg.norm(res.V.T @ res.V - np.eye(2)) < 1e-10


def test_svd_matches_jacobi_on_gram():
    M = rng(7).standard_normal((6, 5))
    w, _ = jacobi_eigh(M.T @ M)
    np.testing.assert_allclose(svd_top_r(M, 3).S, np.sqrt(w[:3]), rtol=1e-8)


def test_svd_rank_out_of_range():
    with pytest.raises(ValueError):
        svd_top_r(np.ones((3, 4)), 4)
    with pytest.raises(ValueError):
        svd_top_r(np.ones((3, 4)), 0)


def test_svd_sign_convention():
    res = svd_top_r(rng(8).standard_normal((7, 5)), 3)
    for j in range(3):
        col = res.U[:, j]
        assert col[np.argmax(np.abs(col))] > 0


@given(st.integers(2, 8), st.integers(2, 8), st.integers(0, 2 ** 31 - 1), st.data())
def test_svd_energy_conservation(n1, n2, seed, data):
    r = data.draw(st.integers(1, min(n1, n2)))
    M = rng(seed).standard_normal((n1, n2))
    res = svd_top_r(M, r)
    resid = np.linalg.norm(M - res.reconstruct()) ** 2
    total = np.linalg.norm(M) ** 2
    assert abs(resid + np.sum(res.S ** 2) - total) <= 1e-8 * total
    assert np.all(np.diff(res.S) <= 0) and np.all(res.S >= 0)


def test_eig_diagonal():
    vecs, vals = eig_top_r_sym(np.diag([5.0, 1.0, -2.0]), 1)
    assert vals[0] == pytest.approx(5)
    np.testing.assert_allclose(np.abs(vecs[:, 0]), [1, 0, 0])


def test_eig_degenerate():
    vecs, vals = eig_top_r_sym(np.eye(4), 2)
    np.testing.assert_allclose(vals, [1, 1])
    assert np.linalg.norm(vecs.T @ vecs - np.eye(2)) < 1e-10


def test_eig_matches_jacobi():
    A = rng(9).standard_normal((6, 6))
    A = A + A.T
    w, _ = jacobi_eigh(A)
    vecs, vals = eig_top_r_sym(A, 3)
    np.testing.assert_allclose(vals, w[:3], rtol=1e-9, atol=1e-12)
    assert np.linalg.norm(vecs.T @ vecs - np.eye(3)) < 1e-10


def test_eig_rejects_asymmetric():
    with pytest.raises(ValueError):
        eig_top_r_sym(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)
    with pytest.raises(ValueError):
        eig_top_r_sym(np.eye(3), 4)


# ---------------------------------------------------------------- hosvd and breve factors

def test_hosvd_exact_rank():
    X = rand_tucker((5, 6, 7), (2, 2, 2), seed=10).full()
    F = hosvd(X, (2, 2, 2))
    assert np.linalg.norm(F.full() - X) < 1e-9 * np.linalg.norm(X)


def test_hosvd_rank_one():
    g = rng(11)
    a, b, c = g.standard_normal(3), g.standard_normal(4), g.standard_normal(5)
    X = np.einsum("i,j,k->ijk", a, b, c)
    F = hosvd(X, (1, 1, 1))
    assert F.G.shape == (1, 1, 1)
    assert abs(F.G[0, 0, 0]) == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b) * np.linalg.norm(c))


def test_hosvd_zero():
    F = hosvd(np.zeros((3, 4, 5)), (2, 2, 2))
    assert not np.any(F.G)
    assert np.linalg.norm(F.U.T @ F.U - np.eye(2)) < 1e-10


@given(st.tuples(*(st.integers(1, 5),) * 3), st.integers(0, 2 ** 31 - 1))
def test_hosvd_full_rank_reconstructs(dims, seed):
    X = rng(seed).standard_normal(dims)
    size = int(np.prod(dims))
    F = hosvd(X, tuple(min(n, size // n) for n in dims))
    assert np.linalg.norm(F.full() - X) <= 1e-9 * np.linalg.norm(X)


def test_hosvd_rank_error():
    with pytest.raises(ValueError):
        hosvd(np.zeros((3, 4, 5)), (4, 1, 1))


def test_breve_identity_factors():
    G = rng(12).standard_normal((2, 3, 4))
    F = TuckerFactors(np.eye(2), np.eye(3), np.eye(4), G)
    bU, _, _ = breve_factors(F)
    np.testing.assert_allclose(bU, matricize(G, 1).T)


def test_breve_consistency():
    F = rand_tucker((3, 4, 5), (2, 2, 2), seed=13)
    X = F.full()
    bU, bV, bW = breve_factors(F)
    assert bU.shape == (4 * 5, 2)
    np.testing.assert_allclose(F.U @ bU.T, matricize(X, 1), atol=1e-12)
    np.testing.assert_allclose(F.V @ bV.T, matricize(X, 2), atol=1e-12)
    np.testing.assert_allclose(F.W @ bW.T, matricize(X, 3), atol=1e-12)


def test_breve_zero_core():
    F = rand_tucker((3, 4, 5), (2, 2, 2), seed=14)
    F = TuckerFactors(F.U, F.V, F.W, np.zeros((2, 2, 2)))
    assert all(not np.any(b) for b in breve_factors(F))


@given(st.integers(0, 2 ** 31 - 1))
def test_breve_identity_property(seed):
    F = rand_tucker((3, 4, 5), (2, 3, 2), seed=seed)
    X = F.full()
    bU = breve_factors(F)[0]
    assert np.linalg.norm(F.U @ bU.T - matricize(X, 1)) <= 1e-10 * np.linalg.norm(X)


def test_dimension_checks_on_factor_types():
    with pytest.raises(DimensionError):
        TuckerFactors(np.ones((3, 2)), np.ones((4, 2)), np.ones((5, 2)), np.ones((2, 2, 3)))
    with pytest.raises(ValueError):
        TuckerFactors(np.full((3, 1), np.nan), np.ones((4, 1)), np.ones((5, 1)), np.ones((1, 1, 1)))


# ---------------------------------------------------------------- right_scale_solve

def test_right_scale_orthonormal():
    Q, _ = np.linalg.qr(rng(15).standard_normal((6, 3)))
    Gr = rng(16).standard_normal((4, 3))
    np.testing.assert_allclose(right_scale_solve(Gr, Q), Gr, atol=1e-12)


def test_right_scale_zero():
    B = rng(17).standard_normal((5, 2))
    assert not np.any(right_scale_solve(np.zeros((7, 2)), B))


def test_right_scale_two_by_two_oracle():
    g = rng(18)
    B, Gr = g.standard_normal((5, 2)), g.standard_normal((7, 2))
    X = right_scale_solve(Gr, B, ridge=0.5)
    np.testing.assert_allclose(X, Gr @ inv2x2(B.T @ B + 0.5 * np.eye(2)), rtol=1e-12)
    H = B.T @ B + 0.5 * np.eye(2)
    assert np.linalg.norm(X @ H - Gr) <= 1e-10 * np.linalg.norm(Gr)


def test_right_scale_singular():
    B = np.ones((5, 2))
    with pytest.raises(SingularGramError):
        right_scale_solve(np.ones((3, 2)), B)
    # a ridge makes it solvable
    right_scale_solve(np.ones((3, 2)), B, ridge=1e-3)


@given(st.integers(0, 2 ** 31 - 1))
def test_right_scale_orthogonal_equivariance(seed):
    g = rng(seed)
    B, Gr = g.standard_normal((8, 3)), g.standard_normal((5, 3))
    Q, _ = np.linalg.qr(g.standard_normal((3, 3)))
    X1 = right_scale_solve(Gr, B) @ Q
    X2 = right_scale_solve(Gr @ Q, B @ Q)
    assert np.linalg.norm(X1 - X2) <= 1e-9 * max(np.linalg.norm(X1), 1.0)
