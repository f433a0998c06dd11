import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from stokes_iga.sparse import (
    AnalysisScaleError,
    CholeskyBreakdown,
    bandwidth,
    complete_cholesky,
    dense_gen_eig,
    dense_sym_eig,
    ic0,
    is_permutation,
    pattern_residual,
    permute,
    rcm_permutation,
    read_matrix_market,
    solve,
    spmv,
    write_matrix_market,
)

rng = np.random.default_rng(99)


def random_spd(n, density=1.0, seed=0):
    r = np.random.default_rng(seed)
    M = sp.random(n, n, density=density, random_state=r)
    M = M + M.T
    return sp.csr_matrix(M + sp.diags(np.abs(M).sum(axis=1).A1 + 1.0))


def arrowhead(n=6):
    A = sp.diags([np.ones(n - 1), 10 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]).tolil()
    A[0, :] = 1.0
    A[:, 0] = 1.0
    A[0, 0] = 10.0
    return sp.csr_matrix(A)


# spmv ----------------------------------------------------------------------------


def test_spmv_small_cases():
    x = rng.standard_normal(7)
    np.testing.assert_array_equal(spmv(sp.identity(7, format="csr"), x), x)
    np.testing.assert_array_equal(spmv(sp.csr_matrix([[2.0, 0], [0, 3.0]]), [1, 1]), [2, 3])


def test_spmv_matches_dense():
    A = sp.random(50, 50, density=0.2, random_state=np.random.default_rng(1), format="csr")
    x = rng.standard_normal(50)
    ref = A.toarray() @ x
    assert np.linalg.norm(spmv(A, x) - ref) <= 1e-14 * np.linalg.norm(ref)


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv(sp.identity(3, format="csr"), np.ones(4))


# RCM -----------------------------------------------------------------------------


def _brute_force_bandwidth(A):
    n = A.shape[0]
    return min(bandwidth(permute(A, list(p))) for p in itertools.permutations(range(n)))


def test_rcm_tridiagonal_stays_banded():
    T = sp.diags([np.ones(9), 2 * np.ones(10), np.ones(9)], [-1, 0, 1], format="csr")
    perm = rcm_permutation(T)
    assert is_permutation(perm, 10)
    assert bandwidth(permute(T, perm)) == 1


def test_rcm_arrowhead_reaches_optimum():
    A = arrowhead(6)
    assert bandwidth(A) == 5
    perm = rcm_permutation(A)
    assert bandwidth(permute(A, perm)) == _brute_force_bandwidth(A) == 3


def test_rcm_star_graph():
    # any ordering of a star has bandwidth >= ceil((n-1)/2); Cuthill-McKee puts the
    # hub next to one end, so only validity and non-increase are checked
    n = 7
    A = sp.lil_matrix((n, n))
    A.setdiag(1.0)
    A[0, :] = 1.0
    A[:, 0] = 1.0
    A = sp.csr_matrix(A)
    perm = rcm_permutation(A)
    assert is_permutation(perm, n)
    assert bandwidth(permute(A, perm)) <= bandwidth(A) == n - 1
    assert _brute_force_bandwidth(A) == int(np.ceil((n - 1) / 2))


def test_rcm_rejects_nonsymmetric_pattern():
    with pytest.raises(ValueError):
        rcm_permutation(sp.csr_matrix([[1.0, 1.0], [0.0, 1.0]]))


def test_rcm_reduces_stokes_block_bandwidth(system_factory):
    A = system_factory("cavity", 2, 8).A
    assert bandwidth(permute(A, rcm_permutation(A))) <= bandwidth(A)


@given(n=st.integers(1, 40), density=st.floats(0.0, 0.3), seed=st.integers(0, 10_000))
def test_rcm_is_always_a_bijection(n, density, seed):
    M = sp.random(n, n, density=density, random_state=np.random.default_rng(seed))
    P = sp.csr_matrix(abs(M) + abs(M).T + sp.identity(n))
    perm = rcm_permutation(P)
    assert is_permutation(perm, n)
    assert np.sort(perm).sum() == n * (n - 1) // 2


# incomplete and complete Cholesky ------------------------------------------------


def test_ic0_of_diagonal():
    D = sp.diags([4.0, 9.0, 2.0], format="csr")
    f = ic0(D, reorder=False)
    np.testing.assert_allclose(f.L.toarray(), np.diag(np.sqrt([4.0, 9.0, 2.0])))


def test_ic0_dense_equals_complete():
    A = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])
    L_ic = ic0(sp.csr_matrix(A), reorder=False).L.toarray()
    np.testing.assert_allclose(L_ic, np.linalg.cholesky(A), atol=1e-15)
    np.testing.assert_allclose(complete_cholesky(sp.csr_matrix(A), reorder=False).L.toarray(), np.linalg.cholesky(A), atol=1e-15)


@pytest.mark.parametrize("block", ["A", "Q"])
def test_ic0_on_stokes_blocks(system_factory, block):
    s = system_factory("cavity", 2, 8)
    M = s.A if block == "A" else s.Q_nu
    f = ic0(M)
    assert f.L.diagonal().min() > 0
    assert pattern_residual(M, f) <= 1e-12
    # L keeps the lower pattern of the reordered matrix exactly
    low = sp.tril(permute(M, f.perm), format="csr")
    assert np.array_equal(f.L.indptr, low.indptr) and np.array_equal(f.L.indices, low.indices)


@given(n=st.integers(2, 60), density=st.floats(0.02, 0.3), seed=st.integers(0, 10_000))
def test_ic0_pattern_property(n, density, seed):
    A = random_spd(n, density, seed)
    assert pattern_residual(A, ic0(A)) <= 1e-12


def test_ic0_breakdown_reports_row():
    A = sp.csr_matrix([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(CholeskyBreakdown) as exc:
        ic0(A, reorder=False)
    assert exc.value.row == 1


def test_complete_cholesky_small():
    f = complete_cholesky(sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]]))
    np.testing.assert_allclose(solve(f, [1.0, 2.0]), [1 / 11, 7 / 11], rtol=1e-15)
    b = rng.standard_normal(5)
    np.testing.assert_array_equal(solve(complete_cholesky(sp.identity(5, format="csr")), b), b)


def test_complete_cholesky_random_spd():
    A = random_spd(100, 0.1, 3)
    b = rng.standard_normal(100)
    x = complete_cholesky(A).solve(b)
    ref = np.linalg.solve(A.toarray(), b)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_complete_cholesky_stokes_block(system_factory):
    A = system_factory("cavity", 2, 16).A
    b = rng.standard_normal(A.shape[0])
    x = complete_cholesky(A).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_complete_cholesky_breakdown():
    with pytest.raises(CholeskyBreakdown):
        complete_cholesky(sp.csr_matrix([[1.0, 2.0], [2.0, 1.0]]))


# dense eigensolvers --------------------------------------------------------------


def test_eig_small_cases():
    np.testing.assert_allclose(dense_sym_eig(np.diag([3.0, 1.0, 2.0])), [1, 2, 3])
    A = np.diag([2.0, 4.0, 6.0])
    np.testing.assert_allclose(dense_gen_eig(A, 2 * np.eye(3)), [1, 2, 3])


def _inverse_iteration(A, shift, iters=50):
    n = A.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lu = np.linalg.inv(A - shift * np.eye(n))
    for _ in range(iters):
        v = lu @ v
        v /= np.linalg.norm(v)
    return v @ A @ v


def test_eig_against_shifted_inverse_iteration():
    G = rng.standard_normal((20, 20))
    A = (G + G.T) / 2
    ev = dense_sym_eig(A)
    for lam in ev[::4]:
        assert abs(_inverse_iteration(A, lam + 1e-7) - lam) < 1e-9


def test_generalized_reduces_to_standard():
    G = rng.standard_normal((30, 30))
    A = (G + G.T) / 2
    assert np.abs(dense_gen_eig(A, np.eye(30)) - dense_sym_eig(A)).max() < 1e-13


def test_generalized_residuals():
    G = rng.standard_normal((40, 40))
    A = (G + G.T) / 2
    M = random_spd(40, 0.2, 8).toarray()
    lam, V = dense_gen_eig(A, M, vectors=True)
    for k in (0, 13, 39):
        assert np.linalg.norm(A @ V[:, k] - lam[k] * M @ V[:, k]) <= 1e-8 * np.linalg.norm(A, 2)
    assert np.all(np.diff(lam) >= 0)


def test_dense_cap():
    with pytest.raises(AnalysisScaleError, match="coarser mesh"):
        dense_sym_eig(sp.identity(50, format="csr"), cap=40)
    with pytest.raises(AnalysisScaleError):
        dense_gen_eig(np.eye(50), np.eye(50), cap=10)


# exchange format -----------------------------------------------------------------


@pytest.mark.parametrize("symmetric", [True, False])
def test_matrix_market_round_trip(tmp_path, symmetric):
    A = random_spd(25, 0.2, 5) if symmetric else sp.random(25, 13, density=0.3, random_state=np.random.default_rng(2), format="csr")
    path = tmp_path / "m.mtx"
    write_matrix_market(path, A, symmetric=symmetric)
    header = path.read_text().splitlines()[0]
    assert ("symmetric" in header) == symmetric
    B = read_matrix_market(path)
    assert B.shape == A.shape and abs(B - A).max() == 0.0
