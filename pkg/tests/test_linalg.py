import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from stokes_biot.linalg import (BlockSystem, EliminatedOperator, Factorization, SolverError, apply_dirichlet,
                                equilibrate, monolithic, solve_direct, write_matrix_market)
from stokes_biot.spaces import BlockLayout, DofSet

LAYOUT = BlockLayout(("u", "pF", "d", "pP", "phi"), (2, 1, 2, 1, 1))


def test_identity_blocks_give_identity():
    s = BlockSystem(LAYOUT)
    for f in LAYOUT.fields:
        s.add(f, f, sp.identity(LAYOUT.size(f)))
    np.testing.assert_array_equal(monolithic(s).toarray(), np.eye(7))


def test_off_diagonal_block_placement_and_transpose():
    s = BlockSystem(LAYOUT)
    B = np.array([[1.0, 2.0]])
    s.add("pP", "d", B)
    s.add("u", "phi", np.array([[3.0], [4.0]]))
    A = monolithic(s).toarray()
    assert A[5, 3] == 1.0 and A[5, 4] == 2.0
    assert A[0, 6] == 3.0 and A[1, 6] == 4.0
    np.testing.assert_array_equal(monolithic(s.transpose()).toarray(), A.T)


def test_block_dimension_mismatch():
    s = BlockSystem(LAYOUT)
    s.add("u", "u", np.eye(3))
    with pytest.raises(ValueError, match="shape"):
        monolithic(s)


def test_small_solves():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(solve_direct(sp.identity(3), b), b)
    np.testing.assert_allclose(solve_direct(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0])), [1, 1])


def test_random_spd_and_saddle_residuals():
    rng = np.random.default_rng(3)
    G = rng.standard_normal((50, 50))
    A = G @ G.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = solve_direct(sp.csr_matrix(A), b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10
    # Stokes-like saddle point: [[K, B^T], [B, 0]]
    K = A[:40, :40]
    B = rng.standard_normal((10, 40))
    S = sp.bmat([[sp.csr_matrix(K), sp.csr_matrix(B.T)], [sp.csr_matrix(B), None]]).tocsr()
    x = solve_direct(S, b)
    assert np.linalg.norm(S @ x - b) / np.linalg.norm(b) <= 1e-10


def test_zero_pivot_reports_index():
    A = sp.csr_matrix(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]))
    with pytest.raises(SolverError) as info:
        Factorization(A)
    assert info.value.pivot == 1


def test_numerically_singular_matrix_detected():
    v = np.array([1.0, 2.0, 3.0])
    A = sp.csr_matrix(np.outer(v, v) + np.outer([1.0, 0.0, 1.0], [0.0, 1.0, 1.0]))
    with pytest.raises(SolverError, match="pivot") as info:
        Factorization(A)
    assert info.value.pivot in (0, 1, 2)


def test_equilibration_handles_wild_scaling():
    rng = np.random.default_rng(5)
    D = np.diag(10.0 ** rng.uniform(-12, 12, 30))
    M = rng.standard_normal((30, 30)) + 30 * np.eye(30)
    A = sp.csr_matrix(D @ M @ D)
    r, c = equilibrate(sp.csc_matrix(A))
    scaled = np.abs(np.diag(r) @ A.toarray() @ np.diag(c))
    np.testing.assert_allclose(scaled.max(axis=0), 1.0)
    b = A @ np.ones(30)
    x = solve_direct(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_dirichlet_elimination():
    A = sp.csr_matrix(np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]]))
    K, rhs = apply_dirichlet((A, np.zeros(3)), DofSet([0, 2], [0.0, 1.0]))
    np.testing.assert_allclose(solve_direct(K, rhs), [0.0, 0.5, 1.0])
    assert abs(K - K.T).max() == 0
    K, rhs = apply_dirichlet((A, np.ones(3)), DofSet([0, 1, 2], [4.0, 5.0, 6.0]))
    np.testing.assert_array_equal(K.toarray(), np.eye(3))
    np.testing.assert_array_equal(solve_direct(K, rhs), [4.0, 5.0, 6.0])
    K, rhs = apply_dirichlet((A, np.ones(3)), DofSet.empty())
    np.testing.assert_array_equal(K.toarray(), A.toarray())


def test_eliminated_operator_reuses_factorization():
    n = 20
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()
    op = EliminatedOperator(A, np.array([0, n - 1]))
    for top in (1.0, 3.0):
        x = op.solve(np.zeros(n), np.array([0.0, top]))
        np.testing.assert_allclose(x, np.linspace(0, top, n), atol=1e-12)


def test_matrix_market_export(tmp_path):
    A = sp.csr_matrix(np.array([[1.0, 0.0], [2.5, -1.0]]))
    path = tmp_path / "a.mtx"
    write_matrix_market(A, path)
    np.testing.assert_array_equal(scipy.io.mmread(str(path)).toarray(), A.toarray())
