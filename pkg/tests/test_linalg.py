import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cascadic.fem import ElementPair, assemble_stokes, builtin_solution
from cascadic.linalg import (DimensionMismatch, NotSpd, SpdSolver, Stagnation, TooLarge,
                             as_sparse, dense_oracle_solve, dot, matvec, matvec_transpose,
                             spd_solve)
from cascadic.mesh import build_initial_mesh

from conftest import disc_at


def test_identity_and_diagonal():
    b = np.array([3.0, -1.0, 2.5])
    assert np.array_equal(spd_solve(SpdSolver(sp.identity(3)), b), b)
    x = spd_solve(SpdSolver(sp.diags([1.0, 2.0, 4.0])), np.array([1.0, 2.0, 4.0]))
    assert np.array_equal(x, np.ones(3))


@pytest.mark.parametrize("method", ["cholesky", "cg"])
def test_random_spd_against_dense(method, rng):
    M = rng.standard_normal((20, 20))
    A = M.T @ M + np.eye(20)
    b = rng.standard_normal(20)
    x = SpdSolver(A, method=method).solve(b)
    assert np.allclose(x, np.linalg.solve(A, b), rtol=0, atol=1e-10 * np.abs(x).max())


def test_not_spd():
    with pytest.raises(NotSpd):
        SpdSolver(sp.diags([1.0, -1.0]))
    with pytest.raises(NotSpd):
        SpdSolver(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_stagnation_when_capped():
    n = 200
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    with pytest.raises(Stagnation):
        SpdSolver(A, method="cg", max_iter=3).solve(np.ones(n))


def test_bad_shapes():
    with pytest.raises(DimensionMismatch):
        SpdSolver(np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        SpdSolver(sp.identity(3)).solve(np.ones(4))
    M = sp.random(4, 3, density=0.5, random_state=1)
    with pytest.raises(DimensionMismatch):
        matvec(M, np.ones(4))
    with pytest.raises(DimensionMismatch):
        matvec_transpose(M, np.ones(3))
    with pytest.raises(DimensionMismatch):
        dot(np.ones(2), np.ones(3))


def test_matvec_helpers(rng):
    x = rng.standard_normal(5)
    assert np.array_equal(matvec(sp.identity(5, format="csr"), x), x)
    M = sp.random(10, 7, density=0.4, random_state=3, format="csr")
    y = rng.standard_normal(10)
    explicit = sp.csr_matrix(M.toarray().T)
    assert np.allclose(matvec_transpose(M, y), explicit @ y, rtol=0, atol=1e-14)
    e = np.eye(4)
    assert all(dot(e[i], e[j]) == float(i == j) for i in range(4) for j in range(4))


def test_csr_invariants():
    M = as_sparse(sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [2, 2, 0])), shape=(2, 3)))
    assert M.has_sorted_indices
    assert M[0, 2] == 3.0 and M.nnz == 2


def test_block_solve_matches_blockdiag(rng):
    d = disc_at("square", ElementPair.TAYLOR_HOOD, 3)
    b = rng.standard_normal(d.dofs.n_velocity)
    x = d.velocity_solver.solve(b)
    assert np.linalg.norm(d.A @ x - b) <= 1e-12 * np.linalg.norm(b)


@pytest.mark.parametrize("domain", ["square", "lshape"])
def test_right_inverse_up_to_level_six(domain, rng):
    for k in range(1, 7):
        d = disc_at(domain, ElementPair.TAYLOR_HOOD, k)
        b = rng.standard_normal(d.dofs.n_velocity)
        x = spd_solve(d.velocity_solver, b)
        assert np.linalg.norm(d.A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_linearity_and_symmetry_transfer(rng):
    d = disc_at("lshape", ElementPair.TAYLOR_HOOD, 4)
    S = d.velocity_solver
    b1, b2 = rng.standard_normal((2, d.dofs.n_velocity))
    lhs = S.solve(2.5 * b1 - 0.75 * b2)
    rhs = 2.5 * S.solve(b1) - 0.75 * S.solve(b2)
    assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()
    q, r = rng.standard_normal((2, d.dofs.n_pressure))
    bq, br = d.B.T @ q, d.B.T @ r
    a, b = dot(S.solve(bq), br), dot(S.solve(br), bq)
    assert abs(a - b) <= 1e-10 * max(abs(a), 1.0)


def test_oracle_homogeneous():
    d = disc_at("square", ElementPair.TAYLOR_HOOD, 2)
    u, p = dense_oracle_solve(d.A, d.B, d.Mp, np.zeros(d.dofs.n_velocity),
                              np.zeros(d.dofs.n_pressure))
    assert np.abs(u).max() == 0.0 and np.abs(p).max() == 0.0


def test_oracle_back_substitution():
    d = assemble_stokes(build_initial_mesh("square"), "taylor-hood", builtin_solution("square"))
    u, p = dense_oracle_solve(d.A, d.B, d.Mp, d.f_vec, d.g_vec)
    assert np.linalg.norm(d.A @ u + d.B.T @ p - d.f_vec) <= 1e-10
    assert np.linalg.norm(d.B @ u - d.g_vec) <= 1e-10
    assert abs(d.mass_of_one @ p) <= 1e-14


def test_oracle_size_cap():
    d = disc_at("square", ElementPair.TAYLOR_HOOD, 5)
    with pytest.raises(TooLarge):
        dense_oracle_solve(d.A, d.B, d.Mp, d.f_vec, d.g_vec)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(-1, 1)),
       arrays(np.float64, 8, elements=st.floats(-10, 10)))
def test_random_spd_property(M, b):
    A = M.T @ M + 0.1 * np.eye(8)
    x = SpdSolver(A).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * max(np.linalg.norm(b), 1e-300) + 1e-300
