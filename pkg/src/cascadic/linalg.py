"""Sparse storage helpers, SPD solves and a dense saddle-point oracle.

``SpdSolver`` is the "exact" inverse of an SPD matrix that every Schur
complement iteration leans on: a sparse Cholesky factorization (CHOLMOD,
through ``cholespy``) followed by iterative refinement until the relative
residual is below ``EXACT_TOL``.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    from cholespy import CholeskySolverD, MatrixType
except ImportError:  # pragma: no cover - exercised only without cholespy
    CholeskySolverD = None

log = logging.getLogger(__name__)

EXACT_TOL = 1e-12
ORACLE_MAX_DOFS = 2000


class NotSpd(np.linalg.LinAlgError):
    pass


class Stagnation(RuntimeError):
    pass


class DimensionMismatch(ValueError):
    pass


class TooLarge(ValueError):
    pass


def as_sparse(M) -> sp.csr_matrix:
    """CSR copy with sorted, unique column indices."""
    M = sp.csr_matrix(M, dtype=float)
    M.sum_duplicates()
    M.sort_indices()
    return M


def matvec(M, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if M.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"matrix has {M.shape[1]} columns, vector has {x.shape[0]} entries")
    return M @ x


def matvec_transpose(M, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if M.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"matrix has {M.shape[0]} rows, vector has {x.shape[0]} entries")
    return M.T @ x


def dot(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"{x.shape} vs {y.shape}")
    return float(x @ y)


class SpdSolver:
    """Solve ``M x = b`` for SPD ``M`` to relative residual ``tol``.

    ``blocks`` > 1 solves with ``diag(M, ..., M)`` using one factorization,
    which is how the two-component vector Laplacian is handled.

    ``method`` is ``"cholesky"`` (CHOLMOD, or SuperLU without pivoting
    when cholespy is missing), ``"cg"`` (Jacobi-preconditioned conjugate
    gradients) or ``"auto"``.

    When the matrix is badly conditioned a residual of ``tol * |b|`` can
    sit below what floating point can certify; refinement then stops at
    the round-off floor ``floor_factor * eps * |M| |x|`` instead of
    raising.
    """

    def __init__(self, matrix, tol: float = EXACT_TOL, method: str = "auto",
                 blocks: int = 1, max_refine: int = 6, max_iter: int = 20000,
                 floor_factor: float = 64.0):
        self.M = as_sparse(matrix)
        n, m = self.M.shape
        if n != m:
            raise DimensionMismatch(f"SPD matrix must be square, got {self.M.shape}")
        self.n = n
        self.tol = tol
        self.blocks = blocks
        self.max_refine = max_refine
        self.max_iter = max_iter
        self.floor_factor = floor_factor
        self._norm = float(abs(self.M).sum(axis=1).max()) if self.M.nnz else 0.0
        if method == "auto":
            method = "cholesky"
        self.method = method
        diag = self.M.diagonal()
        if np.any(diag <= 0.0):
            raise NotSpd("nonpositive diagonal entry")
        self._diag = diag
        self._is_diagonal = self.M.nnz == n and np.all(self.M.indices == np.arange(n))
        self._factor = None
        if method == "cholesky" and not self._is_diagonal:
            self._factorize()
        elif method not in ("cholesky", "cg"):
            raise ValueError(f"unknown method {method!r}")

    def _factorize(self):
        if CholeskySolverD is not None:
            coo = self.M.tocoo()
            try:
                self._factor = CholeskySolverD(
                    self.n, coo.row.astype(np.int32), coo.col.astype(np.int32),
                    np.ascontiguousarray(coo.data), MatrixType.COO)
            except ValueError as exc:
                raise NotSpd(str(exc)) from exc
            self._backend = "cholmod"
        else:
            lu = spla.splu(self.M.tocsc(), permc_spec="MMD_AT_PLUS_A",
                           diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
            if np.any(lu.U.diagonal() <= 0.0):
                raise NotSpd("nonpositive pivot")
            self._factor = lu
            self._backend = "superlu"

    def _apply_factor(self, rhs: np.ndarray) -> np.ndarray:
        if self._is_diagonal:
            return rhs / self._diag[:, None]
        if self._backend == "cholmod":
            out = np.zeros_like(rhs)
            self._factor.solve(np.ascontiguousarray(rhs), out)
            return out
        return self._factor.solve(rhs)

    def _cg(self, rhs: np.ndarray) -> np.ndarray:
        out = np.empty_like(rhs)
        prec = spla.LinearOperator(self.M.shape, matvec=lambda v: v / self._diag)
        for c in range(rhs.shape[1]):
            b = rhs[:, c]
            x, info = spla.cg(self.M, b, rtol=0.1 * self.tol, atol=0.0,
                              maxiter=self.max_iter, M=prec)
            if info > 0:
                raise Stagnation(f"CG did not reach {self.tol} in {self.max_iter} iterations")
            out[:, c] = x
        return out

    def _solve_columns(self, rhs: np.ndarray) -> np.ndarray:
        if self.method == "cg" and not self._is_diagonal:
            return self._cg(rhs)
        x = self._apply_factor(rhs)
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            return x
        prev = np.inf
        for _ in range(self.max_refine + 1):
            r = rhs - self.M @ x
            rnorm = np.linalg.norm(r)
            if rnorm <= self.tol * bnorm:
                return x
            floor = self.floor_factor * np.finfo(float).eps * self._norm * np.linalg.norm(x)
            if rnorm <= floor or rnorm > 0.5 * prev:
                break
            prev = rnorm
            x = x + self._apply_factor(r)
        r = np.linalg.norm(rhs - self.M @ x)
        floor = self.floor_factor * np.finfo(float).eps * self._norm * np.linalg.norm(x)
        if r > max(self.tol * bnorm, floor):
            raise Stagnation(f"relative residual {r / bnorm:.3e} above {self.tol:.1e}")
        if r > self.tol * bnorm:
            log.debug("solve stopped at round-off floor: %.3e", r / bnorm)
        return x

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        expected = self.n * self.blocks
        if b.shape[0] != expected:
            raise DimensionMismatch(f"rhs has {b.shape[0]} entries, expected {expected}")
        if self.blocks == 1 and b.ndim == 1:
            return self._solve_columns(b[:, None])[:, 0]
        cols = b.reshape(self.blocks, self.n).T
        return self._solve_columns(np.ascontiguousarray(cols)).T.reshape(-1)


def spd_solve(solver: SpdSolver, b) -> np.ndarray:
    return solver.solve(b)


def mean_zero(p: np.ndarray, mass_of_one: np.ndarray) -> np.ndarray:
    """Remove the constant component of ``p`` in the mass inner product.

    ``mass_of_one`` is ``Mp @ 1``, so ``mass_of_one @ p`` is the integral of p.
    """
    return p - (mass_of_one @ p) / mass_of_one.sum()


def dense_oracle_solve(A, B, Mp, f_vec, g_vec):
    """Reference solution of ``A u + B^T p = f, B u = g`` by dense elimination.

    The pressure is fixed by the mean-zero constraint ``(Mp 1)^T p = 0``,
    appended as a Lagrange multiplier row. Test use only.
    """
    nv, npr = A.shape[0], B.shape[0]
    if nv + npr > ORACLE_MAX_DOFS:
        raise TooLarge(f"{nv + npr} dofs exceed the dense oracle cap {ORACLE_MAX_DOFS}")
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    B = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
    Mp = Mp.toarray() if sp.issparse(Mp) else np.asarray(Mp, dtype=float)
    c = Mp @ np.ones(npr)
    K = np.zeros((nv + npr + 1, nv + npr + 1))
    K[:nv, :nv] = A
    K[:nv, nv:nv + npr] = B.T
    K[nv:nv + npr, :nv] = B
    K[nv:nv + npr, -1] = c
    K[-1, nv:nv + npr] = c
    rhs = np.concatenate([f_vec, g_vec, [0.0]])
    sol = np.linalg.solve(K, rhs)
    return sol[:nv], sol[nv:nv + npr]
