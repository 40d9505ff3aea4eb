"""Fixed-level Schur complement iterations: Uzawa, Uzawa gradient, Uzawa CG.

Each iteration costs one exact velocity solve. The pressure residual is
represented in the pressure space (``q = Mp^{-1}(B u - g)``, mean-zero),
and every pressure inner product is the L2 one, ``(p, q) = p^T Mp q``.
In that inner product the Schur complement ``Mp^{-1} B A^{-1} B^T`` is
self-adjoint and positive definite on mean-zero pressures.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .fem import StokesDiscretization
from .linalg import mean_zero

_TINY = 1e-300


class ZeroCurvature(ArithmeticError):
    """Step denominator (dir, q)_S is not positive."""


class ConvergenceFailure(RuntimeError):
    pass


class Method(str, enum.Enum):
    UZAWA = "uzawa"
    UG = "ug"
    UCG = "ucg"


@dataclass(frozen=True)
class SolverKind:
    """Level solver choice; ``alpha0`` is only used by plain Uzawa."""

    method: Method = Method.UCG
    alpha0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.method is Method.UZAWA and not self.alpha0 > 0.0:
            raise ValueError("Uzawa needs a positive relaxation parameter")

    @classmethod
    def uzawa(cls, alpha0: float) -> "SolverKind":
        return cls(Method.UZAWA, alpha0)

    @classmethod
    def ug(cls) -> "SolverKind":
        return cls(Method.UG)

    @classmethod
    def ucg(cls) -> "SolverKind":
        return cls(Method.UCG)

    def __str__(self):
        if self.method is Method.UZAWA:
            return f"uzawa(alpha={self.alpha0:g})"
        return self.method.value


@dataclass(frozen=True)
class IterState:
    """Iterate after ``j`` residual evaluations.

    ``u`` is u_j, ``p`` is p_{j-1} (the pressure that produced u_j), ``q``
    is the residual q_j and ``d`` the UCG search direction d_j.
    """

    u: np.ndarray
    p: np.ndarray
    q: np.ndarray
    q_norm: float
    d: np.ndarray | None = None
    j: int = 1
    alpha: float | None = None
    beta: float | None = None


def inner(disc: StokesDiscretization, p: np.ndarray, q: np.ndarray) -> float:
    return float(p @ (disc.Mp @ q))


def project(disc: StokesDiscretization, p: np.ndarray) -> np.ndarray:
    return mean_zero(p, disc.mass_of_one)


def pressure_residual(disc: StokesDiscretization, u: np.ndarray) -> np.ndarray:
    """q with (q, r) = b(u, r) - <g, r> for all r, made mean-zero."""
    return project(disc, disc.pressure_solver.solve(disc.B @ u - disc.g_vec))


def initial_step(disc: StokesDiscretization, p0: np.ndarray | None = None,
                 kind: SolverKind | None = None) -> IterState:
    """Velocity solve for a given pressure and the first residual."""
    if p0 is None:
        p0 = np.zeros(disc.dofs.n_pressure)
    p0 = project(disc, np.asarray(p0, dtype=float))
    u = disc.velocity_solver.solve(disc.f_vec - disc.B.T @ p0)
    q = pressure_residual(disc, u)
    d = q.copy() if kind is not None and kind.method is Method.UCG else None
    return IterState(u, p0, q, math.sqrt(max(inner(disc, q, q), 0.0)), d, 1)


def apply_schur(disc: StokesDiscretization, q: np.ndarray) -> np.ndarray:
    w = disc.velocity_solver.solve(disc.B.T @ q)
    return project(disc, disc.pressure_solver.solve(disc.B @ w))


def schur_solution_map(disc: StokesDiscretization, q: np.ndarray) -> np.ndarray:
    """w = A^{-1} B^T q, the velocity attached to a pressure."""
    return disc.velocity_solver.solve(disc.B.T @ q)


def step(disc: StokesDiscretization, state: IterState, kind: SolverKind) -> IterState:
    """One Uzawa, UG or UCG iteration: returns (u_{j+1}, p_j, q_{j+1}, ...)."""
    q = state.q
    direction = state.d if kind.method is Method.UCG else q
    if direction is None:
        raise ValueError("UCG state has no search direction; build it with kind=UCG")
    h = -disc.velocity_solver.solve(disc.B.T @ direction)
    qq = state.q_norm ** 2
    if kind.method is Method.UZAWA:
        alpha = kind.alpha0
    else:
        # (direction, q)_S = b(h, q) with a minus sign; b(v, r) = r^T B v
        curvature = -float(q @ (disc.B @ h))
        if curvature <= _TINY:
            raise ZeroCurvature(f"(d, q)_S = {curvature:.3e}")
        alpha = qq / curvature
    p = state.p + alpha * direction
    u = state.u + alpha * h
    # b(u + alpha h, .) - g = (b(u, .) - g) + alpha b(h, .): updating q this
    # way avoids the cancellation in B u - g once the residual is small
    q_new = project(disc, q + alpha * disc.pressure_solver.solve(disc.B @ h))
    q_norm = math.sqrt(max(inner(disc, q_new, q_new), 0.0))
    beta = None
    d = None
    if kind.method is Method.UCG:
        beta = q_norm ** 2 / qq if qq > _TINY else 0.0
        d = project(disc, q_new + beta * direction)
    return IterState(u, p, q_new, q_norm, d, state.j + 1, alpha, beta)


def residual_norm(state: IterState) -> float:
    """||q_j|| in L2; bounds the iteration error from both sides."""
    return state.q_norm


def iterate(disc: StokesDiscretization, kind: SolverKind, tol: float,
            p0: np.ndarray | None = None, max_iter: int = 500,
            min_steps: int = 0, callback=None):
    """Run ``kind`` until ``||q|| <= tol``; returns (state, steps, converged)."""
    state = initial_step(disc, p0, kind)
    if callback is not None:
        callback(state)
    steps = 0
    while steps < max_iter and (steps < min_steps or state.q_norm > tol):
        if state.q_norm == 0.0:
            break
        state = step(disc, state, kind)
        steps += 1
        if callback is not None:
            callback(state)
    return state, steps, state.q_norm <= tol


def _start_vector(n: int) -> np.ndarray:
    # deterministic, non-constant; a projected all-ones vector would vanish
    return np.cos(0.61803398875 * np.arange(1, n + 1) ** 1.5)


def _extreme_ritz(alphas, betas, b):
    # only the two extreme Ritz pairs; residual = b * |last eigvec entry|
    a = np.array(alphas)
    e = np.array(betas)
    if len(a) == 1:
        return a[0], abs(b), a[0], abs(b)
    out = []
    for i in (0, len(a) - 1):
        theta, vec = eigh_tridiagonal(a, e, select="i", select_range=(i, i))
        out += [theta[0], abs(b * vec[-1, 0])]
    return tuple(out)


def estimate_spectrum(disc: StokesDiscretization, tol: float = 1e-6,
                      max_iter: int = 2000):
    """(m_h, M_h): square roots of the extreme Schur eigenvalues.

    Lanczos in the Mp inner product on mean-zero pressures, with full
    reorthogonalization. Stops when both extreme Ritz pairs have residual
    below ``tol`` times their Ritz value, which bounds the relative
    eigenvalue error by ``tol``.
    """
    n = disc.dofs.n_pressure
    dim = n - 1
    if dim < 1:
        raise ConvergenceFailure("no mean-zero pressures")
    v = project(disc, _start_vector(n))
    v /= math.sqrt(inner(disc, v, v))
    steps = min(max_iter, dim)
    V = np.empty((min(steps, 64), n))
    V[0] = v
    alphas: list[float] = []
    betas: list[float] = []
    for k in range(steps):
        w = apply_schur(disc, V[k])
        alphas.append(inner(disc, V[k], w))
        for _ in range(2):
            w = w - V[:k + 1].T @ (V[:k + 1] @ (disc.Mp @ w))
        w = project(disc, w)
        b = math.sqrt(max(inner(disc, w, w), 0.0))
        lo, res_lo, hi, res_hi = _extreme_ritz(alphas, betas, b)
        exhausted = b <= 1e-14 * hi or k + 1 == dim
        done = exhausted or (lo > 0.0 and res_lo <= tol * lo and res_hi <= tol * hi)
        if done:
            if lo <= 0.0:
                raise ConvergenceFailure("Schur complement singular on mean-zero pressures")
            return math.sqrt(lo), math.sqrt(hi)
        if k + 1 == len(V):
            V = np.vstack([V, np.empty((min(len(V), steps - len(V)), n))])
        V[k + 1] = w / b
        betas.append(b)
    raise ConvergenceFailure(f"Lanczos did not converge in {max_iter} steps")


def solve_schur_direct(disc: StokesDiscretization, rtol: float = 1e-12,
                       max_iter: int | None = None):
    """Discrete solution (u_h, p_h) via UCG on the Schur system, p_h mean-zero."""
    kind = SolverKind.ucg()
    state = initial_step(disc, None, kind)
    tol = rtol * max(state.q_norm, 1.0)
    max_iter = max_iter or 10 * disc.dofs.n_pressure + 100
    for _ in range(max_iter):
        if state.q_norm <= tol:
            break
        state = step(disc, state, kind)
    else:
        raise ConvergenceFailure("Schur CG did not reach the requested tolerance")
    return state.u, state.p


__all__ = [
    "ConvergenceFailure", "IterState", "Method", "SolverKind", "ZeroCurvature",
    "apply_schur", "estimate_spectrum", "initial_step", "inner", "iterate",
    "project", "residual_norm", "schur_solution_map", "solve_schur_direct", "step",
]
