from functools import lru_cache

import numpy as np
import pytest

from cascadic.fem import assemble_stokes, builtin_solution
from cascadic.linalg import dense_oracle_solve
from cascadic.mesh import build_hierarchy


@lru_cache(maxsize=None)
def hierarchy(domain, levels, kappa=None):
    from cascadic.mesh import RefinementRule
    rule = RefinementRule.graded(kappa) if kappa is not None else None
    return tuple(build_hierarchy(domain, levels, rule))


@lru_cache(maxsize=None)
def disc_at(domain, pair, level):
    mesh = hierarchy(domain, level)[-1]
    return assemble_stokes(mesh, pair, builtin_solution(domain))


@lru_cache(maxsize=None)
def dense_parts(domain, pair, level):
    """Dense oracle data: discrete solution and the Mp-self-adjoint Schur matrix."""
    d = disc_at(domain, pair, level)
    u_h, p_h = dense_oracle_solve(d.A, d.B, d.Mp, d.f_vec, d.g_vec)
    A = d.A.toarray()
    B = d.B.toarray()
    Mp = d.Mp.toarray()
    S = np.linalg.solve(Mp, B @ np.linalg.solve(A, B.T))
    return u_h, p_h, A, B, Mp, S


def dense_spectrum(d):
    """Extreme eigenvalues of Mp^-1 B A^-1 B^T on mean-zero pressures (dense)."""
    from scipy.linalg import eigh
    B = d.B.toarray()
    A = d.A.toarray()
    Mp = d.Mp.toarray()
    S = B @ np.linalg.solve(A, B.T)
    lam = eigh(S, Mp, eigvals_only=True)
    # the constant pressure is the single zero mode
    lam = np.sort(lam)[1:]
    return np.sqrt(lam[0]), np.sqrt(lam[-1]), lam


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@lru_cache(maxsize=None)
def spectrum_at(domain, pair, level):
    from cascadic.solvers import estimate_spectrum
    return estimate_spectrum(disc_at(domain, pair, level))


@lru_cache(maxsize=None)
def table_run(preset, method, **overrides):
    """Reports of one preset cascade (cached for the whole session)."""
    from dataclasses import replace
    from cascadic.cascade import run_cascade
    from cascadic.cli import PRESETS
    from cascadic.solvers import Method, SolverKind
    p = PRESETS[preset]
    method = Method(method)
    kind = SolverKind(method, p.alpha) if method is Method.UZAWA else SolverKind(method)
    return tuple(run_cascade(replace(p.config, solver=kind, **overrides)))


# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
