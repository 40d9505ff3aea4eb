"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The convergence-table runs are cached for the session, so the level-9
graded L-shape runs (a few minutes each) happen once.
"""
import math
from contextlib import contextmanager

import numpy as np
import pytest

from cascadic.cascade import level_change_threshold
from cascadic.cli import PRESETS
from cascadic.fem import ElementPair
from cascadic.linalg import dense_oracle_solve
from cascadic.mesh import mesh_size
from cascadic.solvers import (SolverKind, estimate_spectrum, inner, iterate, project,
                              solve_schur_direct)

from conftest import ACCEPTANCE, dense_parts, dense_spectrum, disc_at, table_run

TH, P0 = ElementPair.TAYLOR_HOOD, ElementPair.P2P0
SOLVERS = ("uzawa", "ug", "ucg")


@contextmanager
def criterion(n, title):
    """Record and print the outcome of criterion ``n``; failures still raise."""
    notes = []
    try:
        yield notes
    except BaseException as exc:
        detail = "; ".join(notes + [str(exc).splitlines()[0] if str(exc) else type(exc).__name__])
        ACCEPTANCE[n] = (title, False, detail)
        print(f"criterion {n} FAIL: {title} ({detail})")
        raise
    ACCEPTANCE[n] = (title, True, "; ".join(notes))
    print(f"criterion {n} PASS: {title}")


def _failures(checks):
    bad = [msg for ok, msg in checks if not ok]
    assert not bad, "; ".join(bad)


def _slope(ks, its):
    # least-squares slope of iteration count against level
    slope = np.polyfit(np.asarray(ks, float), np.asarray(its, float), 1)[0]
    return round(float(slope), 9)


def _mnorm(d, p):
    return math.sqrt(max(inner(d, p, p), 0.0))


def test_criterion_1_square_taylor_hood_table():
    caps = {"uzawa": 8, "ug": 4, "ucg": 3}
    with criterion(1, "square Taylor-Hood table, rates and iteration envelope") as notes:
        checks = []
        for m in SOLVERS:
            reps = table_run("square-th", m)
            last = reps[-1]
            late = [r for r in reps if r.k >= 5]
            its = [r.iterations for r in late]
            notes.append(f"{m}: rate_u={last.rate_u:.3f} rate_p={last.rate_p:.3f} iters={its}")
            checks += [
                (last.k == 8, f"{m} finest level {last.k}"),
                (1.9 <= last.rate_u <= 2.1, f"{m} rate_u {last.rate_u:.3f} not in [1.9, 2.1]"),
                (1.85 <= last.rate_p <= 2.1, f"{m} rate_p {last.rate_p:.3f} not in [1.85, 2.1]"),
                (max(its) <= caps[m], f"{m} iterations {its} exceed {caps[m]}"),
                (_slope([r.k for r in late], its) <= 0.0, f"{m} iterations {its} trend upward"),
            ]
        _failures(checks)


def test_criterion_2_square_p2p0_table():
    with criterion(2, "square P2-P0 table, rates and iteration bound") as notes:
        checks = []
        for m in SOLVERS:
            reps = table_run("square-p2p0", m)
            last = reps[-1]
            its = [r.iterations for r in reps]
            notes.append(f"{m}: rate_u={last.rate_u:.3f} rate_p={last.rate_p:.3f}")
            checks += [
                (last.k == 8, f"{m} finest level {last.k}"),
                (0.9 <= last.rate_u <= 1.05, f"{m} rate_u {last.rate_u:.3f} not in [0.9, 1.05]"),
                (last.rate_p >= 0.85, f"{m} rate_p {last.rate_p:.3f} below 0.85"),
                (max(its) <= 16, f"{m} iterations {its} exceed 16"),
            ]
        _failures(checks)


def test_criterion_3_lshape_uniform_table():
    with criterion(3, "uniform L-shape table, singular rate and iterations") as notes:
        checks = []
        for m in ("ug", "ucg"):
            reps = table_run("lshape-uniform", m)
            by_k = {r.k: r for r in reps}
            notes.append(f"{m}: rate_u k7={by_k[7].rate_u:.3f} k8={by_k[8].rate_u:.3f}")
            for k in (7, 8):
                rate = by_k[k].rate_u
                checks.append((abs(rate - 0.67) <= 0.08, f"{m} rate_u {rate:.3f} at k={k}"))
            its = [r.iterations for r in reps if r.k >= 5]
            checks.append((max(its) <= 3, f"{m} iterations {its} exceed 3"))
        _failures(checks)


@pytest.mark.slow
def test_criterion_4_lshape_graded_table():
    with criterion(4, "graded L-shape table, recovered rates and iterations") as notes:
        checks = []
        for m in ("ug", "ucg"):
            reps = table_run("lshape-graded", m)
            last = reps[-1]
            its = [r.iterations for r in reps]
            notes.append(f"{m}: rate_u={last.rate_u:.3f} rate_p={last.rate_p:.3f} iters={its}")
            checks += [
                (last.k == 9, f"{m} finest level {last.k}"),
                (1.8 <= last.rate_u <= 2.0, f"{m} rate_u {last.rate_u:.3f} not in [1.8, 2.0]"),
                (1.9 <= last.rate_p <= 2.25, f"{m} rate_p {last.rate_p:.3f} not in [1.9, 2.25]"),
                (max(its) <= 13, f"{m} iterations {its} exceed 13"),
            ]
        _failures(checks)


def test_criterion_5_single_level_needs_more_iterations():
    floors = {"uzawa": 15, "ug": 10, "ucg": 7}
    cfg = PRESETS["square-th"].config
    with criterion(5, "level 8 alone costs more than the cascade") as notes:
        d = disc_at("square", TH, 8)
        tol = level_change_threshold(cfg, 8, mesh_size(d.mesh), d.dofs.complexity)
        checks = []
        for m in SOLVERS:
            kind = SolverKind(m, PRESETS["square-th"].alpha) if m == "uzawa" else SolverKind(m)
            _, steps, ok = iterate(d, kind, tol, max_iter=500, min_steps=1)
            cascade = table_run("square-th", m)[-1].iterations
            notes.append(f"{m}: alone {steps} vs cascade {cascade}")
            checks += [
                (ok, f"{m} did not converge on level 8 alone"),
                (steps > cascade, f"{m} alone {steps} not above cascade {cascade}"),
                (steps >= floors[m], f"{m} alone {steps} below {floors[m]}"),
            ]
        _failures(checks)


ORACLE_CASES = [("square", TH, 3), ("square", P0, 3), ("lshape", TH, 3), ("lshape", P0, 2)]


def test_criterion_6_oracle_identities():
    with criterion(6, "error identities and sandwich bounds at every iterate"):
        for case in ORACLE_CASES:
            d = disc_at(*case)
            u_h, p_h, A, B, _, S = dense_parts(*case)
            m, M, _ = dense_spectrum(d)
            for kind in (SolverKind.uzawa(1.0), SolverKind.ug(), SolverKind.ucg()):
                states = []
                iterate(d, kind, 1e-11, max_iter=60, callback=states.append)
                for s in states:
                    e = p_h - s.p
                    w = np.linalg.solve(A, B.T @ e)
                    assert _mnorm(d, s.q - project(d, S @ e)) <= 1e-9, (case, kind, "q = S e")
                    assert np.abs(s.u - u_h - w).max() <= 1e-9, (case, kind, "u - u_h = A^-1 B^T e")
                    # |w|^2 = b(w, e) for the velocity attached to a pressure
                    if w @ A @ w > 0:
                        assert abs(w @ A @ w - e @ B @ w) <= 1e-10 * (w @ A @ w), (case, kind)
                    ep = _mnorm(d, e)
                    eu = math.sqrt(max((s.u - u_h) @ A @ (s.u - u_h), 0.0))
                    sl = 1e-9 * max(s.q_norm, 1e-12)
                    assert s.q_norm / M ** 2 - sl <= ep <= s.q_norm / m ** 2 + sl, (case, kind)
                    assert m / M ** 2 * s.q_norm - sl <= eu <= M / m ** 2 * s.q_norm + sl, \
                        (case, kind)


def test_criterion_7_ug_orthogonality_and_ucg_termination():
    with criterion(7, "UG residual orthogonality and UCG finite termination") as notes:
        for case in ORACLE_CASES:
            d = disc_at(*case)
            states = []
            iterate(d, SolverKind.ug(), 1e-11, max_iter=60, callback=states.append)
            for a, b in zip(states, states[1:]):
                assert abs(inner(d, a.q, b.q)) <= 1e-10 * a.q_norm * b.q_norm, case
        d = disc_at("square", TH, 2)
        n = d.dofs.n_pressure
        state, steps, ok = iterate(d, SolverKind.ucg(), 1e-10, max_iter=n - 1)
        notes.append(f"UCG: {steps} steps, n_pressure={n}")
        assert ok and state.q_norm <= 1e-10 and steps <= n - 1


def test_criterion_8_uzawa_stability_window():
    with criterion(8, "Uzawa diverges just above 2/M^2 and converges at 1") as notes:
        d = disc_at("square", TH, 3)
        _, M = estimate_spectrum(d)
        alpha = 1.05 * 2.0 / M ** 2
        norms = []
        iterate(d, SolverKind.uzawa(alpha), 0.0, max_iter=50,
                callback=lambda s: norms.append(s.q_norm))
        notes.append(f"M={M:.4f}, alpha0={alpha:.4f}")
        assert any(b > a for a, b in zip(norms, norms[1:])), "residual decreased monotonically"
        _, steps, ok = iterate(d, SolverKind.uzawa(1.0), 1e-10, max_iter=500)
        assert ok, f"alpha0 = 1 did not converge in {steps} steps"


def test_criterion_9_dense_oracle_equivalence():
    with criterion(9, "Schur CG agrees with the dense saddle-point solve"):
        for dom in ("square", "lshape"):
            for pair in (TH, P0):
                for k in (2, 3):
                    d = disc_at(dom, pair, k)
                    u, p = solve_schur_direct(d)
                    u_h, p_h = dense_oracle_solve(d.A, d.B, d.Mp, d.f_vec, d.g_vec)
                    assert np.abs(u - u_h).max() <= 1e-8, (dom, pair, k)
                    assert np.abs(p - p_h).max() <= 1e-8, (dom, pair, k)
