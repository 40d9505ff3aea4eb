"""Cascadic multilevel driver.

On every level the chosen Schur iteration runs until the pressure residual
drops below ``C_lc * h_k**s`` (or ``C_lc * N_k**-s``); the last pressure is
then embedded into the next, finer pressure space and the level is never
revisited.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fem import (DofSpace, ElementPair, ManufacturedSolution, assemble_stokes,
                  builtin_solution, energy_error, l2_pressure_error)
from .mesh import Domain, Mesh, RefinementRule, build_initial_mesh, mesh_size, refine
from .solvers import Method, SolverKind, estimate_spectrum, initial_step, step

log = logging.getLogger(__name__)


class HierarchyMismatch(ValueError):
    """Raised when two meshes are not consecutive refinement levels."""


class Complexity(str, enum.Enum):
    MESH_SIZE = "h"
    DOF_COUNT = "n"


@dataclass(frozen=True)
class CascadeConfig:
    domain: Domain = Domain.UNIT_SQUARE
    pair: ElementPair = ElementPair.TAYLOR_HOOD
    refinement: RefinementRule = field(default_factory=RefinementRule.uniform)
    solver: SolverKind = field(default_factory=SolverKind.ucg)
    levels: int = 8
    start_level: int = 1
    c_lc: float = 1.0 / 16.0
    s: float = 2.0
    complexity: Complexity = Complexity.MESH_SIZE
    max_iters_per_level: int = 500
    min_iters_per_level: int = 1
    check_alpha: bool = True

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain(self.domain))
        object.__setattr__(self, "pair", ElementPair(self.pair))
        object.__setattr__(self, "complexity", Complexity(self.complexity))
        if not self.c_lc > 0.0:
            raise ValueError("C_lc must be positive")
        if not self.s > 0.0:
            raise ValueError("s must be positive")
        if not self.levels >= self.start_level >= 1:
            raise ValueError("need levels >= start_level >= 1")


@dataclass
class LevelReport:
    k: int
    h: float
    n_dof: int
    iterations: int
    err_u: float
    err_p: float
    final_residual: float
    threshold: float
    capped: bool = False
    rate_u: float | None = None
    rate_p: float | None = None


def level_change_threshold(cfg: CascadeConfig, k: int, h_k: float, n_k: int) -> float:
    if cfg.complexity is Complexity.MESH_SIZE:
        return cfg.c_lc * h_k ** cfg.s
    return cfg.c_lc * float(n_k) ** (-cfg.s)


def _integral(p: np.ndarray, dofs: DofSpace) -> float:
    area = dofs.mesh.areas
    return float(np.sum(area * p[dofs.pressure_nodes].mean(axis=1)))


def prolong_pressure(p: np.ndarray, coarse: DofSpace, fine: DofSpace) -> np.ndarray:
    """Embed a coarse pressure into the nested fine pressure space.

    P0 children copy their parent's value. P1 values at new vertices are
    interpolated along the parent edge at the recorded split position, so
    graded split points are reproduced exactly. The result is mean-zero.
    """
    fmesh: Mesh = fine.mesh
    cmesh: Mesh = coarse.mesh
    if (fmesh.parent is None or fmesh.level != cmesh.level + 1
            or len(fmesh.parent) != 4 * cmesh.n_triangles or coarse.pair is not fine.pair):
        raise HierarchyMismatch("fine mesh is not a refinement of the coarse mesh")
    p = np.asarray(p, dtype=float)
    if coarse.pair is ElementPair.P2P0:
        out = p[fmesh.parent]
    else:
        out = np.empty(fmesh.n_vertices)
        out[:cmesh.n_vertices] = p
        e = fmesh.split_edges
        w = fmesh.split_ratio
        out[fmesh.split_vertex] = (1.0 - w) * p[e[:, 0]] + w * p[e[:, 1]]
    total_area = float(fmesh.areas.sum())
    return out - _integral(out, fine) / total_area


def compute_rates(reports: list[LevelReport],
                  complexity: Complexity = Complexity.MESH_SIZE) -> list[LevelReport]:
    """Fill rate fields in place, as convergence orders in h.

    With the mesh-size measure h halves per level, so the rate is
    log2(e_{k-1}/e_k). With the dof measure the rate is taken against
    N^{-1/2}, the h-equivalent for 2D meshes.
    """
    complexity = Complexity(complexity)
    for prev, cur in zip(reports, reports[1:]):
        if complexity is Complexity.MESH_SIZE:
            scale = math.log(prev.h / cur.h)
        else:
            scale = 0.5 * math.log(cur.n_dof / prev.n_dof)
        cur.rate_u = _rate(prev.err_u, cur.err_u, scale)
        cur.rate_p = _rate(prev.err_p, cur.err_p, scale)
    return reports


def _rate(e0: float, e1: float, scale: float) -> float | None:
    if e0 <= 0.0 or e1 <= 0.0 or scale == 0.0:
        return None
    return math.log(e0 / e1) / scale


def check_uzawa_window(cfg: CascadeConfig, disc) -> float:
    """Require alpha0 < 2 / M_h^2 on the first iterated level; returns M_h."""
    _, M = estimate_spectrum(disc)
    if cfg.solver.alpha0 >= 2.0 / M ** 2:
        raise ValueError(f"alpha0={cfg.solver.alpha0} outside (0, 2/M^2) with M={M:.4f}")
    return M


def run_cascade(cfg: CascadeConfig, ms: ManufacturedSolution | None = None,
                on_level=None) -> list[LevelReport]:
    """Run the cascade from ``start_level`` to ``levels``.

    Every level takes at least one iteration after its initial velocity
    solve, then iterates until the level-change test passes or the cap is
    reached (flagged in the report, not fatal).
    """
    ms = ms or builtin_solution(cfg.domain)
    mesh = build_initial_mesh(cfg.domain)
    while mesh.level < cfg.start_level:
        mesh = refine(mesh, cfg.refinement)

    reports: list[LevelReport] = []
    p0 = None
    prev_dofs = None
    while True:
        disc = assemble_stokes(mesh, cfg.pair, ms)
        if prev_dofs is not None:
            p0 = prolong_pressure(p0, prev_dofs, disc.dofs)
        elif cfg.solver.method is Method.UZAWA and cfg.check_alpha:
            check_uzawa_window(cfg, disc)

        h_k = mesh_size(mesh)
        n_k = disc.dofs.complexity
        tol = level_change_threshold(cfg, mesh.level, h_k, n_k)

        state = initial_step(disc, p0, cfg.solver)
        iters = 0
        while iters < cfg.max_iters_per_level:
            if state.q_norm == 0.0:
                break
            if iters >= cfg.min_iters_per_level and state.q_norm <= tol:
                break
            state = step(disc, state, cfg.solver)
            iters += 1
        capped = state.q_norm > tol
        rep = LevelReport(
            k=mesh.level, h=h_k, n_dof=n_k, iterations=iters,
            err_u=energy_error(state.u, disc, ms),
            err_p=l2_pressure_error(state.p, disc, ms),
            final_residual=state.q_norm, threshold=tol, capped=capped)
        reports.append(rep)
        log.info("level %d: N=%d iters=%d |q|=%.3e err_u=%.3e err_p=%.3e%s",
                 rep.k, n_k, iters, rep.final_residual, rep.err_u, rep.err_p,
                 " CAP" if capped else "")
        if on_level is not None:
            on_level(rep)

        if mesh.level >= cfg.levels:
            break
        p0 = state.p
        prev_dofs = disc.dofs
        del disc, state
        mesh = refine(mesh, cfg.refinement)

    return compute_rates(reports, cfg.complexity)
