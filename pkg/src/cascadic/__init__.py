"""Cascadic multilevel Uzawa-type solvers for the Stokes problem.

Mixed P2-P0 and Taylor-Hood discretizations on nested triangular meshes of
the unit square and the L-shaped domain, with plain Uzawa, Uzawa gradient
and Uzawa conjugate gradient level solvers.
"""
from .cascade import (CascadeConfig, Complexity, HierarchyMismatch, LevelReport,
                      compute_rates, level_change_threshold, prolong_pressure,
                      run_cascade)
from .fem import (DofSpace, ElementPair, ManufacturedSolution, StokesDiscretization,
                  assemble_stokes, build_dofs, builtin_solution, energy_error,
                  l2_pressure_error)
from .linalg import SpdSolver, dense_oracle_solve
from .mesh import Domain, Mesh, RefinementRule, build_hierarchy, build_initial_mesh, refine
from .solvers import (IterState, Method, SolverKind, estimate_spectrum, initial_step,
                      iterate, residual_norm, solve_schur_direct, step)

__version__ = "0.1.0"
