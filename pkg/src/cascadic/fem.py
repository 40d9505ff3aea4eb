"""P2 velocity / P0 or P1 pressure finite elements for the Stokes system.

Velocity unknowns are the non-boundary P2 nodes (vertices and edge
midpoints), two components each, ordered ``[x-components, y-components]``.
Homogeneous Dirichlet data is imposed by dropping boundary nodes.

Forms::

    a(u, v) = int grad u : grad v
    b(v, q) = -int q div v
    (p, q)  = int p q

With these signs ``B A^{-1} B^T`` is positive definite on mean-zero
pressures and the second equation reads ``B u = g_vec`` with
``g_vec_m = -int g chi_m``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .linalg import SpdSolver
from .mesh import Domain, Mesh
from .quadrature import triangle_rule

_CHUNK = 65536


class QuadratureFailure(ValueError):
    """Raised when a triangle has nonpositive area."""


class ElementPair(str, enum.Enum):
    P2P0 = "p2p0"
    TAYLOR_HOOD = "taylor-hood"


# local P2 edge node i sits on the edge opposite local vertex i
_OPPOSITE = ((1, 2), (2, 0), (0, 1))


def p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 basis values at barycentric points, shape (nq, 6)."""
    lam = bary
    out = np.empty((len(lam), 6))
    for i in range(3):
        out[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        j, k = _OPPOSITE[i]
        out[:, 3 + i] = 4.0 * lam[:, j] * lam[:, k]
    return out


def p2_dlambda(bary: np.ndarray) -> np.ndarray:
    """Derivatives of the P2 basis w.r.t. barycentric coordinates, (nq, 6, 3)."""
    lam = bary
    out = np.zeros((len(lam), 6, 3))
    for i in range(3):
        out[:, i, i] = 4.0 * lam[:, i] - 1.0
        j, k = _OPPOSITE[i]
        out[:, 3 + i, j] = 4.0 * lam[:, k]
        out[:, 3 + i, k] = 4.0 * lam[:, j]
    return out


def barycentric_gradients(mesh: Mesh, tris: slice | np.ndarray = slice(None)):
    """Gradients of the barycentric coordinates, (nt, 3, 2), and areas."""
    p = mesh.vertices[mesh.triangles[tris]]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0.0):
        raise QuadratureFailure("triangle with nonpositive area")
    g = np.empty((len(p), 3, 2))
    g[:, 1, 0] = d2[:, 1] / det
    g[:, 1, 1] = -d2[:, 0] / det
    g[:, 2, 0] = -d1[:, 1] / det
    g[:, 2, 1] = d1[:, 0] / det
    g[:, 0] = -g[:, 1] - g[:, 2]
    return g, 0.5 * det


def _chunks(n: int):
    for start in range(0, n, _CHUNK):
        yield slice(start, min(start + _CHUNK, n))


@dataclass(frozen=True, eq=False)
class DofSpace:
    """Degree-of-freedom maps for one mesh and element pair.

    ``nodes`` is (nt, 6): three vertex nodes followed by three edge nodes,
    with edge node ``e`` numbered ``n_vertices + e``. ``free_index`` maps a
    P2 node to its position among free nodes, or -1 on the boundary.
    """

    mesh: Mesh
    pair: ElementPair
    nodes: np.ndarray
    free_index: np.ndarray
    n_free: int
    n_pressure: int
    pressure_nodes: np.ndarray

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_free

    @property
    def complexity(self) -> int:
        """N_k: free scalar P2 nodes (unknowns of a scalar discrete Laplacian)."""
        return self.n_free

    @property
    def n_nodes(self) -> int:
        return len(self.free_index)

    def velocity_index(self, node, component: int):
        """Global velocity index of ``(node, component)``; -1 on Dirichlet nodes."""
        f = self.free_index[node]
        return np.where(f >= 0, f + component * self.n_free, -1)


def build_dofs(mesh: Mesh, pair: ElementPair | str) -> DofSpace:
    pair = ElementPair(pair)
    nv = mesh.n_vertices
    nodes = np.hstack([mesh.triangles, mesh.triangle_edges + nv])
    on_boundary = np.concatenate([mesh.boundary, mesh.boundary_edges])
    free = ~on_boundary
    free_index = np.full(len(on_boundary), -1, dtype=np.int64)
    free_index[free] = np.arange(int(free.sum()))
    if pair is ElementPair.P2P0:
        pnodes = np.arange(mesh.n_triangles)[:, None]
        n_p = mesh.n_triangles
    else:
        pnodes = mesh.triangles
        n_p = nv
    return DofSpace(mesh, pair, nodes, free_index, int(free.sum()), n_p, pnodes)


def _pressure_values(pair: ElementPair, bary: np.ndarray) -> np.ndarray:
    if pair is ElementPair.P2P0:
        return np.ones((len(bary), 1))
    return bary


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact Stokes data. All callables take coordinate arrays ``x, y``.

    ``velocity`` returns ``(..., 2)``, ``gradient`` returns ``(..., 2, 2)``
    with ``gradient[..., c, d] = d u_c / d x_d``; ``force`` is
    ``-laplace(u) + grad(p)`` and ``divergence`` is ``div u``.
    """

    velocity: Callable
    gradient: Callable
    pressure: Callable
    force: Callable
    divergence: Callable
    name: str = ""


def _square_solution() -> ManufacturedSolution:
    pi = math.pi
    c = 1.0 / (2.0 * pi ** 2)

    def s(x, y):
        return c * np.sin(pi * x) * np.sin(pi * y)

    def ds(x, y):
        return (c * pi * np.cos(pi * x) * np.sin(pi * y),
                c * pi * np.sin(pi * x) * np.cos(pi * y))

    def velocity(x, y):
        v = s(x, y)
        return np.stack([v, v], axis=-1)

    def gradient(x, y):
        sx, sy = ds(x, y)
        row = np.stack([sx, sy], axis=-1)
        return np.stack([row, row], axis=-2)

    def pressure(x, y):
        return 2.0 / 3.0 - x ** 2 - y ** 2

    def force(x, y):
        lap = 2.0 * pi ** 2 * s(x, y)
        return np.stack([lap - 2.0 * x, lap - 2.0 * y], axis=-1)

    def divergence(x, y):
        sx, sy = ds(x, y)
        return sx + sy

    return ManufacturedSolution(velocity, gradient, pressure, force, divergence, "square")


def lshape_angle(x, y):
    """Polar angle in [0, 2pi): 0 on {x > 0, y = 0}, 3pi/2 on {x = 0, y < 0}."""
    return np.mod(np.arctan2(y, x), 2.0 * np.pi)


def _lshape_solution() -> ManufacturedSolution:
    a = 2.0 / 3.0

    def sing(x, y):
        r = np.hypot(x, y)
        th = lshape_angle(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = r ** a * np.sin(a * th)
            # d/dx Im z^a = a r^(a-1) sin((a-1) th), d/dy = a r^(a-1) cos((a-1) th)
            ra = np.where(r > 0, a * r ** (a - 1.0), 0.0)
        return phi, ra * np.sin((a - 1.0) * th), ra * np.cos((a - 1.0) * th)

    def bubble(x, y):
        w = (1 - x ** 2) * (1 - y ** 2)
        return w, -2 * x * (1 - y ** 2), -2 * y * (1 - x ** 2), -2 * (1 - y ** 2) - 2 * (1 - x ** 2)

    def velocity(x, y):
        phi, _, _ = sing(x, y)
        w = bubble(x, y)[0]
        v = phi * w
        return np.stack([v, v], axis=-1)

    def _grad(x, y):
        phi, px, py = sing(x, y)
        w, wx, wy, _ = bubble(x, y)
        return px * w + phi * wx, py * w + phi * wy

    def gradient(x, y):
        gx, gy = _grad(x, y)
        row = np.stack([gx, gy], axis=-1)
        return np.stack([row, row], axis=-2)

    def pressure(x, y):
        return 2.0 / 3.0 - x ** 2 - y ** 2

    def force(x, y):
        phi, px, py = sing(x, y)
        w, wx, wy, lw = bubble(x, y)
        lap = 2.0 * (px * wx + py * wy) + phi * lw
        return np.stack([-lap - 2.0 * x, -lap - 2.0 * y], axis=-1)

    def divergence(x, y):
        gx, gy = _grad(x, y)
        return gx + gy

    return ManufacturedSolution(velocity, gradient, pressure, force, divergence, "lshape")


def builtin_solution(domain: Domain | str) -> ManufacturedSolution:
    """Sine solution on the unit square, r^(2/3) corner solution on the L-shape."""
    if Domain(domain) is Domain.UNIT_SQUARE:
        return _square_solution()
    return _lshape_solution()


def _reference_tensors(pair: ElementPair, degree: int):
    """Integrals over the reference triangle (weights summing to 1)."""
    bary, w = triangle_rule(degree)
    d = p2_dlambda(bary)
    stiff = np.einsum("q,qil,qjm->iljm", w, d, d)
    chi = _pressure_values(pair, bary)
    div = np.einsum("q,qa,qil->ail", w, chi, d)
    mass = np.einsum("q,qa,qb->ab", w, chi, chi)
    return stiff, div, mass


@dataclass(frozen=True, eq=False)
class StokesDiscretization:
    """Assembled discrete Stokes system on one level.

    ``K`` is the scalar P2 Laplacian on free nodes; ``A`` is its
    two-component block diagonal.
    """

    A: sp.csr_matrix
    K: sp.csr_matrix
    B: sp.csr_matrix
    Mp: sp.csr_matrix
    f_vec: np.ndarray
    g_vec: np.ndarray
    dofs: DofSpace

    @property
    def mesh(self) -> Mesh:
        return self.dofs.mesh

    @property
    def pair(self) -> ElementPair:
        return self.dofs.pair

    @property
    def constant_pressure(self) -> np.ndarray:
        return np.ones(self.dofs.n_pressure)

    @cached_property
    def mass_of_one(self) -> np.ndarray:
        """``Mp @ 1``: integrals of the pressure basis functions."""
        return self.Mp @ self.constant_pressure

    @cached_property
    def velocity_solver(self) -> SpdSolver:
        """Exact A^{-1}, factoring the scalar block once."""
        return SpdSolver(self.K, blocks=2)

    @cached_property
    def pressure_solver(self) -> SpdSolver:
        return SpdSolver(self.Mp)


def _scatter(rows, cols, vals, shape):
    keep = (rows >= 0) & (cols >= 0)
    m = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape)
    return m.tocsr()


def assemble_stiffness(dofs: DofSpace, degree: int = 6) -> sp.csr_matrix:
    stiff, _, _ = _reference_tensors(dofs.pair, degree)
    mesh = dofs.mesh
    n = dofs.n_free
    parts = []
    for ch in _chunks(mesh.n_triangles):
        g, area = barycentric_gradients(mesh, ch)
        gg = np.einsum("tld,tmd->tlm", g, g)
        local = np.einsum("iljm,tlm->tij", stiff, gg) * area[:, None, None]
        idx = dofs.free_index[dofs.nodes[ch]]
        rows = np.repeat(idx, 6, axis=1).ravel()
        cols = np.tile(idx, (1, 6)).ravel()
        parts.append(_scatter(rows, cols, local.ravel(), (n, n)))
    K = parts[0]
    for P in parts[1:]:
        K = K + P
    K.sum_duplicates()
    K.sort_indices()
    return K


def assemble_divergence(dofs: DofSpace, degree: int = 6, free_only: bool = True) -> sp.csr_matrix:
    """B with B[m, (i, c)] = -int chi_m d_c phi_i.

    With ``free_only=False`` the columns cover all P2 nodes (boundary
    included), ordered ``c * n_nodes + node``.
    """
    _, div, _ = _reference_tensors(dofs.pair, degree)
    mesh = dofs.mesh
    na = div.shape[0]
    if free_only:
        ncol_block = dofs.n_free
        col_of = dofs.free_index
    else:
        ncol_block = dofs.n_nodes
        col_of = np.arange(dofs.n_nodes)
    shape = (dofs.n_pressure, 2 * ncol_block)
    total = None
    for ch in _chunks(mesh.n_triangles):
        g, area = barycentric_gradients(mesh, ch)
        # local[t, a, i, c] = -area * sum_l div[a, i, l] * g[t, l, c]
        local = -np.einsum("ail,tlc->taic", div, g) * area[:, None, None, None]
        prow = dofs.pressure_nodes[ch]
        vcol = col_of[dofs.nodes[ch]]
        for c in range(2):
            cols = np.where(vcol >= 0, vcol + c * ncol_block, -1)
            rows = np.repeat(prow[:, :, None], 6, axis=2).ravel()
            cc = np.repeat(cols[:, None, :], na, axis=1).ravel()
            part = _scatter(rows, cc, local[..., c].ravel(), shape)
            total = part if total is None else total + part
    total.sum_duplicates()
    total.sort_indices()
    return total


def assemble_pressure_mass(dofs: DofSpace, degree: int = 6) -> sp.csr_matrix:
    _, _, mass = _reference_tensors(dofs.pair, degree)
    mesh = dofs.mesh
    area = mesh.areas
    if dofs.pair is ElementPair.P2P0:
        return sp.diags(area * mass[0, 0]).tocsr()
    idx = dofs.pressure_nodes
    local = mass[None] * area[:, None, None]
    rows = np.repeat(idx, 3, axis=1).ravel()
    cols = np.tile(idx, (1, 3)).ravel()
    M = _scatter(rows, cols, local.ravel(), (dofs.n_pressure, dofs.n_pressure))
    M.sort_indices()
    return M


def _physical_points(mesh: Mesh, bary: np.ndarray, ch) -> tuple[np.ndarray, np.ndarray]:
    p = mesh.vertices[mesh.triangles[ch]]
    xy = np.einsum("qk,tkd->tqd", bary, p)
    return xy[..., 0], xy[..., 1]


def assemble_loads(dofs: DofSpace, ms: ManufacturedSolution, degree: int = 6):
    """Right-hand sides: f_vec_i = int f . phi_i and g_vec_m = -int g chi_m."""
    bary, w = triangle_rule(degree)
    phi = p2_values(bary)
    chi = _pressure_values(dofs.pair, bary)
    mesh = dofs.mesh
    f_vec = np.zeros(dofs.n_velocity)
    g_vec = np.zeros(dofs.n_pressure)
    for ch in _chunks(mesh.n_triangles):
        x, y = _physical_points(mesh, bary, ch)
        area = mesh.areas[ch]
        f = ms.force(x, y)
        g = ms.divergence(x, y)
        nodes = dofs.nodes[ch]
        for c in range(2):
            loc = np.einsum("tq,q,qi->ti", f[..., c], w, phi) * area[:, None]
            idx = dofs.velocity_index(nodes, c).ravel()
            keep = idx >= 0
            f_vec += np.bincount(idx[keep], loc.ravel()[keep], minlength=dofs.n_velocity)
        loc = -np.einsum("tq,q,qa->ta", g, w, chi) * area[:, None]
        g_vec += np.bincount(dofs.pressure_nodes[ch].ravel(), loc.ravel(),
                             minlength=dofs.n_pressure)
    return f_vec, g_vec


def assemble_stokes(mesh: Mesh, pair: ElementPair | str, ms: ManufacturedSolution,
                    degree: int = 6) -> StokesDiscretization:
    dofs = build_dofs(mesh, pair)
    K = assemble_stiffness(dofs, degree)
    A = sp.block_diag([K, K], format="csr")
    B = assemble_divergence(dofs, degree)
    Mp = assemble_pressure_mass(dofs, degree)
    f_vec, g_vec = assemble_loads(dofs, ms, degree)
    return StokesDiscretization(A, K, B, Mp, f_vec, g_vec, dofs)


def _velocity_coefficients(dofs: DofSpace, u_h: np.ndarray) -> np.ndarray:
    """Expand free-dof vector to all P2 nodes, shape (n_nodes, 2)."""
    full = np.zeros((dofs.n_nodes, 2))
    free = dofs.free_index >= 0
    for c in range(2):
        full[free, c] = u_h[c * dofs.n_free + dofs.free_index[free]]
    return full


def p2_node_coordinates(mesh: Mesh) -> np.ndarray:
    e = mesh.edges
    mid = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    return np.vstack([mesh.vertices, mid])


def interpolate_velocity(dofs: DofSpace, func: Callable) -> np.ndarray:
    """Nodal P2 interpolant of ``func`` restricted to the free dofs."""
    xy = p2_node_coordinates(dofs.mesh)
    vals = func(xy[:, 0], xy[:, 1])
    free = dofs.free_index >= 0
    out = np.zeros(dofs.n_velocity)
    for c in range(2):
        out[c * dofs.n_free + dofs.free_index[free]] = vals[free, c]
    return out


def interpolate_pressure(dofs: DofSpace, func: Callable) -> np.ndarray:
    """Nodal P1 interpolant (Taylor-Hood) or cell-centroid value (P0)."""
    mesh = dofs.mesh
    if dofs.pair is ElementPair.P2P0:
        c = mesh.vertices[mesh.triangles].mean(axis=1)
        return func(c[:, 0], c[:, 1])
    return func(mesh.vertices[:, 0], mesh.vertices[:, 1])


def project_pressure(dofs: DofSpace, func: Callable, degree: int = 6) -> np.ndarray:
    """L2 projection of ``func`` onto the pressure space."""
    from scipy.sparse.linalg import spsolve

    bary, w = triangle_rule(degree)
    chi = _pressure_values(dofs.pair, bary)
    mesh = dofs.mesh
    x, y = _physical_points(mesh, bary, slice(None))
    loc = np.einsum("tq,q,qa->ta", func(x, y), w, chi) * mesh.areas[:, None]
    rhs = np.bincount(dofs.pressure_nodes.ravel(), loc.ravel(), minlength=dofs.n_pressure)
    Mp = assemble_pressure_mass(dofs, degree)
    if dofs.pair is ElementPair.P2P0:
        return rhs / Mp.diagonal()
    return spsolve(Mp.tocsc(), rhs)


def energy_error(u_h: np.ndarray, disc: StokesDiscretization,
                 ms: ManufacturedSolution, degree: int = 6) -> float:
    """(sum_T int_T |grad u_h - grad u|^2)^(1/2)."""
    dofs = disc.dofs
    mesh = dofs.mesh
    coef = _velocity_coefficients(dofs, u_h)
    bary, w = triangle_rule(degree)
    d = p2_dlambda(bary)
    total = 0.0
    for ch in _chunks(mesh.n_triangles):
        g, area = barycentric_gradients(mesh, ch)
        # grad phi_i at q: sum_l d[q, i, l] * g[t, l, :]
        gphi = np.einsum("qil,tld->tqid", d, g)
        uc = coef[dofs.nodes[ch]]                      # (t, 6, 2)
        guh = np.einsum("tqid,tic->tqcd", gphi, uc)    # (t, q, c, d)
        x, y = _physical_points(mesh, bary, ch)
        diff = guh - ms.gradient(x, y)
        total += float(np.einsum("tqcd,tqcd,q,t->", diff, diff, w, area))
    return math.sqrt(total)


def l2_pressure_error(p_h: np.ndarray, disc: StokesDiscretization,
                      ms: ManufacturedSolution, degree: int = 6) -> float:
    """L2 norm of (p_h - p) after removing the mean of each over the domain."""
    dofs = disc.dofs
    mesh = dofs.mesh
    bary, w = triangle_rule(degree)
    chi = _pressure_values(dofs.pair, bary)
    area = mesh.areas
    x, y = _physical_points(mesh, bary, slice(None))
    ph = np.einsum("qa,ta->tq", chi, p_h[dofs.pressure_nodes])
    diff = ph - ms.pressure(x, y)
    wa = w[None, :] * area[:, None]
    mean = np.sum(diff * wa) / np.sum(area)
    return math.sqrt(float(np.sum((diff - mean) ** 2 * wa)))


def velocity_energy_norm(ms: ManufacturedSolution, mesh: Mesh, degree: int = 6) -> float:
    """|u| = (int |grad u|^2)^(1/2) by quadrature on ``mesh``."""
    bary, w = triangle_rule(degree)
    x, y = _physical_points(mesh, bary, slice(None))
    gu = ms.gradient(x, y)
    return math.sqrt(float(np.einsum("tqcd,tqcd,q,t->", gu, gu, w, mesh.areas)))
