"""Triangular meshes: Union Jack initial meshes and nested refinement.

Meshes are immutable. ``refine`` produces the next level of a nested
hierarchy by splitting every triangle into four children; the split point
on each edge is the midpoint, except for edges touching the singular point
of a graded rule.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class NonConformingInput(ValueError):
    """Raised when a mesh has hanging vertices or over-shared edges."""


class SingularPointNotVertex(ValueError):
    """Raised when a graded rule names a point that is not a mesh vertex."""


class Domain(str, enum.Enum):
    UNIT_SQUARE = "square"
    L_SHAPE = "lshape"


class RefinementKind(str, enum.Enum):
    UNIFORM = "uniform"
    GRADED = "graded"


@dataclass(frozen=True)
class RefinementRule:
    """How edges are split when refining.

    For ``GRADED`` rules, edges incident to ``singular_point`` are split so
    that the piece touching the point is ``kappa`` times the other piece.
    """

    kind: RefinementKind = RefinementKind.UNIFORM
    kappa: float = 1.0
    singular_point: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")

    @classmethod
    def uniform(cls) -> "RefinementRule":
        return cls(RefinementKind.UNIFORM)

    @classmethod
    def graded(cls, kappa: float, singular_point=(0.0, 0.0)) -> "RefinementRule":
        return cls(RefinementKind.GRADED, float(kappa), tuple(singular_point))

    @property
    def split_fraction(self) -> float:
        """Distance of the split point from the singular point, relative to the edge length."""
        return self.kappa / (1.0 + self.kappa)


@dataclass(frozen=True, eq=False)
class Mesh:
    """A conforming triangulation.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary : (nv,) bool array, True on the domain boundary
    level : refinement level, 1 for an initial mesh
    parent : (nt,) int array into the previous level's triangles, or None
    split_edges : (ns, 2) vertex pairs of the refined parent edges, or None.
        The first vertex is the one the split fraction is measured from.
    split_vertex : (ns,) index of the vertex inserted on each split edge
    split_ratio : (ns,) position of the inserted vertex along the edge
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    level: int = 1
    parent: np.ndarray | None = None
    split_edges: np.ndarray | None = None
    split_vertex: np.ndarray | None = None
    split_ratio: np.ndarray | None = None
    domain: Domain | None = field(default=None)

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary", "parent",
                     "split_edges", "split_vertex", "split_ratio"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def _edge_data(self):
        t = self.triangles
        # local edge i is opposite local vertex i
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """(ne, 2) sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """(nt, 3) edge index opposite each local vertex."""
        return self._edge_data[1]

    @property
    def edge_valence(self) -> np.ndarray:
        """Number of triangles sharing each edge."""
        return self._edge_data[2]

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_valence == 1

    def find_vertex(self, point, tol: float = 1e-12) -> int | None:
        d = np.linalg.norm(self.vertices - np.asarray(point, dtype=float), axis=1)
        i = int(np.argmin(d))
        return i if d[i] <= tol else None

    def check_conforming(self) -> None:
        """Raise NonConformingInput unless the mesh is a conforming triangulation.

        Both supported domains are simply connected, so a conforming mesh has
        Euler characteristic 1; a hanging vertex opens an extra boundary loop
        and drops it.
        """
        if np.any(self.edge_valence > 2):
            raise NonConformingInput("edge shared by more than two triangles")
        euler = self.n_vertices - len(self.edges) + self.n_triangles
        if euler != 1:
            raise NonConformingInput(f"Euler characteristic {euler} != 1; hanging vertex")

    def dump(self, fh) -> None:
        """Write the plain-text debug format (header, vertices, triangles)."""
        fh.write(f"{self.n_vertices} {self.n_triangles}\n")
        for (x, y), b in zip(self.vertices, self.boundary):
            fh.write(f"{x!r} {y!r} {int(b)}\n")
        parent = self.parent if self.parent is not None else -np.ones(self.n_triangles, int)
        for (i, j, k), par in zip(self.triangles, parent):
            fh.write(f"{i} {j} {k} {par}\n")


def _orient_ccw(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    cw = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    triangles = triangles.copy()
    triangles[cw] = triangles[cw][:, [0, 2, 1]]
    return triangles


def _boundary_flags(n_vertices: int, triangles: np.ndarray) -> np.ndarray:
    pairs = np.sort(np.concatenate(
        [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]]), axis=1)
    edges, counts = np.unique(pairs, axis=0, return_counts=True)
    flags = np.zeros(n_vertices, dtype=bool)
    flags[edges[counts == 1].ravel()] = True
    return flags


def _union_jack(squares) -> tuple[np.ndarray, np.ndarray]:
    points: list[tuple[float, float]] = []
    index: dict[tuple[float, float], int] = {}

    def vid(p):
        if p not in index:
            index[p] = len(points)
            points.append(p)
        return index[p]

    tris = []
    for x0, y0 in squares:
        c = vid((x0 + 0.5, y0 + 0.5))
        corners = [vid((x0, y0)), vid((x0 + 1.0, y0)),
                   vid((x0 + 1.0, y0 + 1.0)), vid((x0, y0 + 1.0))]
        for a in range(4):
            tris.append((corners[a], corners[(a + 1) % 4], c))
    return np.array(points, dtype=float), np.array(tris, dtype=np.int64)


def build_initial_mesh(domain: Domain | str) -> Mesh:
    """Union Jack triangulation of the unit square or of the L-shaped domain.

    Every unit square is cut by both diagonals into four triangles. The
    L-shape is (-1, 1)^2 minus [0, 1] x [-1, 0], made of three such squares.
    """
    domain = Domain(domain)
    if domain is Domain.UNIT_SQUARE:
        squares = [(0.0, 0.0)]
    else:
        squares = [(-1.0, 0.0), (0.0, 0.0), (-1.0, -1.0)]
    vertices, triangles = _union_jack(squares)
    triangles = _orient_ccw(vertices, triangles)
    return Mesh(vertices, triangles, _boundary_flags(len(vertices), triangles),
                level=1, domain=domain)


def refine(mesh: Mesh, rule: RefinementRule | None = None) -> Mesh:
    """Split every triangle into four, returning the next nested level.

    Old vertices keep their indices; one vertex per edge is appended in
    edge order. Children of triangle ``t`` are ``4t .. 4t + 3``; the last
    one is the interior triangle.
    """
    rule = rule or RefinementRule.uniform()
    mesh.check_conforming()

    edges = mesh.edges.copy()
    w = np.full(len(edges), 0.5)
    if rule.kind is RefinementKind.GRADED:
        s = mesh.find_vertex(rule.singular_point)
        if s is None:
            raise SingularPointNotVertex(f"{rule.singular_point} is not a vertex")
        flip = edges[:, 1] == s
        edges[flip] = edges[flip][:, ::-1]
        w[(edges[:, 0] == s)] = rule.split_fraction

    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    # single formula for every edge keeps kappa=1 bitwise equal to uniform
    new_points = (1.0 - w)[:, None] * a + w[:, None] * b

    nv = mesh.n_vertices
    vertices = np.vstack([mesh.vertices, new_points])
    boundary = np.concatenate([mesh.boundary, mesh.boundary_edges])

    t = mesh.triangles
    e = mesh.triangle_edges + nv
    m12, m20, m01 = e[:, 0], e[:, 1], e[:, 2]
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    children = np.stack([
        np.stack([v0, m01, m20], axis=1),
        np.stack([m01, v1, m12], axis=1),
        np.stack([m20, m12, v2], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_triangles), 4)

    return Mesh(vertices, children, boundary, level=mesh.level + 1, parent=parent,
                split_edges=edges, split_vertex=np.arange(nv, nv + len(edges)),
                split_ratio=w, domain=mesh.domain)


def build_hierarchy(domain: Domain | str, levels: int,
                    rule: RefinementRule | None = None) -> list[Mesh]:
    """Meshes for levels 1..levels."""
    meshes = [build_initial_mesh(domain)]
    while len(meshes) < levels:
        meshes.append(refine(meshes[-1], rule))
    return meshes


def mesh_size(mesh: Mesh) -> float:
    """Longest edge over all triangles."""
    if mesh.n_triangles == 0:
        raise ValueError("empty mesh")
    e = mesh.edges
    return float(np.max(np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)))
