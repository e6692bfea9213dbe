"""Admissible finite-volume meshes with two-point flux geometry.

Provides structured generators (1D intervals, 2D rectangle lattices) and an
importer for 2D triangulations with circumcenter-based cell centers.  A mesh
is admissible when the segment joining two neighboring cell centers is
orthogonal to their shared edge, which is what makes the two-point flux
consistent.  For triangulations this restricts the triangles to acute ones.

Conventions:
  * every edge stores one canonical cell ``K``; interior edges store the
    neighbor ``L`` as well, and ``normal_from_K`` points from K to L,
  * 1D edges use the measure convention m(sigma) = 1, so the
    transmissibility reduces to 1/d_sigma,
  * dual (diamond) cells carry measure m(sigma) * d_sigma / 2, which is the
    exact kite area in 2D and is used by the gradient reconstruction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# relative tolerances for the geometric consistency checks
ORTHOGONALITY_RTOL = 1e-10
DUAL_MEASURE_RTOL = 1e-12


class MeshError(Exception):
    """Invalid mesh geometry or configuration."""


class AdmissibilityError(MeshError):
    """Mesh violates the two-point-flux orthogonality requirements."""


class TopologyError(MeshError):
    """Inconsistent mesh connectivity."""


class EdgeKind(enum.IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2


@dataclass(frozen=True)
class Cell:
    id: int
    center: np.ndarray
    measure: float
    edge_ids: tuple[int, ...]


@dataclass(frozen=True)
class Edge:
    """One face of the mesh together with its two-point-flux geometry.

    ``cells`` is ``(K, L)`` for interior edges and ``(K,)`` on the boundary.
    ``center_distances`` holds d(x_K, sigma) (and d(x_L, sigma) for interior
    edges); ``distance`` is d_sigma, i.e. d(x_K, x_L) for interior edges and
    d(x_K, sigma) on the boundary.
    """

    id: int
    kind: EdgeKind
    cells: tuple[int, ...]
    measure: float
    distance: float
    transmissibility: float
    normal_from_K: np.ndarray
    dual_measure: float
    center_distances: tuple[float, ...]


class Mesh:
    """Immutable admissible mesh.

    Construction validates topology and admissibility and precomputes the
    flat arrays used by assembly and diagnostics.  Instances must not be
    mutated afterwards; they are safe to share between threads.
    """

    def __init__(self, dimension, cells, edges, points=None, cell_nodes=None):
        self.dimension = int(dimension)
        self.cells = list(cells)
        self.edges = list(edges)
        self.points = None if points is None else np.asarray(points, dtype=float)
        self.cell_nodes = None if cell_nodes is None else [tuple(c) for c in cell_nodes]

        self.n_cells = len(self.cells)
        self.n_edges = len(self.edges)
        self.cell_measures = np.array([c.measure for c in self.cells], dtype=float)
        self.cell_centers = np.array([c.center for c in self.cells], dtype=float).reshape(
            self.n_cells, self.dimension
        )
        self.total_measure = float(self.cell_measures.sum())

        self._check_topology()

        kinds = np.array([e.kind for e in self.edges], dtype=np.int8)
        self.edge_kinds = kinds
        self.edge_K = np.array([e.cells[0] for e in self.edges], dtype=np.intp)
        self.edge_L = np.array(
            [e.cells[1] if len(e.cells) == 2 else -1 for e in self.edges], dtype=np.intp
        )
        self.edge_tau = np.array([e.transmissibility for e in self.edges], dtype=float)
        self.edge_measures = np.array([e.measure for e in self.edges], dtype=float)
        self.edge_distances = np.array([e.distance for e in self.edges], dtype=float)
        self.edge_dual_measures = np.array([e.dual_measure for e in self.edges], dtype=float)
        self.edge_normals = np.array([e.normal_from_K for e in self.edges], dtype=float).reshape(
            self.n_edges, self.dimension
        )

        self.interior = np.flatnonzero(kinds == EdgeKind.INTERIOR)
        self.dirichlet = np.flatnonzero(kinds == EdgeKind.DIRICHLET)
        self.neumann = np.flatnonzero(kinds == EdgeKind.NEUMANN)
        self.interior_K = self.edge_K[self.interior]
        self.interior_L = self.edge_L[self.interior]
        self.interior_tau = self.edge_tau[self.interior]
        self.dirichlet_K = self.edge_K[self.dirichlet]
        self.dirichlet_tau = self.edge_tau[self.dirichlet]

        if self.dirichlet.size == 0:
            raise MeshError("mesh has no Dirichlet boundary edge (contact boundary required)")

        self._check_geometry()
        self.regularity_xi = validate_regularity(self)

    # -- construction-time checks -------------------------------------------------

    def _check_topology(self):
        if self.n_cells < 1:
            raise TopologyError("mesh needs at least one cell")
        if np.any(self.cell_measures <= 0.0):
            bad = int(np.argmin(self.cell_measures))
            raise TopologyError(f"cell {bad} has nonpositive measure")
        for cell in self.cells:
            for eid in cell.edge_ids:
                if not 0 <= eid < self.n_edges:
                    raise TopologyError(f"cell {cell.id} references unknown edge {eid}")
                if cell.id not in self.edges[eid].cells:
                    raise TopologyError(f"edge {eid} does not list incident cell {cell.id}")
        for edge in self.edges:
            n_incident = len(edge.cells)
            if edge.kind == EdgeKind.INTERIOR and n_incident != 2:
                raise TopologyError(f"interior edge {edge.id} must join two cells")
            if edge.kind != EdgeKind.INTERIOR and n_incident != 1:
                raise TopologyError(f"boundary edge {edge.id} must belong to one cell")

    def _check_geometry(self):
        for edge in self.edges:
            if edge.distance <= 0.0:
                raise AdmissibilityError(f"edge {edge.id} has nonpositive center distance")
            tau = edge.measure / edge.distance
            if abs(edge.transmissibility - tau) > 1e-12 * max(tau, 1.0):
                raise MeshError(f"edge {edge.id}: transmissibility inconsistent with m/d")
        if self.dimension == 2:
            K = self.edge_K[self.interior]
            L = self.edge_L[self.interior]
            dx = self.cell_centers[L] - self.cell_centers[K]
            dist = np.linalg.norm(dx, axis=1)
            normals = self.edge_normals[self.interior]
            tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
            skew = np.abs(np.einsum("ij,ij->i", dx, tangents))
            bad = skew > ORTHOGONALITY_RTOL * dist
            if np.any(bad):
                eid = int(self.interior[np.argmax(bad)])
                raise AdmissibilityError(
                    f"edge {eid}: center segment not orthogonal to the edge"
                )
            # kite identity m(sigma) d(x_K, x_L) = 2 m(T_sigma)
            md = self.edge_measures[self.interior] * dist
            dual = self.edge_dual_measures[self.interior]
            if np.any(np.abs(md - 2.0 * dual) > DUAL_MEASURE_RTOL * np.maximum(md, 1e-300)):
                raise MeshError("interior dual-cell measures violate the kite identity")

    # -- convenience --------------------------------------------------------------

    def edge_midpoints_of(self, indices):
        """Midpoints are not stored; reconstruct for boundary tagging output."""
        out = []
        for eid in indices:
            e = self.edges[eid]
            K = e.cells[0]
            out.append(self.cell_centers[K] + e.center_distances[0] * e.normal_from_K)
        return np.asarray(out)

    def __repr__(self):
        return (
            f"Mesh(dim={self.dimension}, cells={self.n_cells}, edges={self.n_edges}, "
            f"xi={self.regularity_xi:.3f})"
        )


def validate_regularity(mesh: Mesh) -> float:
    """Smallest ratio d(x_K, sigma) / d_sigma over all cell/edge incidences.

    In 2D additionally asserts the perimeter-vs-area bound
    sum_K sum_{sigma in E_K} m(sigma) d(x_K, sigma) <= 2 m(Omega).
    """
    xi = np.inf
    acc = 0.0
    for edge in mesh.edges:
        for d in edge.center_distances:
            xi = min(xi, d / edge.distance)
            acc += edge.measure * d
    if not np.isfinite(xi) or xi <= 0.0:
        raise AdmissibilityError("degenerate mesh: vanishing center-to-edge distance")
    if mesh.dimension == 2 and acc > 2.0 * mesh.total_measure * (1.0 + 1e-12):
        raise AdmissibilityError("mesh violates the edge-moment bound sum m(sigma) d <= 2 m(Omega)")
    return float(xi)


# -- structured generators ---------------------------------------------------------


def build_interval_mesh(n_cells: int, dirichlet_side: str = "left") -> Mesh:
    """Uniform mesh of (0, 1) with n_cells cells.

    Boundary edges are Dirichlet on the requested side(s) ("left", "right" or
    "both"); the remaining endpoint is a no-flux (Neumann) boundary.
    """
    if n_cells < 2:
        raise ValueError("interval mesh needs at least 2 cells")
    if dirichlet_side not in ("left", "right", "both"):
        raise ValueError(f"unknown dirichlet_side {dirichlet_side!r}")
    h = 1.0 / n_cells

    def boundary_kind(side):
        if dirichlet_side == "both" or dirichlet_side == side:
            return EdgeKind.DIRICHLET
        return EdgeKind.NEUMANN

    edges = [
        Edge(
            id=0,
            kind=boundary_kind("left"),
            cells=(0,),
            measure=1.0,
            distance=h / 2,
            transmissibility=2.0 / h,
            normal_from_K=np.array([-1.0]),
            dual_measure=h / 4,
            center_distances=(h / 2,),
        )
    ]
    for j in range(1, n_cells):
        edges.append(
            Edge(
                id=j,
                kind=EdgeKind.INTERIOR,
                cells=(j - 1, j),
                measure=1.0,
                distance=h,
                transmissibility=1.0 / h,
                normal_from_K=np.array([1.0]),
                dual_measure=h / 2,
                center_distances=(h / 2, h / 2),
            )
        )
    edges.append(
        Edge(
            id=n_cells,
            kind=boundary_kind("right"),
            cells=(n_cells - 1,),
            measure=1.0,
            distance=h / 2,
            transmissibility=2.0 / h,
            normal_from_K=np.array([1.0]),
            dual_measure=h / 4,
            center_distances=(h / 2,),
        )
    )
    cells = [
        Cell(id=i, center=np.array([(i + 0.5) * h]), measure=h, edge_ids=(i, i + 1))
        for i in range(n_cells)
    ]
    return Mesh(1, cells, edges)


def build_rectangle_mesh(nx: int, ny: int, dirichlet_predicate) -> Mesh:
    """Uniform nx x ny rectangle mesh of the unit square.

    ``dirichlet_predicate`` receives the midpoint (x, y) of each boundary edge
    and selects the contact boundary; everything else is a no-flux boundary.
    Raises MeshError when the predicate selects no edge.
    """
    if nx < 2 or ny < 2:
        raise ValueError("rectangle mesh needs nx, ny >= 2")
    hx, hy = 1.0 / nx, 1.0 / ny

    def cid(ix, iy):
        return iy * nx + ix

    cell_edges = [[] for _ in range(nx * ny)]
    edges = []

    def add_edge(kind, cells, measure, distance, normal, dks):
        eid = len(edges)
        edges.append(
            Edge(
                id=eid,
                kind=kind,
                cells=cells,
                measure=measure,
                distance=distance,
                transmissibility=measure / distance,
                normal_from_K=np.asarray(normal, dtype=float),
                dual_measure=measure * distance / 2,
                center_distances=dks,
            )
        )
        for c in cells:
            cell_edges[c].append(eid)

    def boundary(mid, cells, measure, distance, normal):
        kind = EdgeKind.DIRICHLET if dirichlet_predicate(mid[0], mid[1]) else EdgeKind.NEUMANN
        add_edge(kind, cells, measure, distance, normal, (distance,))

    for iy in range(ny):
        for ix in range(nx):
            # vertical edges (normal +x)
            if ix < nx - 1:
                add_edge(
                    EdgeKind.INTERIOR,
                    (cid(ix, iy), cid(ix + 1, iy)),
                    hy,
                    hx,
                    (1.0, 0.0),
                    (hx / 2, hx / 2),
                )
            # horizontal edges (normal +y)
            if iy < ny - 1:
                add_edge(
                    EdgeKind.INTERIOR,
                    (cid(ix, iy), cid(ix, iy + 1)),
                    hx,
                    hy,
                    (0.0, 1.0),
                    (hy / 2, hy / 2),
                )
    for iy in range(ny):
        boundary((0.0, (iy + 0.5) * hy), (cid(0, iy),), hy, hx / 2, (-1.0, 0.0))
        boundary((1.0, (iy + 0.5) * hy), (cid(nx - 1, iy),), hy, hx / 2, (1.0, 0.0))
    for ix in range(nx):
        boundary(((ix + 0.5) * hx, 0.0), (cid(ix, 0),), hx, hy / 2, (0.0, -1.0))
        boundary(((ix + 0.5) * hx, 1.0), (cid(ix, ny - 1),), hx, hy / 2, (0.0, 1.0))

    if not any(e.kind == EdgeKind.DIRICHLET for e in edges):
        raise MeshError("dirichlet predicate selected no boundary edge")

    cells = [
        Cell(
            id=cid(ix, iy),
            center=np.array([(ix + 0.5) * hx, (iy + 0.5) * hy]),
            measure=hx * hy,
            edge_ids=tuple(cell_edges[cid(ix, iy)]),
        )
        for iy in range(ny)
        for ix in range(nx)
    ]
    cells.sort(key=lambda c: c.id)

    # corner grid for the VTK writer
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    points = np.array([[x, y] for y in ys for x in xs])

    def pid(ix, iy):
        return iy * (nx + 1) + ix

    cell_nodes = [
        (pid(ix, iy), pid(ix + 1, iy), pid(ix + 1, iy + 1), pid(ix, iy + 1))
        for iy in range(ny)
        for ix in range(nx)
    ]
    return Mesh(2, cells, edges, points=points, cell_nodes=cell_nodes)


# -- triangle meshes ----------------------------------------------------------------


def _circumcenter(a, b, c):
    d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    ux = (
        (a[0] ** 2 + a[1] ** 2) * (b[1] - c[1])
        + (b[0] ** 2 + b[1] ** 2) * (c[1] - a[1])
        + (c[0] ** 2 + c[1] ** 2) * (a[1] - b[1])
    ) / d
    uy = (
        (a[0] ** 2 + a[1] ** 2) * (c[0] - b[0])
        + (b[0] ** 2 + b[1] ** 2) * (a[0] - c[0])
        + (c[0] ** 2 + c[1] ** 2) * (b[0] - a[0])
    ) / d
    return np.array([ux, uy])


def load_triangle_mesh(nodes, triangles, dirichlet_predicate) -> Mesh:
    """Build an admissible mesh from a conforming triangulation.

    Cell centers are circumcenters, so every triangle must be strictly acute;
    otherwise the center-to-edge distance degenerates and the two-point flux
    loses consistency.  Obtuse or right triangles raise AdmissibilityError
    naming the offending triangle, broken connectivity raises TopologyError.
    """
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.intp)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise TopologyError("nodes must be an (N, 2) array")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise TopologyError("triangles must be an (M, 3) array")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(nodes)):
        raise TopologyError("triangle references a node that does not exist")

    n_tri = len(triangles)
    centers = np.empty((n_tri, 2))
    measures = np.empty(n_tri)
    for t, (i, j, k) in enumerate(triangles):
        a, b, c = nodes[i], nodes[j], nodes[k]
        area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        if area < 1e-14:
            raise TopologyError(f"triangle {t} is degenerate (zero area)")
        for (u, v, w) in ((a, b, c), (b, c, a), (c, a, b)):
            e1, e2 = v - u, w - u
            dot = float(e1 @ e2)
            if dot <= 1e-12 * np.linalg.norm(e1) * np.linalg.norm(e2):
                raise AdmissibilityError(
                    f"triangle {t} is not acute (circumcenter not strictly inside)"
                )
        centers[t] = _circumcenter(a, b, c)
        measures[t] = area

    side_map: dict[tuple[int, int], list[int]] = {}
    for t, (i, j, k) in enumerate(triangles):
        for u, v in ((i, j), (j, k), (k, i)):
            side_map.setdefault((min(u, v), max(u, v)), []).append(t)

    cell_edges = [[] for _ in range(n_tri)]
    edges = []
    for (u, v), tris in sorted(side_map.items()):
        if len(tris) > 2:
            raise TopologyError(f"edge ({u}, {v}) is shared by more than two triangles")
        pa, pb = nodes[u], nodes[v]
        mid = 0.5 * (pa + pb)
        measure = float(np.linalg.norm(pb - pa))
        tangent = (pb - pa) / measure
        normal = np.array([tangent[1], -tangent[0]])
        eid = len(edges)
        if len(tris) == 2:
            K, L = tris
            sK = float((centers[K] - mid) @ normal)
            sL = float((centers[L] - mid) @ normal)
            if sK * sL >= 0.0:
                raise AdmissibilityError(
                    f"triangles {K} and {L}: circumcenters on the same side of their shared edge"
                )
            if sK > 0:  # orient the normal from K towards L
                K, L, sK, sL = L, K, sL, sK
            distance = float(np.linalg.norm(centers[L] - centers[K]))
            edges.append(
                Edge(
                    id=eid,
                    kind=EdgeKind.INTERIOR,
                    cells=(K, L),
                    measure=measure,
                    distance=distance,
                    transmissibility=measure / distance,
                    normal_from_K=normal.copy(),
                    dual_measure=measure * distance / 2,
                    center_distances=(abs(sK), abs(sL)),
                )
            )
            cell_edges[K].append(eid)
            cell_edges[L].append(eid)
        else:
            (K,) = tris
            s = float((centers[K] - mid) @ normal)
            outward = -normal if s > 0 else normal
            d = abs(s)
            if d <= 1e-14:
                raise AdmissibilityError(
                    f"triangle {K}: circumcenter lies on boundary edge ({u}, {v})"
                )
            kind = EdgeKind.DIRICHLET if dirichlet_predicate(mid[0], mid[1]) else EdgeKind.NEUMANN
            edges.append(
                Edge(
                    id=eid,
                    kind=kind,
                    cells=(K,),
                    measure=measure,
                    distance=d,
                    transmissibility=measure / d,
                    normal_from_K=outward,
                    dual_measure=measure * d / 2,
                    center_distances=(d,),
                )
            )
            cell_edges[K].append(eid)

    cells = [
        Cell(id=t, center=centers[t], measure=float(measures[t]), edge_ids=tuple(cell_edges[t]))
        for t in range(n_tri)
    ]
    return Mesh(2, cells, edges, points=nodes, cell_nodes=[tuple(t) for t in triangles])


# -- triangle mesh file format -------------------------------------------------------
#
#   nodes <N> triangles <M>
#   x y          (N lines)
#   i j k        (M lines, 0-based)


def read_triangle_mesh_file(path):
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split()
    if len(tokens) < 4 or tokens[0] != "nodes" or tokens[2] != "triangles":
        raise TopologyError(f"{path}: expected header 'nodes <N> triangles <M>'")
    n, m = int(tokens[1]), int(tokens[3])
    body = tokens[4:]
    if len(body) != 2 * n + 3 * m:
        raise TopologyError(f"{path}: truncated mesh file")
    nodes = np.array(body[: 2 * n], dtype=float).reshape(n, 2)
    triangles = np.array(body[2 * n :], dtype=np.intp).reshape(m, 3)
    return nodes, triangles


def write_triangle_mesh_file(path, nodes, triangles):
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.intp)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"nodes {len(nodes)} triangles {len(triangles)}\n")
        for x, y in nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for i, j, k in triangles:
            fh.write(f"{int(i)} {int(j)} {int(k)}\n")


def load_triangle_mesh_file(path, dirichlet_predicate) -> Mesh:
    nodes, triangles = read_triangle_mesh_file(path)
    return load_triangle_mesh(nodes, triangles, dirichlet_predicate)
