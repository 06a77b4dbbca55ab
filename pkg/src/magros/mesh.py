"""Structured triangulations of rectangles with tagged boundary facets."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

BoundaryValue = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
ROBIN = "robin"
_KINDS = (DIRICHLET, NEUMANN, ROBIN)


@dataclass(frozen=True)
class BoundaryTag:
    """Boundary condition carried by one facet.

    ``value`` is the datum g (a constant or a vectorised function of x, y).
    ``robin_alpha`` is required for Robin facets and forbidden otherwise.
    """

    kind: str
    value: BoundaryValue = 0.0
    robin_alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown boundary kind {self.kind!r}; expected one of {_KINDS}")
        if (self.kind == ROBIN) != (self.robin_alpha is not None):
            raise ValueError("robin_alpha must be given for Robin facets and only for them")

    def evaluate(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if callable(self.value):
            return np.broadcast_to(np.asarray(self.value(x, y), dtype=float), x.shape).copy()
        return np.full(x.shape, float(self.value))


def Dirichlet(value: BoundaryValue = 0.0) -> BoundaryTag:
    return BoundaryTag(DIRICHLET, value)


def Neumann(value: BoundaryValue = 0.0) -> BoundaryTag:
    return BoundaryTag(NEUMANN, value)


def Robin(alpha: float, value: BoundaryValue = 0.0) -> BoundaryTag:
    return BoundaryTag(ROBIN, value, float(alpha))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of ``[0, L1] x [0, L2]``.

    nodes    -- (n_nodes, 2) coordinates, row-major over the grid
    elements -- (n_elements, 3) node indices, counter-clockwise
    facets   -- (n_facets, 2) boundary edges, walked counter-clockwise
    tags     -- one BoundaryTag per facet (``None`` until tagged)
    """

    nodes: np.ndarray
    elements: np.ndarray
    facets: np.ndarray
    L1: float
    L2: float
    nx: int
    ny: int
    h: float
    tags: Optional[tuple] = field(default=None)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def facet_midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[self.facets[:, 0]] + self.nodes[self.facets[:, 1]])

    def facet_lengths(self) -> np.ndarray:
        d = self.nodes[self.facets[:, 1]] - self.nodes[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def dirichlet_nodes(self) -> np.ndarray:
        """Sorted node indices touching at least one Dirichlet facet."""
        self._require_tags()
        mask = np.array([t.kind == DIRICHLET for t in self.tags], dtype=bool)
        return np.unique(self.facets[mask].ravel())

    def dirichlet_values(self) -> np.ndarray:
        """Boundary datum at each node of :meth:`dirichlet_nodes` (last writer wins on junctions)."""
        self._require_tags()
        idx = self.dirichlet_nodes()
        vals = np.zeros(self.n_nodes)
        for tag, (a, b) in zip(self.tags, self.facets):
            if tag.kind != DIRICHLET:
                continue
            pts = self.nodes[[a, b]]
            vals[[a, b]] = tag.evaluate(pts[:, 0], pts[:, 1])
        return vals[idx]

    def _require_tags(self):
        if self.tags is None:
            raise ValueError("mesh boundary is untagged; call tag_boundary first")


def build_rect_mesh(L1: float, L2: float, nx: int, ny: int) -> Mesh:
    if not (L1 > 0 and L2 > 0):
        raise ValueError(f"domain lengths must be positive, got L1={L1}, L2={L2}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"need integer nx, ny >= 1, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    L1, L2 = float(L1), float(L2)

    xs = L1 * np.arange(nx + 1) / nx
    ys = L2 * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys)  # row j holds y = ys[j]
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    n0, n1, n2, n3 = nid(I, J), nid(I + 1, J), nid(I + 1, J + 1), nid(I, J + 1)
    # diagonal n0 -> n2 (lower-left to upper-right); two triangles per cell, cell-major
    lower = np.column_stack([n0, n1, n2])
    upper = np.column_stack([n0, n2, n3])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)

    i_ = np.arange(nx)
    j_ = np.arange(ny)
    bottom = np.column_stack([nid(i_, 0), nid(i_ + 1, 0)])
    right = np.column_stack([nid(nx, j_), nid(nx, j_ + 1)])
    top = np.column_stack([nid(nx - i_, ny), nid(nx - i_ - 1, ny)])
    left = np.column_stack([nid(0, ny - j_), nid(0, ny - j_ - 1)])
    facets = np.vstack([bottom, right, top, left])

    h = float(np.hypot(L1 / nx, L2 / ny))
    return Mesh(nodes, elements.astype(np.int64), facets.astype(np.int64), L1, L2, nx, ny, h)


def tag_boundary(mesh: Mesh, rule: Callable[[float, float], BoundaryTag]) -> Mesh:
    """Return a copy of ``mesh`` whose facets carry ``rule(x_mid, y_mid)``."""
    tags = []
    for x, y in mesh.facet_midpoints():
        tag = rule(float(x), float(y))
        if not isinstance(tag, BoundaryTag):
            raise TypeError(f"boundary rule returned {tag!r} at ({x}, {y})")
        tags.append(tag)
    return replace(mesh, tags=tuple(tags))


def write_vtk(path, mesh: Mesh, point_data: Optional[dict] = None, title: str = "magros") -> None:
    """Dump the mesh (and optional nodal fields) as a legacy ASCII VTK unstructured grid."""
    point_data = point_data or {}
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {mesh.n_elements} {4 * mesh.n_elements}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += ["5"] * mesh.n_elements
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.n_nodes,):
                raise ValueError(f"field {name!r} has shape {values.shape}, expected ({mesh.n_nodes},)")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [f"{v:.17g}" for v in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def interior_edge_counts(mesh: Mesh) -> dict:
    """Map each undirected edge to the number of elements containing it."""
    counts: dict = {}
    for tri in mesh.elements:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    return counts


def boundary_edges(facets: Sequence) -> set:
    return {(min(a, b), max(a, b)) for a, b in facets}
