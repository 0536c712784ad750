"""Conforming two-subdomain triangulations with an explicit interface.

Cells tagged ``FLUID`` form the free-flow region and cells tagged ``POROUS``
the poroelastic region.  Interface facets are the edges shared by one cell of
each kind.  Their normal points from the fluid cell into the porous cell and
the tangent is that normal rotated by -90 degrees, ``(nx, ny) -> (ny, -nx)``.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, TextIO

import numpy as np

from .fem import LOCAL_EDGES


class Subdomain(enum.IntEnum):
    FLUID = 0
    POROUS = 1


# Boundary marker names used by default on generated meshes.
FLUID_DIRICHLET = "fluid_u"
FLUID_TRACTION = "fluid_sigma"
POROUS_DISPLACEMENT = "porous_d"
POROUS_PRESSURE = "porous_p"

DEFAULT_SIDE_MARKERS = {
    "top": FLUID_DIRICHLET,
    "fluid_left": FLUID_TRACTION,
    "fluid_right": FLUID_TRACTION,
    "porous_left": POROUS_DISPLACEMENT,
    "porous_right": POROUS_DISPLACEMENT,
    "bottom": POROUS_PRESSURE,
}


class MeshError(ValueError):
    """Raised for malformed or geometrically invalid meshes."""


@dataclass(frozen=True)
class FacetFrame:
    normal: np.ndarray
    tangent: np.ndarray
    length: float


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = vertices[cells]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


@dataclass(eq=False)
class Mesh:
    """Immutable triangulation.

    Attributes
    ----------
    vertices : (N, 2) float
    cells : (M, 3) int, counterclockwise
    cell_subdomain : (M,) int, values of :class:`Subdomain`
    boundary_facets : (K, 2) int vertex pairs on the outer boundary
    boundary_markers : tuple of K marker names
    interface_facets : (L, 2) int vertex pairs on the interface
    interface_fluid_cell, interface_porous_cell : (L,) int
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_subdomain: np.ndarray
    boundary_facets: np.ndarray
    boundary_markers: tuple
    interface_facets: np.ndarray
    interface_fluid_cell: np.ndarray
    interface_porous_cell: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vertices = _readonly(np.asarray(self.vertices, dtype=float).reshape(-1, 2))
        self.cells = _readonly(np.asarray(self.cells, dtype=np.int64).reshape(-1, 3))
        self.cell_subdomain = _readonly(np.asarray(self.cell_subdomain, dtype=np.int8))
        self.boundary_facets = _readonly(np.asarray(self.boundary_facets, dtype=np.int64).reshape(-1, 2))
        self.boundary_markers = tuple(str(m) for m in self.boundary_markers)
        self.interface_facets = _readonly(np.asarray(self.interface_facets, dtype=np.int64).reshape(-1, 2))
        self.interface_fluid_cell = _readonly(np.asarray(self.interface_fluid_cell, dtype=np.int64))
        self.interface_porous_cell = _readonly(np.asarray(self.interface_porous_cell, dtype=np.int64))
        if len(self.boundary_markers) != len(self.boundary_facets):
            raise MeshError("one marker per boundary facet is required")

    # -- sizes -------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def markers(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.boundary_markers)))

    def cells_of(self, subdomain: Subdomain | None) -> np.ndarray:
        if subdomain is None:
            return np.arange(self.n_cells)
        return np.flatnonzero(self.cell_subdomain == int(subdomain))

    # -- edges -------------------------------------------------------------
    @cached_property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs, lexicographically ordered."""
        local = np.concatenate([self.cells[:, [i, j]] for i, j in LOCAL_EDGES])
        local.sort(axis=1)
        uniq = np.unique(local, axis=0)
        return _readonly(uniq)

    @cached_property
    def cell_edges(self) -> np.ndarray:
        """(M, 3) global edge index of each local edge."""
        lookup = self._edge_lookup
        out = np.empty((self.n_cells, 3), dtype=np.int64)
        for k, (i, j) in enumerate(LOCAL_EDGES):
            a = self.cells[:, i]
            b = self.cells[:, j]
            out[:, k] = lookup(np.minimum(a, b), np.maximum(a, b))
        return _readonly(out)

    @cached_property
    def _edge_keys(self) -> np.ndarray:
        return self.edges[:, 0] * self.n_vertices + self.edges[:, 1]

    def _edge_lookup(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        keys = np.asarray(lo) * self.n_vertices + np.asarray(hi)
        pos = np.searchsorted(self._edge_keys, keys)
        pos = np.clip(pos, 0, len(self._edge_keys) - 1)
        if not np.all(self._edge_keys[pos] == keys):
            raise MeshError("vertex pair is not an edge of the mesh")
        return pos

    def edge_index(self, i, j) -> np.ndarray | int:
        """Global edge index of the vertex pair(s) (order irrelevant)."""
        i = np.asarray(i)
        j = np.asarray(j)
        out = self._edge_lookup(np.minimum(i, j), np.maximum(i, j))
        return int(out) if out.ndim == 0 else out

    @cached_property
    def edge_cells(self) -> np.ndarray:
        """(E, 2) adjacent cells per edge, -1 where missing."""
        ce = self.cell_edges
        out = np.full((len(self.edges), 2), -1, dtype=np.int64)
        cells = np.repeat(np.arange(self.n_cells), 3)
        flat = ce.ravel()
        order = np.argsort(flat, kind="stable")
        flat = flat[order]
        cells = cells[order]
        first = np.ones(len(flat), dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        out[flat[first], 0] = cells[first]
        out[flat[~first], 1] = cells[~first]
        return _readonly(out)

    # -- geometry ----------------------------------------------------------
    @cached_property
    def cell_areas(self) -> np.ndarray:
        return _readonly(signed_areas(self.vertices, self.cells))

    @cached_property
    def cell_centroids(self) -> np.ndarray:
        return _readonly(self.vertices[self.cells].mean(axis=1))

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        p = self.vertices[self.cells]
        lengths = np.stack(
            [np.linalg.norm(p[:, j] - p[:, i], axis=1) for i, j in LOCAL_EDGES], axis=1
        )
        return _readonly(lengths.max(axis=1))

    @property
    def max_diameter(self) -> float:
        return float(self.cell_diameters.max())

    def facets_with_marker(self, marker: str) -> np.ndarray:
        """Indices into ``boundary_facets`` carrying ``marker``."""
        if marker not in self.boundary_markers:
            raise KeyError(f"unknown boundary marker {marker!r}; known: {', '.join(self.markers)}")
        return np.array([k for k, m in enumerate(self.boundary_markers) if m == marker], dtype=np.int64)

    @cached_property
    def boundary_cells(self) -> np.ndarray:
        """Cell adjacent to each boundary facet."""
        e = self.edge_index(self.boundary_facets[:, 0], self.boundary_facets[:, 1])
        return _readonly(np.atleast_1d(self.edge_cells[e, 0]))

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology and markers at new vertex positions."""
        return Mesh(
            vertices=vertices,
            cells=self.cells,
            cell_subdomain=self.cell_subdomain,
            boundary_facets=self.boundary_facets,
            boundary_markers=self.boundary_markers,
            interface_facets=self.interface_facets,
            interface_fluid_cell=self.interface_fluid_cell,
            interface_porous_cell=self.interface_porous_cell,
        )


def relabel_boundary(mesh: Mesh, marker: str, new_marker: str, predicate: Callable) -> Mesh:
    """Rename facets of ``marker`` whose midpoint satisfies ``predicate(x, y)``."""
    rows = mesh.facets_with_marker(marker)
    mid = mesh.vertices[mesh.boundary_facets[rows]].mean(axis=1)
    hit = np.asarray(predicate(mid[:, 0], mid[:, 1]), dtype=bool)
    names = list(mesh.boundary_markers)
    for r in rows[hit]:
        names[r] = new_marker
    return Mesh(mesh.vertices, mesh.cells, mesh.cell_subdomain, mesh.boundary_facets, tuple(names),
                mesh.interface_facets, mesh.interface_fluid_cell, mesh.interface_porous_cell)


# ---------------------------------------------------------------------------
# frames


def _outward_normal(vertices, a, b, cell_centroid):
    d = vertices[b] - vertices[a]
    length = float(np.hypot(d[0], d[1]))
    n = np.array([d[1], -d[0]]) / length
    mid = 0.5 * (vertices[a] + vertices[b])
    if np.dot(n, mid - cell_centroid) < 0:
        n = -n
    return n, length


def _rotate_minus_90(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n)
    return np.stack([n[..., 1], -n[..., 0]], axis=-1)


def facet_frame(mesh: Mesh, facet_id: int) -> FacetFrame:
    """Normal, tangent and length of an interface or boundary edge.

    ``facet_id`` is a global edge index (see :meth:`Mesh.edge_index`).
    """
    facet_id = int(facet_id)
    if not 0 <= facet_id < len(mesh.edges):
        raise MeshError(f"facet {facet_id} out of range")
    a, b = mesh.edges[facet_id]
    c0, c1 = mesh.edge_cells[facet_id]
    if c1 < 0:
        n, length = _outward_normal(mesh.vertices, a, b, mesh.cell_centroids[c0])
    else:
        tags = mesh.cell_subdomain[[c0, c1]]
        if tags[0] == tags[1]:
            raise MeshError(f"facet {facet_id} is interior to one subdomain")
        fluid = c0 if tags[0] == Subdomain.FLUID else c1
        n, length = _outward_normal(mesh.vertices, a, b, mesh.cell_centroids[fluid])
    return FacetFrame(normal=n, tangent=_rotate_minus_90(n), length=length)


@dataclass(frozen=True)
class FacetGeometry:
    """Vectorized frames for a batch of facets."""

    normals: np.ndarray
    tangents: np.ndarray
    lengths: np.ndarray


def interface_geometry(mesh: Mesh) -> FacetGeometry:
    return _batch_frames(mesh, mesh.interface_facets, mesh.interface_fluid_cell)


def boundary_geometry(mesh: Mesh, facet_rows: np.ndarray | None = None) -> FacetGeometry:
    rows = np.arange(len(mesh.boundary_facets)) if facet_rows is None else np.asarray(facet_rows)
    return _batch_frames(mesh, mesh.boundary_facets[rows], mesh.boundary_cells[rows])


def _batch_frames(mesh: Mesh, facets: np.ndarray, cells: np.ndarray) -> FacetGeometry:
    v = mesh.vertices
    d = v[facets[:, 1]] - v[facets[:, 0]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    n = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    mid = 0.5 * (v[facets[:, 1]] + v[facets[:, 0]])
    flip = np.einsum("ij,ij->i", n, mid - mesh.cell_centroids[cells]) < 0
    n[flip] *= -1.0
    return FacetGeometry(normals=n, tangents=_rotate_minus_90(n), lengths=lengths)


def cell_quality(mesh: Mesh, cells: np.ndarray | None = None) -> np.ndarray:
    """Shape quality ``4*sqrt(3)*area / sum(edge^2)``; 1 for equilateral, <= 0 if inverted."""
    cells_idx = np.arange(mesh.n_cells) if cells is None else np.asarray(cells)
    p = mesh.vertices[mesh.cells[cells_idx]]
    sq = sum(((p[:, j] - p[:, i]) ** 2).sum(axis=1) for i, j in LOCAL_EDGES)
    return 4.0 * np.sqrt(3.0) * mesh.cell_areas[cells_idx] / sq


# ---------------------------------------------------------------------------
# construction


def _check_interval(name, iv):
    lo, hi = (float(v) for v in iv)
    if not np.isfinite([lo, hi]).all() or hi <= lo:
        raise MeshError(f"{name} must be a nonempty increasing interval, got {iv!r}")
    return lo, hi


def generate_two_layer_rect(
    x_range,
    y_fluid,
    y_porous,
    nx: int,
    ny_each: int,
    markers: Mapping[str, str] | None = None,
) -> Mesh:
    """Structured two-layer rectangle, fluid on top of porous.

    Each grid quad is split along its lower-left to upper-right diagonal.
    ``markers`` overrides entries of the default side-to-marker map, whose
    keys are ``top``, ``bottom``, ``fluid_left``, ``fluid_right``,
    ``porous_left`` and ``porous_right``.
    """
    x0, x1 = _check_interval("x_range", x_range)
    yf0, yf1 = _check_interval("y_fluid", y_fluid)
    yp0, yp1 = _check_interval("y_porous", y_porous)
    if yp1 != yf0:
        raise MeshError("porous layer must end where the fluid layer starts")
    if int(nx) < 1 or int(ny_each) < 1:
        raise MeshError("cell counts must be at least 1")
    nx, ny = int(nx), int(ny_each)
    side = dict(DEFAULT_SIDE_MARKERS)
    if markers:
        unknown = set(markers) - set(side)
        if unknown:
            raise MeshError(f"unknown side names {sorted(unknown)}")
        side.update(markers)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.concatenate([np.linspace(yp0, yp1, ny + 1), np.linspace(yf0, yf1, ny + 1)[1:]])
    rows = len(ys)
    X, Y = np.meshgrid(xs, ys)  # (rows, nx+1)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    cells, tags = [], []
    for j in range(rows - 1):
        tag = Subdomain.POROUS if j < ny else Subdomain.FLUID
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells += [(a, b, c), (a, c, d)]
            tags += [tag, tag]
    cells = np.array(cells)

    facets, names = [], []
    top = rows - 1
    for i in range(nx):
        facets.append((vid(i, 0), vid(i + 1, 0)))
        names.append(side["bottom"])
        facets.append((vid(i, top), vid(i + 1, top)))
        names.append(side["top"])
    for j in range(rows - 1):
        porous = j < ny
        facets.append((vid(0, j), vid(0, j + 1)))
        names.append(side["porous_left" if porous else "fluid_left"])
        facets.append((vid(nx, j), vid(nx, j + 1)))
        names.append(side["porous_right" if porous else "fluid_right"])

    # Interface row j = ny, quads of row ny-1 (porous) and ny (fluid).
    # The bottom edge of quad (i, ny) belongs to its first triangle (a, b, c);
    # the top edge of quad (i, ny-1) to its second triangle (a, c, d).
    iface, fcell, pcell = [], [], []
    for i in range(nx):
        iface.append((vid(i, ny), vid(i + 1, ny)))
        fcell.append(2 * (ny * nx + i))
        pcell.append(2 * ((ny - 1) * nx + i) + 1)

    return Mesh(
        vertices=vertices,
        cells=cells,
        cell_subdomain=np.array(tags, dtype=np.int8),
        boundary_facets=np.array(facets),
        boundary_markers=tuple(names),
        interface_facets=np.array(iface),
        interface_fluid_cell=np.array(fcell),
        interface_porous_cell=np.array(pcell),
    )


def build_mesh(vertices, cells, cell_subdomain, boundary_facets=(), boundary_markers=()) -> Mesh:
    """Validate raw arrays and derive the interface.

    Clockwise cells are reoriented, degenerate cells and non-manifold edges
    rejected.  Interface facets are ordered by their smallest vertex index.
    """
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
    cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
    tags = np.asarray(cell_subdomain, dtype=np.int64)
    if len(tags) != len(cells):
        raise MeshError("one subdomain tag per cell is required")
    if not np.isin(tags, [int(Subdomain.FLUID), int(Subdomain.POROUS)]).all():
        raise MeshError("subdomain tags must be 0 (fluid) or 1 (porous)")
    nv = len(vertices)
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        bad = int(np.flatnonzero((cells < 0).any(axis=1) | (cells >= nv).any(axis=1))[0])
        raise IndexError(f"cell {bad} references a vertex outside 0..{nv - 1}")
    if not np.isfinite(vertices).all():
        raise MeshError("vertex coordinates must be finite")

    area = signed_areas(vertices, cells)
    p = vertices[cells]
    scale = max(float(np.ptp(vertices, axis=0).max()) if nv else 1.0, np.finfo(float).tiny)
    zero = np.abs(area) <= 1e-14 * scale**2
    if zero.any():
        raise MeshError(f"cell {int(np.flatnonzero(zero)[0])} has zero area")
    cw = area < 0
    cells[cw] = cells[cw][:, [0, 2, 1]]
    del p

    bfacets = np.asarray(boundary_facets, dtype=np.int64).reshape(-1, 2)
    if bfacets.size and (bfacets.min() < 0 or bfacets.max() >= nv):
        raise IndexError("boundary facet references a vertex outside the mesh")

    # Edge-to-cell incidence.
    local = np.concatenate([cells[:, [i, j]] for i, j in LOCAL_EDGES])
    owner = np.tile(np.arange(len(cells)), 3)
    key = np.sort(local, axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if (counts > 2).any():
        e = uniq[np.flatnonzero(counts > 2)[0]]
        raise MeshError(f"non-manifold edge ({e[0]}, {e[1]}) shared by more than two cells")
    order = np.argsort(inverse, kind="stable")
    inv_sorted = inverse[order]
    own_sorted = owner[order]
    starts = np.searchsorted(inv_sorted, np.arange(len(uniq)))
    iface, fcell, pcell = [], [], []
    for e in np.flatnonzero(counts == 2):
        c0, c1 = own_sorted[starts[e]], own_sorted[starts[e] + 1]
        if tags[c0] != tags[c1]:
            f, pc = (c0, c1) if tags[c0] == Subdomain.FLUID else (c1, c0)
            iface.append(tuple(uniq[e]))
            fcell.append(f)
            pcell.append(pc)

    boundary_edges = {tuple(e) for e in uniq[counts == 1]}
    for a, b in bfacets:
        if (min(a, b), max(a, b)) not in boundary_edges:
            raise MeshError(f"facet ({a}, {b}) is not a boundary edge")

    return Mesh(
        vertices=vertices,
        cells=cells,
        cell_subdomain=tags.astype(np.int8),
        boundary_facets=bfacets,
        boundary_markers=tuple(boundary_markers),
        interface_facets=np.array(iface, dtype=np.int64).reshape(-1, 2),
        interface_fluid_cell=np.array(fcell, dtype=np.int64),
        interface_porous_cell=np.array(pcell, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# text format

HEADER = "mesh2d v1"


def write_mesh(mesh: Mesh, stream: TextIO) -> None:
    """Serialize in the ``mesh2d v1`` text format."""
    out = [HEADER, f"vertices {mesh.n_vertices}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"cells {mesh.n_cells}")
    out += [f"{i} {j} {k} {t}" for (i, j, k), t in zip(mesh.cells.tolist(), mesh.cell_subdomain.tolist())]
    out.append(f"facets {len(mesh.boundary_facets)}")
    out += [f"{i} {j} {m}" for (i, j), m in zip(mesh.boundary_facets.tolist(), mesh.boundary_markers)]
    stream.write("\n".join(out) + "\n")


def mesh_to_text(mesh: Mesh) -> str:
    buf = io.StringIO()
    write_mesh(mesh, buf)
    return buf.getvalue()


def _parse_section(lines: list, pos: int, name: str, ncols: int, lineno_offset=1):
    if pos >= len(lines):
        raise MeshError(f"missing '{name}' section")
    head = lines[pos].split()
    if len(head) != 2 or head[0] != name:
        raise MeshError(f"line {pos + lineno_offset}: expected '{name} <count>'")
    try:
        count = int(head[1])
    except ValueError:
        raise MeshError(f"line {pos + lineno_offset}: bad count {head[1]!r}") from None
    if count < 0 or pos + 1 + count > len(lines):
        raise MeshError(f"line {pos + lineno_offset}: section '{name}' is truncated")
    rows = []
    for k in range(pos + 1, pos + 1 + count):
        toks = lines[k].split()
        if len(toks) != ncols:
            raise MeshError(f"line {k + lineno_offset}: expected {ncols} fields, got {len(toks)}")
        rows.append(toks)
    return rows, pos + 1 + count


def read_mesh(stream: TextIO | Iterable[str]) -> Mesh:
    """Parse the ``mesh2d v1`` text format and rebuild the interface."""
    lines = [ln.strip() for ln in stream]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != HEADER:
        raise MeshError(f"missing '{HEADER}' header")
    try:
        vrows, pos = _parse_section(lines, 1, "vertices", 2)
        crows, pos = _parse_section(lines, pos, "cells", 4)
        frows, pos = _parse_section(lines, pos, "facets", 3)
        vertices = np.array([[float(a), float(b)] for a, b in vrows]).reshape(-1, 2)
        cells = np.array([[int(a), int(b), int(c)] for a, b, c, _ in crows]).reshape(-1, 3)
        tags = np.array([_parse_tag(t) for *_, t in crows], dtype=np.int64)
        facets = np.array([[int(a), int(b)] for a, b, _ in frows]).reshape(-1, 2)
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed entry: {exc}") from None
    if pos != len(lines):
        raise MeshError(f"unexpected trailing content: {lines[pos]!r}")
    return build_mesh(vertices, cells, tags, facets, [m for *_, m in frows])


def _parse_tag(tok: str) -> int:
    names = {"fluid": 0, "porous": 1, "F": 0, "P": 1}
    if tok in names:
        return names[tok]
    return int(tok)


# ---------------------------------------------------------------------------
# refinement


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle split into four through edge midpoints.

    Children of cell ``c`` are ``4c + k`` for the corner children k = 0, 1, 2
    (containing local vertex k) and ``4c + 3`` for the middle one.
    """
    nv = mesh.n_vertices
    edges = mesh.edges
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    ce = mesh.cell_edges + nv  # midpoint vertex ids, local edge order (01, 12, 20)
    v0, v1, v2 = mesh.cells.T
    m01, m12, m20 = ce.T
    children = np.stack(
        [
            np.column_stack([v0, m01, m20]),
            np.column_stack([m01, v1, m12]),
            np.column_stack([m20, m12, v2]),
            np.column_stack([m01, m12, m20]),
        ],
        axis=1,
    ).reshape(-1, 3)
    tags = np.repeat(mesh.cell_subdomain, 4)

    def split(facets):
        m = mesh.edge_index(facets[:, 0], facets[:, 1]) + nv
        m = np.atleast_1d(m)
        first = np.column_stack([facets[:, 0], m])
        second = np.column_stack([m, facets[:, 1]])
        return np.stack([first, second], axis=1).reshape(-1, 2)

    bf = split(mesh.boundary_facets) if len(mesh.boundary_facets) else mesh.boundary_facets
    bm = tuple(m for m in mesh.boundary_markers for _ in range(2))

    def child_at(cell, vertex):
        local = int(np.flatnonzero(mesh.cells[cell] == vertex)[0])
        return 4 * cell + local

    iface, fcell, pcell = [], [], []
    for (a, b), fc, pc in zip(mesh.interface_facets, mesh.interface_fluid_cell, mesh.interface_porous_cell):
        m = mesh.edge_index(a, b) + nv
        for p, q in ((a, m), (m, b)):
            end = a if p == a else b
            iface.append((p, q))
            fcell.append(child_at(fc, end))
            pcell.append(child_at(pc, end))

    return Mesh(
        vertices=vertices,
        cells=children,
        cell_subdomain=tags,
        boundary_facets=bf,
        boundary_markers=bm,
        interface_facets=np.array(iface, dtype=np.int64).reshape(-1, 2),
        interface_fluid_cell=np.array(fcell, dtype=np.int64),
        interface_porous_cell=np.array(pcell, dtype=np.int64),
    )


def validate(mesh: Mesh) -> None:
    """Check the structural invariants; raise :class:`MeshError` on violation."""
    if (mesh.cell_areas <= 0).any():
        raise MeshError(f"cell {int(np.argmin(mesh.cell_areas))} is not counterclockwise")
    geo = interface_geometry(mesh)
    if len(mesh.interface_facets):
        if (mesh.cell_subdomain[mesh.interface_fluid_cell] != Subdomain.FLUID).any():
            raise MeshError("interface fluid cell has wrong tag")
        if (mesh.cell_subdomain[mesh.interface_porous_cell] != Subdomain.POROUS).any():
            raise MeshError("interface porous cell has wrong tag")
        shift = mesh.cell_centroids[mesh.interface_porous_cell] - mesh.cell_centroids[mesh.interface_fluid_cell]
        if (np.einsum("ij,ij->i", geo.normals, shift) < 0).any():
            raise MeshError("interface normal does not point into the porous side")
