"""Degree-of-freedom maps, block layout, constrained DOFs and projections.

Scalar nodes of a space are numbered per subdomain: the vertices touched by
the subdomain's cells (by increasing global vertex id), then the edges (P2),
then one bubble per cell (P1_BUBBLE).  Component ``c`` of node ``n`` of a
vector space is DOF ``2 n + c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .fem import MAX_ASSEMBLY_DEGREE, ElementKind, affine_map, assembly_rule, eval_basis, push_gradients
from .mesh import Mesh, Subdomain, boundary_geometry

FIELDS = ("u", "pF", "d", "pP", "phi")


class SpaceError(ValueError):
    pass


@dataclass(eq=False)
class Space:
    """Continuous Lagrange space on the cells of one subdomain."""

    mesh: Mesh
    subdomain: Subdomain | None
    kind: ElementKind
    components: int
    field: str | None
    cells: np.ndarray  # global ids of the cells covered
    cell_nodes: np.ndarray  # (nc, nloc) scalar node ids
    node_coords: np.ndarray  # (n_nodes, 2)
    node_vertex: np.ndarray  # global vertex id per node, -1 for edge / bubble nodes
    node_edge: np.ndarray  # global edge id per node, -1 otherwise

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.components

    def __len__(self) -> int:
        return self.n_dofs

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(nc, nloc * components) DOF table; local DOF ``components * a + c``."""
        if self.components == 1:
            return self.cell_nodes
        k = self.components
        return (k * self.cell_nodes[:, :, None] + np.arange(k)).reshape(len(self.cells), -1)

    @cached_property
    def cell_position(self) -> np.ndarray:
        """Map global cell id -> row in ``cells`` (-1 if not covered)."""
        pos = np.full(self.mesh.n_cells, -1, dtype=np.int64)
        pos[self.cells] = np.arange(len(self.cells))
        return pos

    @cached_property
    def vertex_node(self) -> np.ndarray:
        out = np.full(self.mesh.n_vertices, -1, dtype=np.int64)
        mask = self.node_vertex >= 0
        out[self.node_vertex[mask]] = np.flatnonzero(mask)
        return out

    @cached_property
    def edge_node(self) -> np.ndarray:
        out = np.full(len(self.mesh.edges), -1, dtype=np.int64)
        mask = self.node_edge >= 0
        out[self.node_edge[mask]] = np.flatnonzero(mask)
        return out

    def with_mesh(self, mesh: Mesh) -> "Space":
        """Same numbering on a mesh with identical topology (moved vertices)."""
        coords = _node_coordinates(mesh, self.kind, self.node_vertex, self.node_edge, self.cells, self.cell_nodes)
        return Space(mesh, self.subdomain, self.kind, self.components, self.field, self.cells,
                     self.cell_nodes, coords, self.node_vertex, self.node_edge)


def _node_coordinates(mesh, kind, node_vertex, node_edge, cells, cell_nodes):
    coords = np.empty((len(node_vertex), 2))
    vmask = node_vertex >= 0
    coords[vmask] = mesh.vertices[node_vertex[vmask]]
    emask = node_edge >= 0
    e = mesh.edges[node_edge[emask]]
    coords[emask] = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    if kind is ElementKind.P1_BUBBLE:
        coords[cell_nodes[:, 3]] = mesh.cell_centroids[cells]
    return coords


def infer_field(subdomain: Subdomain | None, kind: ElementKind, components: int) -> str | None:
    if subdomain is Subdomain.FLUID:
        return "u" if components == 2 else "pF"
    if subdomain is Subdomain.POROUS and components == 2:
        return "d"
    return None


def build_space(
    mesh: Mesh,
    subdomain: Subdomain | None,
    kind: ElementKind,
    components: int = 1,
    field: str | None = None,
) -> Space:
    """Number the DOFs of a Lagrange space over ``subdomain`` (``None`` = all cells).

    ``field`` names the unknown the space discretizes (one of ``u, pF, d, pP,
    phi``); it is inferred where unambiguous.
    """
    if components not in (1, 2):
        raise SpaceError("components must be 1 or 2")
    kind = ElementKind(kind)
    cells = mesh.cells_of(subdomain)
    if len(cells) == 0:
        raise SpaceError(f"subdomain {subdomain!r} has no cells")
    if field is None:
        field = infer_field(subdomain, kind, components)
    elif field not in FIELDS and not field.startswith("aux"):
        raise SpaceError(f"unknown field name {field!r}")

    cv = mesh.cells[cells]
    verts = np.unique(cv)
    node_vertex = [verts]
    node_edge = [np.full(len(verts), -1)]
    vertex_to_node = np.full(mesh.n_vertices, -1, dtype=np.int64)
    vertex_to_node[verts] = np.arange(len(verts))
    parts = [vertex_to_node[cv]]
    offset = len(verts)
    if kind is ElementKind.P2:
        ce = mesh.cell_edges[cells]
        edges = np.unique(ce)
        edge_to_node = np.full(len(mesh.edges), -1, dtype=np.int64)
        edge_to_node[edges] = offset + np.arange(len(edges))
        parts.append(edge_to_node[ce])
        node_vertex.append(np.full(len(edges), -1))
        node_edge.append(edges)
        offset += len(edges)
    elif kind is ElementKind.P1_BUBBLE:
        parts.append((offset + np.arange(len(cells)))[:, None])
        node_vertex.append(np.full(len(cells), -1))
        node_edge.append(np.full(len(cells), -1))
        offset += len(cells)
    cell_nodes = np.hstack(parts).astype(np.int64)
    node_vertex = np.concatenate(node_vertex).astype(np.int64)
    node_edge = np.concatenate(node_edge).astype(np.int64)
    coords = _node_coordinates(mesh, kind, node_vertex, node_edge, cells, cell_nodes)
    return Space(mesh, subdomain, kind, components, field, cells, cell_nodes, coords, node_vertex, node_edge)


# ---------------------------------------------------------------------------
# block layout and DOF sets


@dataclass(frozen=True)
class BlockLayout:
    """Ordered fields with contiguous global index ranges."""

    fields: tuple
    sizes: tuple

    def __post_init__(self):
        if len(self.fields) != len(self.sizes):
            raise ValueError("one size per field")
        if len(set(self.fields)) != len(self.fields):
            raise ValueError("duplicate field names")
        if any(int(s) < 0 for s in self.sizes):
            raise ValueError("field sizes must be nonnegative")

    @classmethod
    def from_spaces(cls, spaces: dict) -> "BlockLayout":
        names = [f for f in FIELDS if f in spaces]
        return cls(tuple(names), tuple(spaces[f].n_dofs for f in names))

    @cached_property
    def offsets(self) -> dict:
        starts = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        return {f: int(s) for f, s in zip(self.fields, starts)}

    @property
    def total(self) -> int:
        return int(sum(self.sizes))

    def size(self, name: str) -> int:
        return int(self.sizes[self.fields.index(name)])

    def slice(self, name: str) -> slice:
        start = self.offsets[name]
        return slice(start, start + self.size(name))

    def split(self, vector: np.ndarray) -> dict:
        return {f: np.asarray(vector)[self.slice(f)] for f in self.fields}

    def join(self, parts: dict) -> np.ndarray:
        out = np.zeros(self.total)
        for f in self.fields:
            if f in parts and parts[f] is not None:
                out[self.slice(f)] = parts[f]
        return out


@dataclass(frozen=True)
class DofSet:
    """Sorted unique DOF indices with prescribed values."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        vals = np.broadcast_to(np.asarray(self.values, dtype=float), idx.shape)
        order = np.argsort(idx, kind="stable")
        idx, vals = idx[order], vals[order]
        if len(idx) > 1:
            dup = idx[1:] == idx[:-1]
            if dup.any():
                conflict = dup & ~np.isclose(vals[1:], vals[:-1], rtol=1e-12, atol=1e-300)
                if conflict.any():
                    k = int(np.flatnonzero(conflict)[0]) + 1
                    raise ValueError(f"conflicting values for constrained DOF {idx[k]}")
                keep = np.concatenate([[True], ~dup])
                idx, vals = idx[keep], vals[keep]
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", np.array(vals, dtype=float))

    def __len__(self) -> int:
        return len(self.indices)

    @classmethod
    def empty(cls) -> "DofSet":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    def shifted(self, offset: int) -> "DofSet":
        return DofSet(self.indices + int(offset), self.values)

    def union(self, *others: "DofSet") -> "DofSet":
        return DofSet(
            np.concatenate([self.indices] + [o.indices for o in others]),
            np.concatenate([self.values] + [o.values for o in others]),
        )


def _eval_value_fn(value_fn, x, y, t, components):
    if value_fn is None:
        value_fn = 0.0
    if callable(value_fn):
        out = value_fn(x, y, t)
    else:
        out = value_fn
    out = np.asarray(out, dtype=float)
    if components == 1:
        return np.broadcast_to(out, x.shape).astype(float)
    if out.ndim == 0:
        return np.broadcast_to(out, (2,) + x.shape).astype(float)
    if out.shape[0] != 2:
        raise SpaceError("vector-valued functions must return an array of shape (2, n)")
    return np.broadcast_to(out, (2,) + x.shape).astype(float)


def marker_nodes(space: Space, marker: str) -> np.ndarray:
    """Scalar nodes of ``space`` lying on facets labelled ``marker``."""
    mesh = space.mesh
    rows = mesh.facets_with_marker(marker)
    facets = mesh.boundary_facets[rows]
    nodes = [space.vertex_node[facets.ravel()]]
    if space.kind is ElementKind.P2:
        e = np.atleast_1d(mesh.edge_index(facets[:, 0], facets[:, 1]))
        nodes.append(space.edge_node[e])
    nodes = np.concatenate(nodes)
    if (nodes < 0).any():
        raise SpaceError(f"marker {marker!r} lies outside the space's subdomain")
    return np.unique(nodes)


def _normal_components(space: Space, marker: str, nodes: np.ndarray) -> np.ndarray:
    mesh = space.mesh
    rows = mesh.facets_with_marker(marker)
    geo = boundary_geometry(mesh, rows)
    n = geo.normals
    comp = np.where(np.abs(n[:, 0]) > 1 - 1e-10, 0, np.where(np.abs(n[:, 1]) > 1 - 1e-10, 1, -1))
    if (comp < 0).any():
        raise SpaceError(f"normal-only constraint on {marker!r} needs axis-aligned facets")
    # Assign each node the component of an adjacent facet.
    facets = mesh.boundary_facets[rows]
    node_comp = {}
    for k, (a, b) in enumerate(facets):
        ids = [space.vertex_node[a], space.vertex_node[b]]
        if space.kind is ElementKind.P2:
            ids.append(space.edge_node[mesh.edge_index(a, b)])
        for i in ids:
            node_comp.setdefault(int(i), set()).add(int(comp[k]))
    return node_comp


def dirichlet_dofs(
    space: Space,
    marker: str,
    component_mask: Sequence[bool] | str | None = None,
    value_fn: Callable | float | Sequence[float] | None = 0.0,
    time: float = 0.0,
) -> DofSet:
    """DOFs on the facets labelled ``marker`` with sampled values.

    ``component_mask`` selects vector components (default: all).  The string
    ``"normal"`` keeps only the component normal to each (axis-aligned)
    facet.  ``value_fn(x, y, t)`` returns shape (n,) or (2, n).  Indices are
    local to the space.
    """
    nodes = marker_nodes(space, marker)
    xy = space.node_coords[nodes]
    vals = _eval_value_fn(value_fn, xy[:, 0], xy[:, 1], time, space.components)
    if space.components == 1:
        return DofSet(nodes, vals)
    if isinstance(component_mask, str):
        if component_mask != "normal":
            raise SpaceError(f"unknown component mask {component_mask!r}")
        per_node = _normal_components(space, marker, nodes)
        idx, out = [], []
        for k, n in enumerate(nodes):
            for c in sorted(per_node[int(n)]):
                idx.append(2 * n + c)
                out.append(vals[c, k])
        return DofSet(np.array(idx, dtype=np.int64), np.array(out))
    mask = (True, True) if component_mask is None else tuple(bool(m) for m in component_mask)
    idx, out = [], []
    for c in range(2):
        if mask[c]:
            idx.append(2 * nodes + c)
            out.append(vals[c])
    if not idx:
        return DofSet.empty()
    return DofSet(np.concatenate(idx), np.concatenate(out))


def interpolate(space: Space, field_fn: Callable | float, time: float = 0.0) -> np.ndarray:
    """Nodal interpolant; bubble coefficients are zero."""
    xy = space.node_coords
    vals = _eval_value_fn(field_fn, xy[:, 0], xy[:, 1], time, space.components)
    if space.components == 1:
        out = np.array(vals, dtype=float)
    else:
        out = np.asarray(vals, dtype=float).T.reshape(-1).copy()
    if space.kind is ElementKind.P1_BUBBLE:
        bubbles = space.cell_nodes[:, 3]
        if space.components == 1:
            out[bubbles] = 0.0
        else:
            out[2 * bubbles] = 0.0
            out[2 * bubbles + 1] = 0.0
    return out


# ---------------------------------------------------------------------------
# evaluation at quadrature points


@dataclass
class CellQuadrature:
    """Physical quadrature data on a set of cells."""

    cells: np.ndarray
    points: np.ndarray  # (nc, nq, 2)
    weights: np.ndarray  # (nc, nq), includes |det J|
    ref_points: np.ndarray  # (nq, 2)
    maps: object = None


def cell_quadrature(mesh: Mesh, cells: np.ndarray, degree: int) -> CellQuadrature:
    rule = assembly_rule("triangle", min(degree, MAX_ASSEMBLY_DEGREE))
    amap = affine_map(mesh.vertices[mesh.cells[cells]])
    pts = amap.to_physical(rule.points)
    w = rule.weights[None, :] * np.abs(amap.det)[:, None]
    return CellQuadrature(cells=np.asarray(cells), points=pts, weights=w, ref_points=rule.points, maps=amap)


def basis_on_cells(space: Space, quad: CellQuadrature):
    """Scalar basis values (nq, nb) and physical gradients (nc, nq, nb, 2)."""
    values, ref_grads = eval_basis(space.kind, quad.ref_points)
    grads = push_gradients(quad.maps, ref_grads)
    return values, grads


def evaluate(space: Space, coeffs: np.ndarray, quad: CellQuadrature):
    """Field values and gradients at quadrature points of ``quad.cells``.

    The cells must belong to the space.  Returns ``(values, gradients)`` of
    shapes (nc, nq[, 2]) and (nc, nq[, 2], 2).
    """
    pos = space.cell_position[quad.cells]
    if (pos < 0).any():
        raise SpaceError("evaluation cells are not covered by the space")
    nodes = space.cell_nodes[pos]
    values, grads = basis_on_cells(space, quad)
    coeffs = np.asarray(coeffs, dtype=float)
    if space.components == 1:
        c = coeffs[nodes]  # (nc, nb)
        return np.einsum("qb,cb->cq", values, c), np.einsum("cqbi,cb->cqi", grads, c)
    c = coeffs.reshape(-1, 2)[nodes]  # (nc, nb, 2)
    return np.einsum("qb,cbk->cqk", values, c), np.einsum("cqbi,cbk->cqki", grads, c)


def mass_matrix(space: Space, weight: Callable | None = None, degree: int | None = None) -> sp.csr_matrix:
    """Consistent mass matrix, optionally with a pointwise weight ``w(x, y)``."""
    k = space.kind.degree
    quad = cell_quadrature(space.mesh, space.cells, degree or 2 * k)
    values, _ = basis_on_cells(space, quad)
    w = quad.weights
    if weight is not None:
        w = w * weight(quad.points[..., 0], quad.points[..., 1])
    local = np.einsum("cq,qa,qb->cab", w, values, values)
    return _scatter_scalar(space, space, local)


def stiffness_matrix(space: Space, coefficient: float = 1.0, degree: int | None = None) -> sp.csr_matrix:
    """Scalar Laplace stiffness ``coefficient * (grad phi_j, grad phi_i)`` on node ids."""
    k = space.kind.degree
    quad = cell_quadrature(space.mesh, space.cells, degree or max(2 * k - 2, 1))
    _, grads = basis_on_cells(space, quad)
    local = float(coefficient) * np.einsum("cq,cqai,cqbi->cab", quad.weights, grads, grads)
    return _scatter_scalar(space, space, local)


def _scatter_scalar(test: Space, trial: Space, local: np.ndarray, test_nodes=None, trial_nodes=None):
    rows_nodes = test.cell_nodes if test_nodes is None else test_nodes
    cols_nodes = trial.cell_nodes if trial_nodes is None else trial_nodes
    nb_t, nb_s = local.shape[1], local.shape[2]
    rows = np.repeat(rows_nodes[:, :, None], nb_s, axis=2)
    cols = np.repeat(cols_nodes[:, None, :], nb_t, axis=1)
    return sp.csr_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(test.n_nodes, trial.n_nodes))


def _solve_spd(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    from .linalg import solve_direct

    x = solve_direct(matrix.tocsc(), rhs, rtol=1e-12)
    return x


def l2_project(coeffs: np.ndarray, source: Space, target: Space) -> np.ndarray:
    """L2 projection of a discrete field onto ``target``.

    The source is taken as zero on target cells it does not cover.
    """
    if source.components != target.components:
        raise SpaceError("source and target must have the same number of components")
    deg = min(source.kind.degree + target.kind.degree, 6)
    common = np.intersect1d(source.cells, target.cells)
    M = mass_matrix(target, degree=deg)
    rhs = np.zeros(target.n_dofs)
    if len(common):
        quad = cell_quadrature(target.mesh, common, deg)
        vals, _ = evaluate(source, coeffs, quad)
        tv, _ = basis_on_cells(target, quad)
        nodes = target.cell_nodes[target.cell_position[common]]
        if target.components == 1:
            local = np.einsum("cq,qa,cq->ca", quad.weights, tv, vals)
            np.add.at(rhs, nodes.ravel(), local.ravel())
        else:
            local = np.einsum("cq,qa,cqk->cak", quad.weights, tv, vals)
            np.add.at(rhs, (2 * nodes[:, :, None] + np.arange(2)).ravel(), local.ravel())
    return _project_rhs(M, rhs, target.components)


def l2_project_function(fn: Callable, target: Space, time: float = 0.0, degree: int = 6) -> np.ndarray:
    """L2 projection of ``fn(x, y, t)`` onto ``target``."""
    quad = cell_quadrature(target.mesh, target.cells, degree)
    tv, _ = basis_on_cells(target, quad)
    x, y = quad.points[..., 0], quad.points[..., 1]
    vals = np.asarray(fn(x, y, time), dtype=float)
    rhs = np.zeros(target.n_dofs)
    nodes = target.cell_nodes
    if target.components == 1:
        vals = np.broadcast_to(vals, x.shape)
        local = np.einsum("cq,qa,cq->ca", quad.weights, tv, vals)
        np.add.at(rhs, nodes.ravel(), local.ravel())
    else:
        vals = np.broadcast_to(vals, (2,) + x.shape)
        local = np.einsum("cq,qa,kcq->cak", quad.weights, tv, vals)
        np.add.at(rhs, (2 * nodes[:, :, None] + np.arange(2)).ravel(), local.ravel())
    M = mass_matrix(target, degree=min(2 * target.kind.degree, 6))
    return _project_rhs(M, rhs, target.components)


def _project_rhs(M, rhs, components):
    if components == 1:
        return _solve_spd(M, rhs)
    out = np.empty_like(rhs)
    out[0::2] = _solve_spd(M, rhs[0::2])
    out[1::2] = _solve_spd(M, rhs[1::2])
    return out
