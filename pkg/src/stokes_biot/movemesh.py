"""Harmonic extension of the interface displacement and fluid-mesh motion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import ElementKind, affine_map, eval_basis
from .linalg import EliminatedOperator
from .mesh import Mesh, MeshError, Subdomain, signed_areas
from .spaces import Space, build_space, stiffness_matrix


class MeshMotionError(MeshError):
    """A displaced cell has a non-positive Jacobian."""

    def __init__(self, message: str, cell: int):
        super().__init__(message)
        self.cell = cell


@dataclass
class ExtensionField:
    """Extension ``d_hat`` of the interface displacement into the fluid domain.

    ``coefficients`` are interleaved (x, y) per node of ``space``.
    """

    space: Space
    coefficients: np.ndarray
    diffusion: float = 1.0

    def vertex_values(self) -> np.ndarray:
        """(n_vertices, 2) values at mesh vertices; zero off the fluid closure."""
        mesh = self.space.mesh
        out = np.zeros((mesh.n_vertices, 2))
        vn = self.space.vertex_node
        has = vn >= 0
        out[has] = self.coefficients.reshape(-1, 2)[vn[has]]
        return out


def _facet_nodes(space: Space, facets: np.ndarray) -> list:
    """Scalar nodes of ``space`` on each facet (vertex nodes, then the edge node)."""
    mesh = space.mesh
    out = []
    for a, b in facets:
        ids = [space.vertex_node[a], space.vertex_node[b]]
        if space.kind is ElementKind.P2:
            ids.append(space.edge_node[mesh.edge_index(a, b)])
        out.append(ids)
    return out


def trace_values(d: np.ndarray, d_space: Space, target: Space) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the porous field ``d`` at the interface nodes of ``target``.

    Returns (node ids, values of shape (n, 2)).
    """
    mesh = d_space.mesh
    coeffs = np.asarray(d, dtype=float).reshape(-1, 2)
    nodes, values = [], []
    for k, ids in enumerate(_facet_nodes(target, mesh.interface_facets)):
        cell = int(mesh.interface_porous_cell[k])
        pos = d_space.cell_position[cell]
        pts = target.node_coords[ids]
        ref = affine_map(mesh.vertices[mesh.cells[cell]]).to_reference(pts)
        basis, _ = eval_basis(d_space.kind, ref)
        values.append(basis @ coeffs[d_space.cell_nodes[pos]])
        nodes.extend(ids)
    if not nodes:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 2))
    return np.asarray(nodes, dtype=np.int64), np.vstack(values)


def harmonic_extension(d: np.ndarray, d_space: Space, target: Space | None = None,
                       diffusion: float = 1.0) -> ExtensionField:
    """Solve ``-D lap(d_hat) = 0`` in the fluid domain with ``d_hat = d`` on the
    interface and ``d_hat = 0`` on the rest of the fluid boundary.

    Interface values take precedence at the corners where both apply.
    """
    if not diffusion > 0:
        raise ValueError("diffusion constant must be positive")
    mesh = d_space.mesh
    if target is None:
        target = build_space(mesh, Subdomain.FLUID, d_space.kind, components=2, field="u")
    n = target.n_nodes
    values = np.zeros((n, 2))
    fixed = np.zeros(n, dtype=bool)

    fluid_rows = np.flatnonzero(mesh.cell_subdomain[mesh.boundary_cells] == Subdomain.FLUID)
    for ids in _facet_nodes(target, mesh.boundary_facets[fluid_rows]):
        fixed[ids] = True
    iface_nodes, iface_vals = trace_values(d, d_space, target)
    fixed[iface_nodes] = True
    values[iface_nodes] = iface_vals

    K = stiffness_matrix(target, diffusion)
    op = EliminatedOperator(K, np.flatnonzero(fixed))
    out = np.zeros((n, 2))
    for c in range(2):
        out[:, c] = op.solve(np.zeros(n), values[fixed, c])
    return ExtensionField(target, out.reshape(-1), float(diffusion))


def vertex_samples(coeffs: np.ndarray, space: Space) -> np.ndarray:
    """(n_vertices, 2) nodal values of a vector field; zero where undefined."""
    out = np.zeros((space.mesh.n_vertices, 2))
    vn = space.vertex_node
    has = vn >= 0
    out[has] = np.asarray(coeffs, dtype=float).reshape(-1, 2)[vn[has]]
    return out


def global_displacement(d: np.ndarray, d_space: Space, extension: ExtensionField) -> np.ndarray:
    """Vertex displacement ``d*``: ``d`` on the porous closure, ``d_hat`` elsewhere."""
    out = extension.vertex_values()
    porous = vertex_samples(d, d_space)
    has = d_space.vertex_node >= 0
    out[has] = porous[has]
    return out


def subdomain_vertices(mesh: Mesh, subdomain: Subdomain) -> np.ndarray:
    """Boolean mask of vertices belonging to cells of ``subdomain``."""
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    mask[mesh.cells[mesh.cells_of(subdomain)].ravel()] = True
    return mask


def move_mesh(mesh: Mesh, displacement: np.ndarray, check_cells: np.ndarray | None = None) -> Mesh:
    """Shift every vertex by ``displacement`` (n_vertices, 2).

    Raises :class:`MeshMotionError` naming the first cell among
    ``check_cells`` (default: all) whose Jacobian is no longer positive.
    """
    disp = np.asarray(displacement, dtype=float)
    if disp.shape != mesh.vertices.shape:
        raise ValueError(f"displacement must have shape {mesh.vertices.shape}, got {disp.shape}")
    if not np.all(np.isfinite(disp)):
        raise ValueError("displacement contains non-finite values")
    new_vertices = mesh.vertices + disp
    cells = np.arange(mesh.n_cells) if check_cells is None else np.asarray(check_cells, dtype=np.int64)
    area = signed_areas(new_vertices, mesh.cells[cells])
    ref = signed_areas(mesh.vertices, mesh.cells[cells])
    bad = np.flatnonzero(area <= 1e-12 * np.abs(ref))
    if len(bad):
        c = int(cells[bad[0]])
        raise MeshMotionError(f"cell {c} inverted by the mesh motion (signed area {area[bad[0]]:.3e}); "
                              "reduce the displacement per step", cell=c)
    return mesh.with_vertices(new_vertices)


def fluid_motion(mesh: Mesh, vertex_displacement: np.ndarray) -> Mesh:
    """Move only the fluid-closure vertices; porous-only vertices stay put."""
    mask = subdomain_vertices(mesh, Subdomain.FLUID)
    disp = np.where(mask[:, None], vertex_displacement, 0.0)
    return move_mesh(mesh, disp, check_cells=mesh.cells_of(Subdomain.FLUID))
