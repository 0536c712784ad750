"""Dense brute-force reference integrals, written without the package's assembly code.

Local bases come from Vandermonde inversion on physical node positions,
volume integrals use a collapsed (Duffy) tensor Gauss rule and facet
integrals a Gauss-Legendre rule, so every polynomial integrand below is
integrated exactly in floating point.
"""

from __future__ import annotations

import numpy as np

from stokes_biot.fem import ElementKind
from stokes_biot.mesh import Subdomain

GAUSS_POINTS = 12

MONOMIALS = {1: [(0, 0), (1, 0), (0, 1)], 2: [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]}


def gauss01(n: int = GAUSS_POINTS):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_points(tri: np.ndarray, n: int = GAUSS_POINTS):
    """Physical quadrature points and weights on a triangle (3, 2)."""
    s, ws = gauss01(n)
    S, T = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws, ws) * S
    a, b = S * (1.0 - T), S * T
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    det = abs(e1[0] * e2[1] - e1[1] * e2[0])
    pts = tri[0] + a.ravel()[:, None] * e1 + b.ravel()[:, None] * e2
    return pts, W.ravel() * det


def segment_points(p: np.ndarray, q: np.ndarray, n: int = GAUSS_POINTS):
    s, w = gauss01(n)
    return p + s[:, None] * (q - p), w * np.linalg.norm(q - p)


class CellBasis:
    """Scalar local basis of one cell, evaluated in physical coordinates."""

    def __init__(self, kind: ElementKind, vertices: np.ndarray, node_points: np.ndarray):
        self.kind = kind
        self.center = vertices.mean(axis=0)
        self.scale = np.abs(vertices - self.center).max()
        if kind is ElementKind.P2:
            self.powers = MONOMIALS[2]
            lagrange_nodes = node_points
        else:
            self.powers = MONOMIALS[1]
            lagrange_nodes = vertices
        V = self._monomials(lagrange_nodes)[0]
        self.coeffs = np.linalg.inv(V)  # column i -> basis i

    def _monomials(self, pts):
        z = (np.atleast_2d(pts) - self.center) / self.scale
        vals, grads = [], []
        for a, b in self.powers:
            vals.append(z[:, 0] ** a * z[:, 1] ** b)
            gx = a * z[:, 0] ** max(a - 1, 0) * z[:, 1] ** b if a else 0.0 * z[:, 0]
            gy = b * z[:, 0] ** a * z[:, 1] ** max(b - 1, 0) if b else 0.0 * z[:, 0]
            grads.append(np.stack([gx, gy], axis=-1) / self.scale)
        return np.stack(vals, axis=-1), np.stack(grads, axis=-2)

    def __call__(self, pts):
        """Values (npts, nb) and gradients (npts, nb, 2)."""
        mv, mg = self._monomials(pts)
        vals = mv @ self.coeffs
        grads = np.einsum("pmk,mi->pik", mg, self.coeffs)
        if self.kind is ElementKind.P1_BUBBLE:
            h0, h1, h2 = vals.T
            g0, g1, g2 = grads[:, 0], grads[:, 1], grads[:, 2]
            bub = 27.0 * h0 * h1 * h2
            dbub = 27.0 * ((h1 * h2)[:, None] * g0 + (h0 * h2)[:, None] * g1 + (h0 * h1)[:, None] * g2)
            vals = np.column_stack([vals, bub])
            grads = np.concatenate([grads, dbub[:, None, :]], axis=1)
        return vals, grads


def node_positions(space) -> np.ndarray:
    """Node coordinates rebuilt from the vertex and edge ownership tables."""
    mesh = space.mesh
    pos = np.full((space.n_nodes, 2), np.nan)
    v = space.node_vertex >= 0
    pos[v] = mesh.vertices[space.node_vertex[v]]
    e = space.node_edge >= 0
    ends = mesh.edges[space.node_edge[e]]
    pos[e] = 0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])
    return pos


def dense_basis(space, cell: int, pts):
    """Global basis at ``pts`` inside ``cell``: values (npts, ndofs, ncomp), grads (npts, ndofs, ncomp, 2)."""
    mesh = space.mesh
    row = int(np.flatnonzero(space.cells == cell)[0])
    nodes = space.cell_nodes[row]
    basis = CellBasis(space.kind, mesh.vertices[mesh.cells[cell]], node_positions(space)[nodes])
    vals, grads = basis(pts)
    k = space.components
    out_v = np.zeros((len(pts), space.n_dofs, k))
    out_g = np.zeros((len(pts), space.n_dofs, k, 2))
    for local, node in enumerate(nodes):
        for c in range(k):
            out_v[:, k * node + c, c] += vals[:, local]
            out_g[:, k * node + c, c, :] += grads[:, local, :]
    return out_v, out_g


def interface_edges(mesh):
    """(a, b, fluid_cell, porous_cell) for every edge shared by a fluid and a porous cell."""
    owners = {}
    for c, tri in enumerate(mesh.cells):
        for i in range(3):
            key = tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))
            owners.setdefault(key, []).append(c)
    out = []
    for (a, b), cs in sorted(owners.items()):
        if len(cs) == 2 and mesh.cell_subdomain[cs[0]] != mesh.cell_subdomain[cs[1]]:
            f, p = cs if mesh.cell_subdomain[cs[0]] == Subdomain.FLUID else cs[::-1]
            out.append((a, b, f, p))
    return out


def facet_frame(mesh, a, b, inside_cell):
    """Unit normal pointing away from ``inside_cell`` and the tangent (n rotated by -90 degrees)."""
    p, q = mesh.vertices[a], mesh.vertices[b]
    t = (q - p) / np.linalg.norm(q - p)
    n = np.array([t[1], -t[0]])
    if np.dot(n, 0.5 * (p + q) - mesh.vertices[mesh.cells[inside_cell]].mean(axis=0)) < 0:
        n = -n
    return n, np.array([n[1], -n[0]])


def cellwise(value, cell):
    v = np.asarray(value, dtype=float)
    return float(v) if v.ndim == 0 else float(v[cell])


def _radius(pts, axisym):
    return pts[:, 0] if axisym else np.ones(len(pts))


def _eps(g):
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def _div(v, g, r, hoop):
    d = g[..., 0, 0] + g[..., 1, 1]
    if hoop:
        d = d + v[..., 0] / r[:, None]
    return d


def volume_matrix(test, trial, cells, integrand, axisym):
    M = np.zeros((test.n_dofs, trial.n_dofs))
    for c in cells:
        pts, w = triangle_points(test.mesh.vertices[test.mesh.cells[c]])
        r = _radius(pts, axisym)
        vt, gt = dense_basis(test, c, pts)
        vs, gs = dense_basis(trial, c, pts)
        M += integrand(c, w * r, r, vt, gt, vs, gs)
    return M


def interface_matrix(test, trial, integrand, axisym):
    mesh = test.mesh
    M = np.zeros((test.n_dofs, trial.n_dofs))
    for a, b, fc, pc in interface_edges(mesh):
        n, t = facet_frame(mesh, a, b, fc)
        pts, w = segment_points(mesh.vertices[a], mesh.vertices[b])
        r = _radius(pts, axisym)
        side = {Subdomain.FLUID: fc, Subdomain.POROUS: pc}
        vt, _ = dense_basis(test, side[test.subdomain], pts)
        vs, _ = dense_basis(trial, side[trial.subdomain], pts)
        M += integrand(pc, w * r, n, t, vt, vs)
    return M


def bilinear(form: str, spaces: dict, params, axisym=False, hoop=True, advect=None):
    """Reference matrix (test x trial) of a bilinear form, oriented as in the table below."""
    P = params
    fluid = spaces["u"].cells
    porous = spaces["d"].cells
    hoop = hoop and axisym

    def slip(pc):
        return P.gamma * P.mu_f / np.sqrt(cellwise(P.kappa, pc))

    def viscous(mu_of, space, cells, with_slip):
        def f(c, w, r, vt, gt, vs, gs):
            mu = mu_of(c)
            out = 2 * mu * np.einsum("q,qikl,qjkl->ij", w, _eps(gt), _eps(gs))
            if hoop:
                out += 2 * mu * np.einsum("q,qi,qj->ij", w / r**2, vt[..., 0], vs[..., 0])
            return out
        M = volume_matrix(space, space, cells, f, axisym)
        if with_slip:
            M += interface_matrix(space, space, lambda pc, w, n, t, vt, vs: slip(pc) * np.einsum(
                "q,qi,qj->ij", w, vt @ t, vs @ t), axisym)
        return M

    def mass(space_t, space_s, coef):
        return volume_matrix(space_t, space_s, porous, lambda c, w, r, vt, gt, vs, gs: coef(c) * np.einsum(
            "q,qi,qj->ij", w, vt[..., 0], vs[..., 0]), axisym)

    def divergence(vec, scal, cells):
        # rows: vector test, cols: scalar trial of -(psi, div w)
        return volume_matrix(vec, scal, cells, lambda c, w, r, vt, gt, vs, gs: -np.einsum(
            "q,qi,qj->ij", w, _div(vt, gt, r, hoop), vs[..., 0]), axisym)

    lam = lambda c: cellwise(P.lam, c)  # noqa: E731
    u, pF, d, pP, phi = (spaces[k] for k in ("u", "pF", "d", "pP", "phi"))
    if form == "A1F":
        return volume_matrix(u, u, fluid, lambda c, w, r, vt, gt, vs, gs: P.rho_f * np.einsum(
            "q,qik,qjk->ij", w, vt, vs), axisym)
    if form == "A2F":
        return viscous(lambda c: P.mu_f, u, fluid, True)
    if form == "A1P":
        return viscous(lambda c: cellwise(P.mu_s, c), d, porous, False)
    if form == "CF":
        M = np.zeros((u.n_dofs, u.n_dofs))
        for c in fluid:
            pts, w = triangle_points(u.mesh.vertices[u.mesh.cells[c]])
            r = _radius(pts, axisym)
            v, g = dense_basis(u, c, pts)
            adv = np.einsum("j,qjk->qk", advect, v)
            M += P.rho_f * np.einsum("q,qik,qjkl,ql->ij", w * r, v, g, adv)
        return M
    if form == "B1F":
        return divergence(u, pF, fluid)
    if form == "B1P":
        return divergence(d, phi, porous)
    if form == "A3P":
        return mass(pP, pP, lambda c: P.c0 + P.alpha**2 / lam(c))
    if form == "A5P":
        return mass(phi, phi, lambda c: 1.0 / lam(c))
    if form == "B2P":
        return mass(phi, pP, lambda c: P.alpha / lam(c))
    if form == "A4P":
        return volume_matrix(pP, pP, porous, lambda c, w, r, vt, gt, vs, gs: cellwise(P.kappa, c) / P.mu_f * np.einsum(
            "q,qik,qjk->ij", w, gt[..., 0, :], gs[..., 0, :]), axisym)
    if form == "A2SIG":
        return interface_matrix(d, d, lambda pc, w, n, t, vt, vs: slip(pc) * np.einsum(
            "q,qi,qj->ij", w, vt @ t, vs @ t), axisym)
    if form == "B3SIG":
        return interface_matrix(u, d, lambda pc, w, n, t, vt, vs: -slip(pc) * np.einsum(
            "q,qi,qj->ij", w, vt @ t, vs @ t), axisym)
    if form == "B2SIG":
        return interface_matrix(u, pP, lambda pc, w, n, t, vt, vs: np.einsum(
            "q,qi,qj->ij", w, vt @ n, vs[..., 0]), axisym)
    if form == "B4SIG":
        return interface_matrix(d, pP, lambda pc, w, n, t, vt, vs: -np.einsum(
            "q,qi,qj->ij", w, vt @ n, vs[..., 0]), axisym)
    raise KeyError(form)


# Orientation used by ``bilinear``: (test field, trial field).
ORIENTATION = {
    "A1F": ("u", "u"), "A2F": ("u", "u"), "CF": ("u", "u"), "B1F": ("u", "pF"), "B1P": ("d", "phi"),
    "B2SIG": ("u", "pP"), "B3SIG": ("u", "d"), "B4SIG": ("d", "pP"), "A1P": ("d", "d"), "A2SIG": ("d", "d"),
    "A3P": ("pP", "pP"), "A4P": ("pP", "pP"), "B2P": ("phi", "pP"), "A5P": ("phi", "phi"),
}


def _load_volume(space, cells, fn, t, scale, axisym):
    out = np.zeros(space.n_dofs)
    for c in cells:
        pts, w = triangle_points(space.mesh.vertices[space.mesh.cells[c]])
        r = _radius(pts, axisym)
        v, g = dense_basis(space, c, pts)
        val = np.asarray(fn(pts[:, 0], pts[:, 1], t), dtype=float)
        if space.components == 2:
            val = np.broadcast_to(val, (2, len(pts))).T
            out += scale * np.einsum("q,qik,qk->i", w * r, v, val)
        else:
            out += scale * np.einsum("q,qi,q->i", w * r, v[..., 0], np.broadcast_to(val, (len(pts),)))
    return out


def _load_boundary(space, marker, fn, t, axisym):
    mesh = space.mesh
    out = np.zeros(space.n_dofs)
    for (a, b), m in zip(mesh.boundary_facets, mesh.boundary_markers):
        if m != marker:
            continue
        cell = [c for c in space.cells if {a, b} <= set(mesh.cells[c].tolist())]
        if not cell:
            continue
        n, _ = facet_frame(mesh, a, b, cell[0])
        pts, w = segment_points(mesh.vertices[a], mesh.vertices[b])
        r = _radius(pts, axisym)
        v, _ = dense_basis(space, cell[0], pts)
        val = np.asarray(fn(pts[:, 0], pts[:, 1], t, n[0] + 0 * pts[:, 0], n[1] + 0 * pts[:, 0]), dtype=float)
        if space.components == 2:
            out += np.einsum("q,qik,qk->i", w * r, v, np.broadcast_to(val, (2, len(pts))).T)
        else:
            out += np.einsum("q,qi,q->i", w * r, v[..., 0], np.broadcast_to(val, (len(pts),)))
    return out


def _load_interface(space, fn, t, axisym, project=None, grad=False):
    mesh = space.mesh
    out = np.zeros(space.n_dofs)
    for a, b, fc, pc in interface_edges(mesh):
        n, tan = facet_frame(mesh, a, b, fc)
        cell = fc if space.subdomain is Subdomain.FLUID else pc
        pts, w = segment_points(mesh.vertices[a], mesh.vertices[b])
        r = _radius(pts, axisym)
        v, _ = dense_basis(space, cell, pts)
        val = np.asarray(fn(pts[:, 0], pts[:, 1], t, n[0] + 0 * pts[:, 0], n[1] + 0 * pts[:, 0], pc), dtype=float)
        if space.components == 1:
            out += np.einsum("q,qi,q->i", w * r, v[..., 0], np.broadcast_to(val, (len(pts),)))
        elif project is None:
            out += np.einsum("q,qik,qk->i", w * r, v, np.broadcast_to(val, (2, len(pts))).T)
        else:
            direction = n if project == "n" else tan
            out += np.einsum("q,qi,q->i", w * r, v @ direction, np.broadcast_to(val, (len(pts),)))
    return out


def functional(form: str, space, params, extras, t=0.0, axisym=False):
    """Reference right-hand side vector of FF, FP or G."""
    P = params
    g = np.asarray(P.g, dtype=float)
    cells = space.cells
    drop = lambda fn: (lambda x, y, tt, nx, ny, pc: fn(x, y, tt, nx, ny))  # noqa: E731
    out = np.zeros(space.n_dofs)
    if form == "FF":
        out += _load_volume(space, cells, lambda x, y, tt: np.multiply.outer(g, np.ones_like(x)), t, P.rho_f, axisym)
        if extras.fluid_force is not None:
            out += _load_volume(space, cells, extras.fluid_force, t, 1.0, axisym)
        for marker, fn in extras.tractions.items():
            out += _load_boundary(space, marker, fn, t, axisym)
        if extras.m3 is not None:
            out += _load_interface(space, drop(extras.m3), t, axisym, "n")
        if extras.m4 is not None:
            out += _load_interface(space, drop(extras.m4), t, axisym, "t")
        return out
    if form == "FP":
        if extras.body_load is not None:
            out += _load_volume(space, cells, extras.body_load, t, P.rho_s, axisym)
        for marker, fn in extras.tractions.items():
            out += _load_boundary(space, marker, fn, t, axisym)
        if extras.m2 is not None:
            out += _load_interface(space, drop(extras.m2), t, axisym)
        if extras.m3 is not None:
            out -= _load_interface(space, drop(extras.m3), t, axisym, "n")
        if extras.m4 is not None:
            out -= _load_interface(space, drop(extras.m4), t, axisym, "t")
        return out
    if form == "G":
        for c in cells:
            pts, w = triangle_points(space.mesh.vertices[space.mesh.cells[c]])
            r = _radius(pts, axisym)
            _, gr = dense_basis(space, c, pts)
            coef = P.rho_f * cellwise(P.kappa, c) / P.mu_f
            out += coef * np.einsum("q,qik,k->i", w * r, gr[..., 0, :], g)
        out -= _load_interface(space, lambda x, y, tt, nx, ny, pc: P.rho_f * cellwise(P.kappa, pc) / P.mu_f * (
            g[0] * nx + g[1] * ny), t, axisym)
        if extras.darcy_source is not None:
            out += _load_volume(space, cells, extras.darcy_source, t, 1.0, axisym)
        for marker, fn in extras.fluxes.items():
            out += _load_boundary(space, marker, fn, t, axisym)
        if extras.m1 is not None:
            out -= _load_interface(space, drop(extras.m1), t, axisym)
        return out
    raise KeyError(form)
