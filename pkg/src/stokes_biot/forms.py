"""Bilinear forms, interface couplings and right-hand-side functionals.

Every bilinear form has two argument slots, each bound to a field name.  The
canonical matrix of a form has rows indexed by the first slot and columns by
the second; :func:`assemble` returns it oriented as (test x trial), which is
the transpose of the canonical matrix when the test space fills the second
slot.

Interface terms use the fluid-side trace for ``u`` and the porous-side trace
for ``d`` and ``pP``.  The normal points from the fluid into the porous
region and the tangent is the normal rotated by -90 degrees.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

import numpy as np
import scipy.sparse as sp

from .fem import MAX_ASSEMBLY_DEGREE, affine_map, assembly_rule, eval_basis
from .mesh import Mesh, Subdomain, boundary_geometry, interface_geometry
from .spaces import Space, basis_on_cells, cell_quadrature, evaluate

CARTESIAN = "cartesian"
AXISYM = "axisym"


class FormError(ValueError):
    pass


class FormId(enum.Enum):
    A1F = "A1F"  # fluid mass
    A2F = "A2F"  # fluid viscous + slip friction on the interface
    CF = "CF"  # convection
    B1F = "B1F"  # fluid pressure / divergence
    B1P = "B1P"  # total pressure / divergence of displacement
    B2SIG = "B2SIG"  # pore pressure on fluid normal velocity
    B3SIG = "B3SIG"  # slip coupling between fluid and solid tangential motion
    B4SIG = "B4SIG"  # pore pressure on solid normal displacement
    A1P = "A1P"  # solid elasticity
    A2SIG = "A2SIG"  # solid tangential friction
    A3P = "A3P"  # storage
    A4P = "A4P"  # Darcy diffusion
    B2P = "B2P"  # total pressure / pore pressure coupling
    A5P = "A5P"  # total pressure mass
    FF = "FF"
    FP = "FP"
    G = "G"


FUNCTIONALS = frozenset({FormId.FF, FormId.FP, FormId.G})
BILINEAR = tuple(f for f in FormId if f not in FUNCTIONALS)

# Argument slots (first, second) of each bilinear form.
FORM_SLOTS = {
    FormId.A1F: ("u", "u"),
    FormId.A2F: ("u", "u"),
    FormId.CF: ("u", "u"),
    FormId.B1F: ("u", "pF"),
    FormId.B1P: ("d", "phi"),
    FormId.B2SIG: ("u", "pP"),
    FormId.B3SIG: ("u", "d"),
    FormId.B4SIG: ("d", "pP"),
    FormId.A1P: ("d", "d"),
    FormId.A2SIG: ("d", "d"),
    FormId.A3P: ("pP", "pP"),
    FormId.A4P: ("pP", "pP"),
    FormId.B2P: ("phi", "pP"),
    FormId.A5P: ("phi", "phi"),
}
FUNCTIONAL_FIELD = {FormId.FF: "u", FormId.FP: "d", FormId.G: "pP"}
INTERFACE_FORMS = frozenset({FormId.B2SIG, FormId.B3SIG, FormId.B4SIG, FormId.A2SIG})
SYMMETRIC_FORMS = frozenset({FormId.A1F, FormId.A2F, FormId.A1P, FormId.A2SIG, FormId.A3P, FormId.A4P, FormId.A5P})


@dataclass
class MaterialParams:
    """Physical coefficients.

    ``lam``, ``mu_s`` and ``kappa`` may be scalars or arrays with one entry
    per mesh cell (only porous entries are read).
    """

    lam: float | np.ndarray = 1000.0
    mu_s: float | np.ndarray = 1.0
    mu_f: float = 0.1
    alpha: float = 1.0
    gamma: float = 1.0
    c0: float = 0.01
    rho_f: float = 1.0
    rho_s: float = 1.2
    g: tuple = (0.0, 0.0)
    kappa: float | np.ndarray = 1e-3

    def __post_init__(self):
        for name in ("mu_s", "mu_f"):
            if not np.all(np.asarray(getattr(self, name)) > 0):
                raise ValueError(f"{name} must be positive")
        if not np.all(np.asarray(self.lam) > 0):
            raise ValueError("lam must be positive")
        if self.c0 < 0:
            raise ValueError("c0 must be nonnegative")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        self.g = tuple(float(v) for v in self.g)

    def _cellwise(self, name: str, mesh: Mesh, cells: np.ndarray) -> np.ndarray:
        value = np.asarray(getattr(self, name), dtype=float)
        if value.ndim == 0:
            out = np.full(len(cells), float(value))
        else:
            if len(value) != mesh.n_cells:
                raise FormError(f"{name} has {len(value)} entries, mesh has {mesh.n_cells} cells")
            out = value[cells]
        return out

    def kappa_on(self, mesh: Mesh, cells: np.ndarray) -> np.ndarray:
        k = self._cellwise("kappa", mesh, cells)
        bad = ~(np.isfinite(k) & (k > 0))
        if bad.any():
            raise FormError(f"missing or nonpositive permeability on cell {int(np.asarray(cells)[bad][0])}")
        return k

    def lam_on(self, mesh: Mesh, cells: np.ndarray) -> np.ndarray:
        return self._cellwise("lam", mesh, cells)

    def mu_s_on(self, mesh: Mesh, cells: np.ndarray) -> np.ndarray:
        return self._cellwise("mu_s", mesh, cells)


# ---------------------------------------------------------------------------
# geometry helpers


def _check_mode(mode: str, mesh: Mesh):
    if mode not in (CARTESIAN, AXISYM):
        raise FormError(f"unknown mode {mode!r}")
    if mode == AXISYM and mesh.vertices[:, 0].min() < -1e-12 * max(1.0, np.abs(mesh.vertices).max()):
        raise FormError("axisymmetric mode needs a mesh with r = x >= 0")


def _radial_weight(mode, points, weight_fn):
    if mode == CARTESIAN:
        return np.ones(points.shape[:-1])
    if weight_fn is not None:
        return np.asarray(weight_fn(points[..., 0], points[..., 1]), dtype=float) * np.ones(points.shape[:-1])
    return points[..., 0]


def _vector_values(values):
    """(..., nb) scalar values -> (..., 2nb, 2) vector basis values."""
    shape = values.shape[:-1] + (values.shape[-1], 2, 2)
    out = np.zeros(shape)
    out[..., 0, 0] = values
    out[..., 1, 1] = values
    return out.reshape(values.shape[:-1] + (2 * values.shape[-1], 2))


def _vector_grads(grads):
    """(..., nb, 2) scalar gradients -> (..., 2nb, 2, 2), entry [k, j] = d_j of component k."""
    nb = grads.shape[-2]
    out = np.zeros(grads.shape[:-2] + (nb, 2, 2, 2))
    out[..., 0, 0, :] = grads
    out[..., 1, 1, :] = grads
    return out.reshape(grads.shape[:-2] + (2 * nb, 2, 2))


def _scatter(test_dofs, trial_dofs, local, shape):
    """Accumulate local (n, nt, ns) blocks into a CSR matrix."""
    nt, ns = local.shape[1], local.shape[2]
    rows = np.broadcast_to(test_dofs[:, :, None], (len(local), nt, ns))
    cols = np.broadcast_to(trial_dofs[:, None, :], (len(local), nt, ns))
    m = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    return m.tocsr()


@dataclass
class _Volume:
    quad: object
    weights: np.ndarray  # (nc, nq) including radial weight
    radius: np.ndarray  # (nc, nq)
    values: np.ndarray  # (nq, nb) or (nq, 2nb, 2)
    grads: np.ndarray  # (nc, nq, nb, 2) or (nc, nq, 2nb, 2, 2)
    dofs: np.ndarray


def _volume(space: Space, degree: int, mode: str, weight_fn=None) -> _Volume:
    quad = cell_quadrature(space.mesh, space.cells, degree)
    values, grads = basis_on_cells(space, quad)
    radius = _radial_weight(mode, quad.points, weight_fn)
    w = quad.weights * radius
    if space.components == 2:
        values = _vector_values(values)
        grads = _vector_grads(grads)
    return _Volume(quad, w, radius, values, grads, space.cell_dofs)


@dataclass
class _Trace:
    points: np.ndarray  # (L, nq, 2)
    weights: np.ndarray  # (L, nq), includes length and radial weight
    values: np.ndarray  # (L, nq, nb) or (L, nq, 2nb, 2)
    grads: np.ndarray  # physical gradients, (L, nq, nb, 2) or (L, nq, 2nb, 2, 2)
    dofs: np.ndarray  # (L, nloc)
    normals: np.ndarray  # (L, 2)
    tangents: np.ndarray
    lengths: np.ndarray


def _trace(space: Space, facets, cells, normals, tangents, lengths, degree, mode, weight_fn=None) -> _Trace:
    mesh = space.mesh
    pos = space.cell_position[cells]
    if (pos < 0).any():
        raise FormError("facet cell is not covered by the space")
    rule = assembly_rule("edge", min(degree, MAX_ASSEMBLY_DEGREE))
    s = rule.points[:, 0]
    a = mesh.vertices[facets[:, 0]]
    b = mesh.vertices[facets[:, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    radius = _radial_weight(mode, pts, weight_fn)
    w = rule.weights[None, :] * lengths[:, None] * radius
    amap = affine_map(mesh.vertices[mesh.cells[cells]])
    ref = amap.to_reference(pts)
    values, ref_grads = eval_basis(space.kind, ref)
    grads = np.einsum("lij,lqbj->lqbi", amap.inv_transpose, ref_grads)
    if space.components == 2:
        values = _vector_values(values)
        grads = _vector_grads(grads)
    return _Trace(pts, w, values, grads, space.cell_dofs[pos], normals, tangents, lengths)


def _interface_trace(space: Space, degree, mode, weight_fn=None) -> _Trace:
    mesh = space.mesh
    if len(mesh.interface_facets) == 0:
        raise FormError("mesh has no interface facets")
    if space.subdomain is Subdomain.FLUID:
        cells = mesh.interface_fluid_cell
    elif space.subdomain is Subdomain.POROUS:
        cells = mesh.interface_porous_cell
    else:
        raise FormError("interface traces need a space on one subdomain")
    geo = interface_geometry(mesh)
    return _trace(space, mesh.interface_facets, cells, geo.normals, geo.tangents, geo.lengths, degree, mode, weight_fn)


def _boundary_trace(space: Space, rows, degree, mode, weight_fn=None) -> _Trace:
    mesh = space.mesh
    geo = boundary_geometry(mesh, rows)
    return _trace(space, mesh.boundary_facets[rows], mesh.boundary_cells[rows], geo.normals, geo.tangents,
                  geo.lengths, degree, mode, weight_fn)


@dataclass
class FacetSample:
    """A field sampled at facet quadrature points."""

    points: np.ndarray  # (L, nq, 2)
    weights: np.ndarray  # (L, nq), radially weighted in axisymmetric mode
    values: np.ndarray  # (L, nq[, 2])
    grads: np.ndarray  # (L, nq[, 2], 2)
    normals: np.ndarray  # (L, 2)

    def integrate(self, integrand: np.ndarray) -> float:
        return float(np.sum(self.weights * integrand))

    @property
    def measure(self) -> float:
        return float(np.sum(self.weights))


def sample_on_facets(space: Space, coeffs: np.ndarray, where: str, mode: str = CARTESIAN,
                     degree: int = 4) -> FacetSample:
    """Evaluate a field on the interface (``where="interface"``) or a boundary marker."""
    if where == "interface":
        tr = _interface_trace(space, degree, mode)
    else:
        rows = space.mesh.facets_with_marker(where)
        tr = _boundary_trace(space, rows, degree, mode)
    c = np.asarray(coeffs, dtype=float)[tr.dofs]  # (L, nloc)
    if space.components == 1:
        vals = np.einsum("lqb,lb->lq", tr.values, c)
        grads = np.einsum("lqbi,lb->lqi", tr.grads, c)
    else:
        vals = np.einsum("lqbk,lb->lqk", tr.values, c)
        grads = np.einsum("lqbki,lb->lqki", tr.grads, c)
    return FacetSample(tr.points, tr.weights, vals, grads, tr.normals)


def _slip_coefficient(params: MaterialParams, mesh: Mesh) -> np.ndarray:
    kappa = params.kappa_on(mesh, mesh.interface_porous_cell)
    return params.gamma * params.mu_f / np.sqrt(kappa)


def _quad_degree(*spaces: Space, extra: int = 0) -> int:
    return min(sum(s.kind.degree for s in spaces) + extra, MAX_ASSEMBLY_DEGREE)


# ---------------------------------------------------------------------------
# bilinear forms


def _resolve_slots(form: FormId, trial: Space, test: Space):
    """Return (space_in_first_slot, space_in_second_slot, transpose_flag)."""
    first, second = FORM_SLOTS[form]
    if test.field == first and trial.field == second:
        return test, trial, False
    if test.field == second and trial.field == first:
        return trial, test, True
    raise FormError(
        f"{form.value} takes fields ({first}, {second}); got trial={trial.field!r}, test={test.field!r}"
    )


def _same_cells(a: Space, b: Space):
    if a.mesh is not b.mesh and not np.array_equal(a.mesh.vertices, b.mesh.vertices):
        raise FormError("spaces live on different meshes")
    if not np.array_equal(a.cells, b.cells):
        raise FormError("volume form arguments must cover the same cells")


def _same_geometry(a: Space, b: Space):
    if a.mesh is not b.mesh and not np.array_equal(a.mesh.vertices, b.mesh.vertices):
        raise FormError("interface form arguments must share the mesh geometry")


def _sym_grad(grads):
    return 0.5 * (grads + np.swapaxes(grads, -1, -2))


def _divergence(vol_or_trace, radius, hoop: bool):
    div = np.trace(vol_or_trace.grads, axis1=-2, axis2=-1)
    if hoop:
        div = div + vol_or_trace.values[..., 0] / radius[..., None]
    return div


def _canonical(form: FormId, sa: Space, sb: Space, params: MaterialParams, mode: str, weight_fn, hoop: bool,
               part: str, coefficient) -> sp.csr_matrix:
    shape = (sa.n_dofs, sb.n_dofs)
    axis_terms = mode == AXISYM and hoop

    if form in (FormId.A1F, FormId.A2F, FormId.A1P):
        mats = []
        if form is FormId.A1F:
            vol = _volume(sa, _quad_degree(sa, sa, extra=int(mode == AXISYM)), mode, weight_fn)
            local = params.rho_f * np.einsum("cq,qik,qjk->cij", vol.weights, vol.values, vol.values)
            return _scatter(vol.dofs, vol.dofs, local, shape)
        if form is FormId.A2F:
            mu = params.mu_f
        else:
            mu = params.mu_s_on(sa.mesh, sa.cells)[:, None]
        if part in ("all", "volume"):
            vol = _volume(sa, _quad_degree(sa, sa), mode, weight_fn)
            eps = _sym_grad(vol.grads)
            w = 2.0 * mu * vol.weights
            local = np.einsum("cq,cqikl,cqjkl->cij", w, eps, eps)
            if axis_terms:
                radial = vol.values[:, :, 0]
                local += np.einsum("cq,qi,qj->cij", w / vol.radius**2, radial, radial)
            mats.append(_scatter(vol.dofs, vol.dofs, local, shape))
        if form is FormId.A2F and part in ("all", "interface") and len(sa.mesh.interface_facets):
            tr = _interface_trace(sa, _quad_degree(sa, sa, extra=1), mode, weight_fn)
            vt = np.einsum("lqik,lk->lqi", tr.values, tr.tangents)
            coef = _slip_coefficient(params, sa.mesh)
            local = np.einsum("l,lq,lqi,lqj->lij", coef, tr.weights, vt, vt)
            mats.append(_scatter(tr.dofs, tr.dofs, local, shape))
        return sum(mats[1:], mats[0]) if mats else sp.csr_matrix(shape)

    if form is FormId.CF:
        if coefficient is None:
            raise FormError("the convective form needs the advecting velocity (coefficient=...)")
        C, _ = assemble_convective(coefficient, sa, params.rho_f, mode=mode, weight_fn=weight_fn)
        return C

    if form in (FormId.B1F, FormId.B1P):
        # first slot vector (v or w), second slot scalar (q or psi): -int psi div w
        _same_cells(sa, sb)
        deg = _quad_degree(sa, sb, extra=int(mode == AXISYM))
        va = _volume(sa, deg, mode, weight_fn)
        vb = _volume(sb, deg, mode, weight_fn)
        div = _divergence(va, va.radius, axis_terms)  # (nc, nq, na)
        local = -np.einsum("cq,cqi,qj->cij", va.weights, div, vb.values)
        return _scatter(va.dofs, vb.dofs, local, shape)

    if form in (FormId.A3P, FormId.A5P, FormId.B2P):
        _same_cells(sa, sb)
        deg = _quad_degree(sa, sb, extra=int(mode == AXISYM))
        va = _volume(sa, deg, mode, weight_fn)
        vb = _volume(sb, deg, mode, weight_fn)
        lam = params.lam_on(sa.mesh, sa.cells)
        if form is FormId.A3P:
            coef = params.c0 + params.alpha**2 / lam
        elif form is FormId.A5P:
            coef = 1.0 / lam
        else:
            coef = params.alpha / lam
        local = np.einsum("c,cq,qi,qj->cij", coef, va.weights, va.values, vb.values)
        return _scatter(va.dofs, vb.dofs, local, shape)

    if form is FormId.A4P:
        vol = _volume(sa, _quad_degree(sa, sa), mode, weight_fn)
        coef = params.kappa_on(sa.mesh, sa.cells) / params.mu_f
        local = np.einsum("c,cq,cqik,cqjk->cij", coef, vol.weights, vol.grads, vol.grads)
        return _scatter(vol.dofs, vol.dofs, local, shape)

    # interface couplings
    _same_geometry(sa, sb)
    deg = _quad_degree(sa, sb, extra=1)
    ta = _interface_trace(sa, deg, mode, weight_fn)
    tb = ta if sb is sa else _interface_trace(sb, deg, mode, weight_fn)
    if form in (FormId.A2SIG, FormId.B3SIG):
        coef = _slip_coefficient(params, sa.mesh)
        at = np.einsum("lqik,lk->lqi", ta.values, ta.tangents)
        bt = np.einsum("lqik,lk->lqi", tb.values, tb.tangents)
        sign = 1.0 if form is FormId.A2SIG else -1.0
        local = sign * np.einsum("l,lq,lqi,lqj->lij", coef, ta.weights, at, bt)
        return _scatter(ta.dofs, tb.dofs, local, shape)
    if form in (FormId.B2SIG, FormId.B4SIG):
        an = np.einsum("lqik,lk->lqi", ta.values, ta.normals)
        sign = 1.0 if form is FormId.B2SIG else -1.0
        local = sign * np.einsum("lq,lqi,lqj->lij", ta.weights, an, tb.values)
        return _scatter(ta.dofs, tb.dofs, local, shape)
    raise FormError(f"{form} is not a bilinear form")


def assemble(
    form: FormId,
    trial: Space,
    test: Space,
    params: MaterialParams,
    mode: str = CARTESIAN,
    *,
    part: str = "all",
    coefficient: np.ndarray | None = None,
    weight_fn: Callable | None = None,
    hoop: bool = True,
) -> sp.csr_matrix:
    """Assemble ``form`` as a (test dofs x trial dofs) sparse matrix.

    Parameters
    ----------
    part : {"all", "volume", "interface"}
        For ``A2F`` only: restrict to the viscous volume term or to the
        interface friction term.
    coefficient : advecting velocity for ``CF``.
    weight_fn, hoop : axisymmetric overrides.  ``weight_fn(x, y)`` replaces
        the radial weight and ``hoop=False`` drops the terms carrying 1/r.
    """
    form = FormId(form)
    if form in FUNCTIONALS:
        raise FormError(f"{form.value} is a functional; use assemble_functional")
    if part not in ("all", "volume", "interface"):
        raise FormError(f"unknown part {part!r}")
    _check_mode(mode, test.mesh)
    sa, sb, flip = _resolve_slots(form, trial, test)
    M = _canonical(form, sa, sb, params, mode, weight_fn, hoop, part, coefficient)
    return M.T.tocsr() if flip else M


# ---------------------------------------------------------------------------
# functionals

InterfaceFn = Callable[..., np.ndarray]


@dataclass
class FunctionalExtras:
    """Optional data entering the right-hand sides.

    Volume callables take ``(x, y, t)``; boundary and interface callables
    take ``(x, y, t, nx, ny)`` where ``(nx, ny)`` is the facet normal
    (outward on the boundary, fluid-to-porous on the interface).  Vector
    valued callables return arrays of shape (2, ...).

    ``tractions`` maps boundary markers to prescribed stress vectors and
    ``fluxes`` maps markers to the outward Darcy flux datum
    ``(kappa/mu_f) (grad pP - rho_f g) . n``.  ``m1`` .. ``m4`` are the
    interface residuals of a manufactured solution: mass, total traction,
    normal stress and tangential slip balance respectively.
    """

    fluid_force: Callable | None = None
    body_load: Callable | None = None
    darcy_source: Callable | None = None
    tractions: Mapping[str, Callable] = field(default_factory=dict)
    fluxes: Mapping[str, Callable] = field(default_factory=dict)
    m1: InterfaceFn | None = None
    m2: InterfaceFn | None = None
    m3: InterfaceFn | None = None
    m4: InterfaceFn | None = None
    manufactured: bool = False

    def check(self):
        if self.manufactured:
            missing = [k for k in ("m1", "m2", "m3", "m4") if getattr(self, k) is None]
            if missing:
                raise FormError(f"manufactured mode requires interface corrections {', '.join(missing)}")


def _scatter_vector(n, dofs, local):
    out = np.zeros(n)
    np.add.at(out, dofs.ravel(), local.ravel())
    return out


def _as_vector_field(val, shape):
    val = np.asarray(val, dtype=float)
    return np.broadcast_to(val, (2,) + shape) if val.ndim <= 1 or val.shape[0] == 2 else val


def _volume_load(space, fn, t, scale, mode, weight_fn):
    vol = _volume(space, _quad_degree(space, extra=3), mode, weight_fn)
    x, y = vol.quad.points[..., 0], vol.quad.points[..., 1]
    val = np.asarray(fn(x, y, t), dtype=float)
    if space.components == 2:
        val = np.broadcast_to(val, (2,) + x.shape)
        local = scale * np.einsum("cq,qik,kcq->ci", vol.weights, vol.values, val)
    else:
        val = np.broadcast_to(val, x.shape)
        local = scale * np.einsum("cq,qi,cq->ci", vol.weights, vol.values, val)
    return _scatter_vector(space.n_dofs, vol.dofs, local)


def _rows_for(space: Space, marker: str) -> np.ndarray:
    mesh = space.mesh
    rows = mesh.facets_with_marker(marker)
    adj = mesh.cell_subdomain[mesh.boundary_cells[rows]]
    if space.subdomain is None:
        return rows
    return rows[adj == int(space.subdomain)]


def _boundary_load(space, marker, fn, t, mode, weight_fn):
    rows = _rows_for(space, marker)
    if len(rows) == 0:
        return np.zeros(space.n_dofs)
    tr = _boundary_trace(space, rows, _quad_degree(space, extra=3), mode, weight_fn)
    return _facet_load(space, tr, fn, t)


def _facet_load(space, tr: _Trace, fn, t, component=None, scale=1.0):
    """Integrate ``fn`` against traces; ``component`` in {None, "n", "t"} projects vector tests."""
    x, y = tr.points[..., 0], tr.points[..., 1]
    nx = np.broadcast_to(tr.normals[:, None, 0], x.shape)
    ny = np.broadcast_to(tr.normals[:, None, 1], x.shape)
    val = np.asarray(fn(x, y, t, nx, ny), dtype=float)
    if space.components == 1:
        local = np.einsum("lq,lqi,lq->li", tr.weights, tr.values, np.broadcast_to(val, x.shape))
    elif component is None:
        val = np.broadcast_to(val, (2,) + x.shape)
        local = np.einsum("lq,lqik,klq->li", tr.weights, tr.values, val)
    else:
        direction = tr.normals if component == "n" else tr.tangents
        proj = np.einsum("lqik,lk->lqi", tr.values, direction)
        local = np.einsum("lq,lqi,lq->li", tr.weights, proj, np.broadcast_to(val, x.shape))
    return scale * _scatter_vector(space.n_dofs, tr.dofs, local)


def assemble_functional(
    f: FormId,
    test: Space,
    params: MaterialParams,
    time: float = 0.0,
    extras: FunctionalExtras | None = None,
    mode: str = CARTESIAN,
    *,
    weight_fn: Callable | None = None,
) -> np.ndarray:
    """Right-hand-side vector of ``FF`` (fluid), ``FP`` (solid) or ``G`` (Darcy)."""
    f = FormId(f)
    if f not in FUNCTIONALS:
        raise FormError(f"{f.value} is not a functional")
    if test.field != FUNCTIONAL_FIELD[f]:
        raise FormError(f"{f.value} tests against field {FUNCTIONAL_FIELD[f]!r}, got {test.field!r}")
    _check_mode(mode, test.mesh)
    ex = extras or FunctionalExtras()
    ex.check()
    mesh = test.mesh
    out = np.zeros(test.n_dofs)
    g = np.asarray(params.g, dtype=float)
    has_iface = len(mesh.interface_facets) > 0

    def iface_trace():
        return _interface_trace(test, _quad_degree(test, extra=3), mode, weight_fn)

    if f is FormId.FF:
        if np.any(g != 0):
            out += _volume_load(test, lambda x, y, t: g[:, None, None] * np.ones_like(x), time, params.rho_f, mode, weight_fn)
        if ex.fluid_force is not None:
            out += _volume_load(test, ex.fluid_force, time, 1.0, mode, weight_fn)
        for marker, fn in ex.tractions.items():
            out += _boundary_load(test, marker, fn, time, mode, weight_fn)
        if has_iface and (ex.m3 is not None or ex.m4 is not None):
            tr = iface_trace()
            if ex.m3 is not None:
                out += _facet_load(test, tr, ex.m3, time, "n")
            if ex.m4 is not None:
                out += _facet_load(test, tr, ex.m4, time, "t")
        return out

    if f is FormId.FP:
        if ex.body_load is not None:
            out += _volume_load(test, ex.body_load, time, params.rho_s, mode, weight_fn)
        for marker, fn in ex.tractions.items():
            out += _boundary_load(test, marker, fn, time, mode, weight_fn)
        if has_iface and any(m is not None for m in (ex.m2, ex.m3, ex.m4)):
            tr = iface_trace()
            if ex.m2 is not None:
                out += _facet_load(test, tr, ex.m2, time)
            if ex.m3 is not None:
                out -= _facet_load(test, tr, ex.m3, time, "n")
            if ex.m4 is not None:
                out -= _facet_load(test, tr, ex.m4, time, "t")
        return out

    # Darcy functional
    if np.any(g != 0):
        vol = _volume(test, _quad_degree(test, extra=1), mode, weight_fn)
        kappa = params.kappa_on(mesh, test.cells)
        coef = params.rho_f * kappa / params.mu_f
        local = np.einsum("c,cq,cqik,k->ci", coef, vol.weights, vol.grads, g)
        out += _scatter_vector(test.n_dofs, vol.dofs, local)
        if has_iface:
            tr = iface_trace()
            kap = params.kappa_on(mesh, mesh.interface_porous_cell)
            gn = params.rho_f * kap / params.mu_f * (tr.normals @ g)
            local = np.einsum("lq,lqi,l->li", tr.weights, tr.values, gn)
            out -= _scatter_vector(test.n_dofs, tr.dofs, local)
    if ex.darcy_source is not None:
        out += _volume_load(test, ex.darcy_source, time, 1.0, mode, weight_fn)
    for marker, fn in ex.fluxes.items():
        out += _boundary_load(test, marker, fn, time, mode, weight_fn)
    if has_iface and ex.m1 is not None:
        out -= _facet_load(test, iface_trace(), ex.m1, time)
    return out


# ---------------------------------------------------------------------------
# Nitsche inflow and convection


class NitscheTerms(NamedTuple):
    """Weak velocity data on a fluid boundary.

    ``matrix`` (velocity x velocity) and ``vector`` enter the momentum rows.
    ``pressure_coupling[i, j] = <q_i, v_j . n>``; the momentum rows receive
    its transpose in the pressure column and the mass rows (which carry the
    negated divergence) receive ``-pressure_coupling`` with right-hand side
    ``-pressure_vector``.
    """

    matrix: sp.csr_matrix
    vector: np.ndarray
    pressure_coupling: sp.csr_matrix | None = None
    pressure_vector: np.ndarray | None = None


def assemble_nitsche_velocity(
    V: Space,
    marker: str,
    u_in_fn: Callable,
    penalty: float,
    params: MaterialParams,
    time: float = 0.0,
    mode: str = CARTESIAN,
    pressure_space: Space | None = None,
    *,
    weight_fn: Callable | None = None,
) -> NitscheTerms:
    """Symmetric Nitsche imposition of ``u = u_in`` on ``marker``.

    ``u_in_fn(x, y, t)`` returns shape (2, ...).  The penalty term is
    ``penalty / h_facet * <u, v>``.
    """
    mesh = V.mesh
    if V.field != "u":
        raise FormError("Nitsche inflow acts on the fluid velocity space")
    rows = mesh.facets_with_marker(marker)
    adj = mesh.cell_subdomain[mesh.boundary_cells[rows]]
    if (adj != Subdomain.FLUID).any():
        raise FormError(f"marker {marker!r} touches the porous boundary")
    _check_mode(mode, mesh)
    deg = _quad_degree(V, V, extra=1)
    tr = _boundary_trace(V, rows, deg, mode, weight_fn)
    x, y = tr.points[..., 0], tr.points[..., 1]
    g_in = np.broadcast_to(np.asarray(u_in_fn(x, y, time), dtype=float), (2,) + x.shape)
    mu = params.mu_f
    n = tr.normals
    eps = _sym_grad(tr.grads)  # (L, nq, nb, 2, 2)
    traction = 2.0 * mu * np.einsum("lqikj,lj->lqik", eps, n)  # 2 mu eps(phi_i) n
    vals = tr.values  # (L, nq, nb, 2)
    pen = penalty / tr.lengths
    cons = np.einsum("lq,lqik,lqjk->lij", tr.weights, vals, traction)  # <2 mu eps(phi_j) n, phi_i>
    mass = np.einsum("l,lq,lqik,lqjk->lij", pen, tr.weights, vals, vals)
    local = -cons - np.swapaxes(cons, 1, 2) + mass
    matrix = _scatter(tr.dofs, tr.dofs, local, (V.n_dofs, V.n_dofs))
    vec_local = -np.einsum("lq,lqik,klq->li", tr.weights, traction, g_in) + np.einsum(
        "l,lq,lqik,klq->li", pen, tr.weights, vals, g_in
    )
    vector = _scatter_vector(V.n_dofs, tr.dofs, vec_local)
    if pressure_space is None:
        return NitscheTerms(matrix, vector)
    trq = _boundary_trace(pressure_space, rows, deg, mode, weight_fn)
    vn = np.einsum("lqik,lk->lqi", vals, n)
    plocal = np.einsum("lq,lqa,lqi->lai", tr.weights, trq.values, vn)
    P = _scatter(trq.dofs, tr.dofs, plocal, (pressure_space.n_dofs, V.n_dofs))
    gn = np.einsum("klq,lk->lq", g_in, n)
    pvec = _scatter_vector(pressure_space.n_dofs, trq.dofs, np.einsum("lq,lqa,lq->la", tr.weights, trq.values, gn))
    return NitscheTerms(matrix, vector, P, pvec)


def assemble_convective(
    u_lin: np.ndarray,
    V: Space,
    rho_f: float,
    mode: str = CARTESIAN,
    *,
    weight_fn: Callable | None = None,
) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Linearizations of ``rho_f * ((u . grad) w) . v`` about ``u_lin``.

    Returns ``C`` with ``C[i, j] = c(u_lin, phi_j; phi_i)`` and the extra
    Newton term ``J[i, j] = c(phi_j, u_lin; phi_i)``.
    """
    vol = _volume(V, _quad_degree(V, V, V), mode, weight_fn)
    ul, gul = evaluate(V, u_lin, vol.quad)  # (nc, nq, 2), (nc, nq, 2, 2)
    adv = np.einsum("cqjkl,cql->cqjk", vol.grads, ul)  # (u_lin . grad) phi_j
    C = rho_f * np.einsum("cq,qik,cqjk->cij", vol.weights, vol.values, adv)
    react = np.einsum("cqkl,qjl->cqjk", gul, vol.values)  # (phi_j . grad) u_lin
    J = rho_f * np.einsum("cq,qik,cqjk->cij", vol.weights, vol.values, react)
    shape = (V.n_dofs, V.n_dofs)
    return _scatter(vol.dofs, vol.dofs, C, shape), _scatter(vol.dofs, vol.dofs, J, shape)
