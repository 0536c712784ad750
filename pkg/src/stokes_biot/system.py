"""Initial data, backward Euler steps and energy diagnostics.

The semi-discrete system is written as ``N dU/dt + M U = F`` with the five
fields ordered (u, pF, d, pP, phi).  One backward Euler step solves
``(M + N/dt) U^n = F^n + (N/dt) U^{n-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .fem import ElementKind
from .forms import (
    AXISYM,
    CARTESIAN,
    FormId,
    FunctionalExtras,
    MaterialParams,
    assemble,
    assemble_convective,
    assemble_functional,
    assemble_nitsche_velocity,
)
from .linalg import BlockSystem, EliminatedOperator, SolverError, monolithic
from .mesh import Mesh, Subdomain
from .spaces import (
    FIELDS,
    BlockLayout,
    DofSet,
    build_space,
    cell_quadrature,
    dirichlet_dofs,
    evaluate,
    l2_project_function,
)

TAYLOR_HOOD = "taylor_hood"
MINI = "mini"


class ConfigurationError(ValueError):
    pass


def build_family_spaces(mesh: Mesh, family: str = TAYLOR_HOOD, pressure_kind: ElementKind | str | None = None) -> dict:
    """Spaces for the five fields of an inf-sup stable element family.

    ``taylor_hood``: P2 velocity and displacement, P1 fluid and total
    pressure, P2 pore pressure (P1 on request).  ``mini``: P1 + bubble
    velocity and displacement, P1 for the three scalar fields.
    """
    fam = family.lower()
    if fam in ("p1", "equal_order", "p1p1"):
        raise ConfigurationError(
            "equal-order P1 velocity/pressure pairs violate the inf-sup condition; use taylor_hood or mini"
        )
    if fam == TAYLOR_HOOD:
        vec, scal = ElementKind.P2, ElementKind.P1
        pkind = ElementKind(pressure_kind) if pressure_kind else ElementKind.P2
    elif fam == MINI:
        vec, scal = ElementKind.P1_BUBBLE, ElementKind.P1
        pkind = ElementKind(pressure_kind) if pressure_kind else ElementKind.P1
    else:
        raise ConfigurationError(f"unknown element family {family!r}")
    if pkind is ElementKind.P1_BUBBLE:
        raise ConfigurationError("pore pressure must use P1 or P2")
    F, P = Subdomain.FLUID, Subdomain.POROUS
    return {
        "u": build_space(mesh, F, vec, 2, "u"),
        "pF": build_space(mesh, F, scal, 1, "pF"),
        "d": build_space(mesh, P, vec, 2, "d"),
        "pP": build_space(mesh, P, pkind, 1, "pP"),
        "phi": build_space(mesh, P, scal, 1, "phi"),
    }


@dataclass
class DirichletBC:
    """Essential condition ``field = value`` on facets labelled ``marker``."""

    field: str
    marker: str
    value: Callable | float | Sequence[float] = 0.0
    components: Sequence[bool] | str | None = None


@dataclass
class NitscheBC:
    """Weakly imposed fluid velocity ``u = value(x, y, t)`` on ``marker``."""

    marker: str
    value: Callable
    penalty: float = 1.0


@dataclass
class SolutionState:
    t: float
    u: np.ndarray
    pF: np.ndarray
    d: np.ndarray
    pP: np.ndarray
    phi: np.ndarray
    d_prev: np.ndarray
    pP_prev: np.ndarray
    phi_prev: np.ndarray
    u_prev: np.ndarray | None = None
    step_index: int = 0
    dt: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def vector(self, layout: BlockLayout) -> np.ndarray:
        return layout.join({f: getattr(self, f) for f in FIELDS})

    def field(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass(frozen=True)
class EnergyReport:
    elastic: float
    storage: float
    total_pressure: float
    viscous: float
    darcy: float
    slip: float

    @property
    def stored(self) -> float:
        """Energy ``mu_s|eps(d)|^2 + c0/2 |pP|^2 + 1/(2 lam) |alpha pP - phi|^2``."""
        return self.elastic + self.storage + self.total_pressure


class CoupledProblem:
    """Discrete coupled free-flow / poroelastic problem on a fixed mesh.

    Parameters
    ----------
    mesh : Mesh
    params : MaterialParams
    family : ``"taylor_hood"`` or ``"mini"``
    mode : ``"cartesian"`` or ``"axisym"``
    bcs : essential conditions
    nitsche : weakly imposed fluid velocities
    extras : volume, boundary and interface data for the right-hand sides
    pressure_kind : element for the pore pressure (defaults per family)
    navier_stokes : include fluid inertia and convection
    """

    def __init__(
        self,
        mesh: Mesh,
        params: MaterialParams,
        family: str = TAYLOR_HOOD,
        mode: str = CARTESIAN,
        bcs: Sequence[DirichletBC] = (),
        nitsche: Sequence[NitscheBC] = (),
        extras: FunctionalExtras | None = None,
        pressure_kind: ElementKind | str | None = None,
        navier_stokes: bool = False,
    ):
        if mode not in (CARTESIAN, AXISYM):
            raise ConfigurationError(f"unknown mode {mode!r}")
        self.mesh = mesh
        self.params = params
        self.family = family
        self.mode = mode
        self.bcs = list(bcs)
        self.nitsche = list(nitsche)
        self.extras = extras or FunctionalExtras()
        self.navier_stokes = navier_stokes
        self.spaces = build_family_spaces(mesh, family, pressure_kind)
        self.layout = BlockLayout.from_spaces(self.spaces)
        for bc in self.bcs:
            if bc.field not in FIELDS:
                raise ConfigurationError(f"unknown field {bc.field!r} in boundary condition")
            if bc.marker not in mesh.boundary_markers:
                raise ConfigurationError(f"unknown boundary marker {bc.marker!r}")
        for nb in self.nitsche:
            if nb.marker not in mesh.boundary_markers:
                raise ConfigurationError(f"unknown boundary marker {nb.marker!r}")
        self._constrained = self._dirichlet(0.0).indices
        self.fluid_mesh = mesh
        self._assemble_fixed()
        self._assemble_fluid()
        self._operators: dict = {}

    # -- assembly ----------------------------------------------------------
    def _a(self, form, trial, test, **kw):
        return assemble(form, self.spaces[trial], self.spaces[test], self.params, self.mode, **kw)

    def _assemble_fixed(self):
        """Porous and interface blocks; they live on the reference mesh."""
        S, a = self.spaces, self._a
        lay = self.layout
        N = BlockSystem(lay)
        M = BlockSystem(lay)
        has_iface = len(self.mesh.interface_facets) > 0
        if has_iface:
            N.add("u", "d", a(FormId.B3SIG, "d", "u"))
            N.add("d", "d", a(FormId.A2SIG, "d", "d"))
            N.add("pP", "d", a(FormId.B4SIG, "d", "pP"), -1.0)
            M.add("u", "u", a(FormId.A2F, "u", "u", part="interface"))
            M.add("u", "pP", a(FormId.B2SIG, "pP", "u"))
            M.add("d", "u", a(FormId.B3SIG, "u", "d"))
            M.add("d", "pP", a(FormId.B4SIG, "pP", "d"))
            M.add("pP", "u", a(FormId.B2SIG, "u", "pP"), -1.0)
        N.add("pP", "pP", a(FormId.A3P, "pP", "pP"))
        N.add("pP", "phi", a(FormId.B2P, "phi", "pP"), -1.0)
        M.add("d", "d", a(FormId.A1P, "d", "d"))
        M.add("d", "phi", a(FormId.B1P, "phi", "d"))
        M.add("pP", "pP", a(FormId.A4P, "pP", "pP"))
        M.add("phi", "d", a(FormId.B1P, "d", "phi"), -1.0)
        M.add("phi", "pP", a(FormId.B2P, "pP", "phi"), -1.0)
        M.add("phi", "phi", a(FormId.A5P, "phi", "phi"))
        self._N_fixed = monolithic(N)
        self._M_fixed = monolithic(M)
        # Nitsche matrices are assembled on the reference fluid boundary.
        self._nitsche = []
        for nb in self.nitsche:
            terms = assemble_nitsche_velocity(S["u"], nb.marker, nb.value, nb.penalty, self.params, 0.0,
                                              self.mode, pressure_space=S["pF"])
            self._nitsche.append((nb, terms))
        if self._nitsche:
            B = BlockSystem(lay)
            for _, terms in self._nitsche:
                B.add("u", "u", terms.matrix)
                B.add("u", "pF", terms.pressure_coupling.T)
                B.add("pF", "u", terms.pressure_coupling, -1.0)
            self._M_fixed = self._M_fixed + monolithic(B)

    def _assemble_fluid(self):
        """Fluid volume blocks on the current (possibly moved) fluid mesh."""
        u = self.spaces["u"].with_mesh(self.fluid_mesh)
        p = self.spaces["pF"].with_mesh(self.fluid_mesh)
        self._fluid_spaces = (u, p)
        lay = self.layout
        M = BlockSystem(lay)
        M.add("u", "u", assemble(FormId.A2F, u, u, self.params, self.mode, part="volume"))
        M.add("u", "pF", assemble(FormId.B1F, p, u, self.params, self.mode))
        M.add("pF", "u", assemble(FormId.B1F, u, p, self.params, self.mode), -1.0)
        self._M_fluid = monolithic(M)
        N = BlockSystem(lay)
        if self.navier_stokes:
            N.add("u", "u", assemble(FormId.A1F, u, u, self.params, self.mode))
        self._N_fluid = monolithic(N)
        self._operators = {}

    def move_fluid_mesh(self, vertices: np.ndarray) -> None:
        """Use new fluid-domain vertex positions for the fluid volume terms."""
        self.fluid_mesh = self.mesh.with_vertices(vertices)
        self._assemble_fluid()

    @property
    def N(self) -> sp.csr_matrix:
        return (self._N_fixed + self._N_fluid).tocsr()

    @property
    def M(self) -> sp.csr_matrix:
        return (self._M_fixed + self._M_fluid).tocsr()

    def step_matrix(self, dt: float) -> sp.csr_matrix:
        return (self.M + self.N / dt).tocsr()

    def factorize(self, dt: float) -> EliminatedOperator:
        """Step matrix for ``dt`` with the essential DOFs eliminated, LU-factorized (cached)."""
        key = float(dt)
        if key not in self._operators:
            self._operators = {key: EliminatedOperator(self.step_matrix(dt), self._constrained)}
        return self._operators[key]

    # -- data --------------------------------------------------------------
    def _dirichlet(self, t: float, fields: Sequence[str] | None = None) -> DofSet:
        parts = []
        for bc in self.bcs:
            if fields is not None and bc.field not in fields:
                continue
            ds = dirichlet_dofs(self.spaces[bc.field], bc.marker, bc.components, bc.value, t)
            parts.append(ds.shifted(self.layout.offsets[bc.field]))
        if not parts:
            return DofSet.empty()
        return parts[0].union(*parts[1:])

    def load_vector(self, t: float) -> np.ndarray:
        S = self.spaces
        F = np.zeros(self.layout.total)
        lay = self.layout
        F[lay.slice("u")] = assemble_functional(FormId.FF, S["u"], self.params, t, self.extras, self.mode)
        F[lay.slice("d")] = assemble_functional(FormId.FP, S["d"], self.params, t, self.extras, self.mode)
        F[lay.slice("pP")] = assemble_functional(FormId.G, S["pP"], self.params, t, self.extras, self.mode)
        for nb, _ in self._nitsche:
            terms = assemble_nitsche_velocity(S["u"], nb.marker, nb.value, nb.penalty, self.params, t,
                                              self.mode, pressure_space=S["pF"])
            F[lay.slice("u")] += terms.vector
            F[lay.slice("pF")] -= terms.pressure_vector
        return F

    # -- states ------------------------------------------------------------
    def zero_state(self, t: float = 0.0) -> SolutionState:
        z = {f: np.zeros(self.layout.size(f)) for f in FIELDS}
        return SolutionState(t, z["u"], z["pF"], z["d"], z["pP"], z["phi"],
                             z["d"].copy(), z["pP"].copy(), z["phi"].copy(), z["u"].copy())

    def _state_from_vector(self, U: np.ndarray, t: float, prev: SolutionState | None, index: int) -> SolutionState:
        parts = {f: np.array(v) for f, v in self.layout.split(U).items()}
        if prev is None:
            dp, pp, php, up = parts["d"].copy(), parts["pP"].copy(), parts["phi"].copy(), parts["u"].copy()
        else:
            dp, pp, php, up = prev.d.copy(), prev.pP.copy(), prev.phi.copy(), prev.u.copy()
        dt = 0.0 if prev is None else t - prev.t
        st = SolutionState(t, parts["u"], parts["pF"], parts["d"], parts["pP"], parts["phi"], dp, pp, php, up, index, dt)
        for name, vals in parts.items():
            if not np.all(np.isfinite(vals)):
                raise SolverError(f"non-finite values in field {name} at t={t:g} (step {index})")
        return st

    def construct_initial_state(self, p_P0: Callable | float = 0.0, t0: float = 0.0,
                                u0: Callable | None = None) -> SolutionState:
        """Consistent initial data.

        The pore pressure is the L2 projection of ``p_P0``.  Velocity and
        fluid pressure solve the stationary Stokes problem driven by that
        pressure with zero solid velocity on the interface.  Displacement
        and total pressure solve the elasticity saddle problem driven by the
        projected pressure and the computed velocity.

        With fluid inertia the velocity is an initial condition in its own
        right: passing ``u0`` replaces the Stokes solve by the L2 projection
        of ``u0`` (fluid pressure zero).
        """
        S, lay = self.spaces, self.layout
        fn = p_P0 if callable(p_P0) else (lambda x, y, t, c=float(p_P0): np.full_like(x, c))
        pP = l2_project_function(fn, S["pP"], t0)
        F = self.load_vector(t0)
        M = self.M
        bc = self._dirichlet(t0)

        def sub(rows, cols):
            r = np.concatenate([np.arange(lay.slice(f).start, lay.slice(f).stop) for f in rows])
            c = np.concatenate([np.arange(lay.slice(f).start, lay.slice(f).stop) for f in cols])
            return r, c

        def solve_block(fields, rhs_full, known):
            idx, _ = sub(fields, fields)
            A = M[idx][:, idx]
            rhs = rhs_full[idx] - M[idx] @ known
            local = {int(g): k for k, g in enumerate(idx)}
            sel = [k for k, g in enumerate(bc.indices) if int(g) in local]
            cons = np.array([local[int(bc.indices[k])] for k in sel], dtype=np.int64)
            vals = bc.values[sel]
            op = EliminatedOperator(A, cons)
            x = op.solve(rhs, vals)
            out = np.zeros(lay.total)
            out[idx] = x
            return out

        known = lay.join({"pP": pP})
        if u0 is None:
            known = known + solve_block(("u", "pF"), F, known)
        else:
            known[lay.slice("u")] = l2_project_function(u0, S["u"], t0)
            ubc = self._dirichlet(t0, ("u",))
            known[ubc.indices] = ubc.values
        elastic = solve_block(("d", "phi"), F, known)
        U = known + elastic
        state = self._state_from_vector(U, t0, None, 0)
        state.diagnostics = self._residuals(U, F, None, None)
        return state

    # -- stepping ----------------------------------------------------------
    def _residuals(self, U, F, dt, U_prev) -> dict:
        """Max-norm residuals of the fluid mass rows and the total-pressure rows."""
        lay = self.layout
        if dt is None:
            R = self.M @ U - F
        else:
            K = self.step_matrix(dt)
            R = K @ U - F - (self.N / dt) @ U_prev
        R[self._constrained] = 0.0
        return {
            "div_residual": float(np.abs(R[lay.slice("pF")]).max(initial=0.0)),
            "phi_residual": float(np.abs(R[lay.slice("phi")]).max(initial=0.0)),
        }

    def step(self, state: SolutionState, dt: float) -> SolutionState:
        """One backward Euler step of the quasi-static problem."""
        if not dt > 0:
            raise ValueError("time step must be positive")
        if self.navier_stokes:
            new, _ = self.step_navier_stokes(state, dt)
            return new
        t = state.t + dt
        U_prev = state.vector(self.layout)
        rhs = self.load_vector(t) + (self.N / dt) @ U_prev
        bc = self._dirichlet(t)
        U = self.factorize(dt).solve(rhs, bc.values)
        new = self._state_from_vector(U, t, state, state.step_index + 1)
        new.diagnostics = self._residuals(U, self.load_vector(t), dt, U_prev)
        return new

    def step_navier_stokes(self, state: SolutionState, dt: float, tol: float = 1e-8, max_iter: int = 20):
        """Backward Euler step with fluid inertia and Newton iterations on convection.

        Returns ``(state, iterations)``; raises :class:`SolverError` carrying
        the last residual if ``max_iter`` iterations do not reach ``tol``.
        """
        if not dt > 0:
            raise ValueError("time step must be positive")
        t = state.t + dt
        lay = self.layout
        U_prev = state.vector(lay)
        N = self._N_fixed + self._N_fluid
        if not self.navier_stokes:
            u, _ = self._fluid_spaces
            N = N + monolithic(_single_block(lay, "u", assemble(FormId.A1F, u, u, self.params, self.mode)))
        K = (self.M + N / dt).tocsr()
        F = self.load_vector(t)
        rhs = F + (N / dt) @ U_prev
        bc = self._dirichlet(t)
        U = U_prev.copy()
        U[bc.indices] = bc.values
        free = np.ones(lay.total, dtype=bool)
        free[bc.indices] = False
        us = lay.slice("u")
        V = self._fluid_spaces[0]
        history = []
        for it in range(1, max_iter + 1):
            C, J = assemble_convective(U[us], V, self.params.rho_f, self.mode)
            R = K @ U - rhs
            R[us] += C @ U[us]
            R[~free] = 0.0
            res = float(np.linalg.norm(R))
            history.append(res)
            if it > 1 and res <= tol:
                break
            Jac = K + monolithic(_single_block(lay, "u", C + J))
            op = EliminatedOperator(Jac, bc.indices)
            delta = op.solve(-R, np.zeros(len(bc.indices)))
            U = U + delta
        else:
            C, _ = assemble_convective(U[us], V, self.params.rho_f, self.mode)
            R = K @ U - rhs
            R[us] += C @ U[us]
            R[~free] = 0.0
            res = float(np.linalg.norm(R))
            history.append(res)
            if res > tol:
                raise SolverError(f"Newton did not converge in {max_iter} iterations (residual {res:.3e})",
                                  residual=res)
            it = max_iter + 1
        iterations = it - 1
        new = self._state_from_vector(U, t, state, state.step_index + 1)
        R = K @ U - rhs
        R[us] += assemble_convective(U[us], V, self.params.rho_f, self.mode)[0] @ U[us]
        R[~free] = 0.0
        new.diagnostics = {
            "div_residual": float(np.abs(R[lay.slice("pF")]).max(initial=0.0)),
            "phi_residual": float(np.abs(R[lay.slice("phi")]).max(initial=0.0)),
            "newton_iterations": iterations,
            "newton_history": history,
        }
        return new, iterations

    # -- diagnostics -------------------------------------------------------
    def reactions(self, state: SolutionState) -> np.ndarray:
        """Unconstrained residual of the step equations at ``state``.

        Entries at constrained DOFs are the discrete boundary reactions; for
        pore-pressure DOFs they equal minus the outward Darcy flux tested
        with the nodal basis function.  Convection is not included, so the
        velocity rows are only meaningful without fluid inertia.
        """
        lay = self.layout
        U = state.vector(lay)
        R = self.M @ U - self.load_vector(state.t)
        if state.dt > 0:
            prev = {f: np.zeros(lay.size(f)) for f in FIELDS}
            prev.update(d=state.d_prev, pP=state.pP_prev, phi=state.phi_prev)
            if state.u_prev is not None:
                prev["u"] = state.u_prev
            R = R + (self.N @ (U - lay.join(prev))) / state.dt
        return R

    def energy(self, state: SolutionState) -> EnergyReport:
        """Stored energy and instantaneous dissipation rates of a state."""
        S, p = self.spaces, self.params
        mesh = self.mesh
        deg = 6
        radial = self.mode == AXISYM

        def weights(q):
            return q.weights * (q.points[..., 0] if radial else 1.0)

        qP = cell_quadrature(mesh, S["d"].cells, deg)
        wP = weights(qP)
        dv, dg = evaluate(S["d"], state.d, qP)
        eps = 0.5 * (dg + np.swapaxes(dg, -1, -2))
        mu_s = p.mu_s_on(mesh, S["d"].cells)[:, None]
        elastic = float(np.sum(mu_s * wP * np.einsum("cqij,cqij->cq", eps, eps)))
        if radial:
            elastic += float(np.sum(mu_s * wP * (dv[..., 0] / qP.points[..., 0]) ** 2))
        pv, pg = evaluate(S["pP"], state.pP, qP)
        fv, _ = evaluate(S["phi"], state.phi, qP)
        lam = p.lam_on(mesh, S["d"].cells)[:, None]
        storage = 0.5 * p.c0 * float(np.sum(wP * pv**2))
        total_pressure = float(np.sum(wP * (p.alpha * pv - fv) ** 2 / (2.0 * lam)))
        kappa = p.kappa_on(mesh, S["d"].cells)[:, None]
        darcy = float(np.sum(wP * kappa / p.mu_f * np.einsum("cqi,cqi->cq", pg, pg)))

        u_space = self._fluid_spaces[0]
        qF = cell_quadrature(self.fluid_mesh, u_space.cells, deg)
        wF = weights(qF)
        uv, ug = evaluate(u_space, state.u, qF)
        epsu = 0.5 * (ug + np.swapaxes(ug, -1, -2))
        viscous = 2.0 * p.mu_f * float(np.sum(wF * np.einsum("cqij,cqij->cq", epsu, epsu)))
        if radial:
            viscous += 2.0 * p.mu_f * float(np.sum(wF * (uv[..., 0] / qF.points[..., 0]) ** 2))

        slip = 0.0
        if len(mesh.interface_facets):
            # Slip dissipation  gamma mu_f / sqrt(kappa) |(u - d_t) . t|^2 on the interface.
            Au = assemble(FormId.A2F, S["u"], S["u"], p, self.mode, part="interface")
            Ad = assemble(FormId.A2SIG, S["d"], S["d"], p, self.mode)
            Bc = assemble(FormId.B3SIG, S["d"], S["u"], p, self.mode)
            rate = (state.d - state.d_prev) / state.dt if state.dt > 0 else np.zeros_like(state.d)
            slip = float(state.u @ Au @ state.u + rate @ Ad @ rate + 2.0 * state.u @ Bc @ rate)
            slip = max(slip, 0.0)
        return EnergyReport(elastic, storage, total_pressure, viscous, darcy, slip)


def _single_block(layout: BlockLayout, name: str, matrix) -> BlockSystem:
    B = BlockSystem(layout)
    B.add(name, name, matrix)
    return B


def run(problem: CoupledProblem, state: SolutionState, dt: float, n_steps: int, callback=None):
    """Advance ``n_steps`` steps, calling ``callback(state)`` after each."""
    states = [state]
    for _ in range(n_steps):
        state = problem.step(state, dt)
        states.append(state)
        if callback is not None:
            callback(state)
    return states
