"""Manufactured solutions, error norms and convergence studies.

The exact fields live on the fluid box (-1, 1) x (0, 2) above the porous box
(-1, 1) x (-2, 0)::

    u   = sin t (-cos(pi x) sin(pi y), sin(pi x) cos(pi y))
    pF  = sin t cos(pi x) cos(pi y)
    d   = cos t (pi x cos(pi x y), -pi y cos(pi x y))
    pP  = cos t sin(pi x) sin(pi y)
    phi = alpha pP

``d`` is the rotated gradient of ``sin(pi x y)`` and is divergence free, so
the total pressure reduces to ``alpha pP`` for every Lame parameter.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .forms import FunctionalExtras, MaterialParams
from .mesh import (
    FLUID_DIRICHLET,
    FLUID_TRACTION,
    POROUS_DISPLACEMENT,
    POROUS_PRESSURE,
    Mesh,
    generate_two_layer_rect,
)
from .spaces import cell_quadrature, evaluate
from .system import TAYLOR_HOOD, CoupledProblem, DirichletBC, SolutionState

PI = math.pi

REFERENCE_PARAMS = dict(lam=1000.0, mu_s=1.0, mu_f=0.1, alpha=1.0, gamma=1.0, c0=0.01,
                        kappa=0.001, rho_s=1.2, rho_f=1.0)


def reference_params(**overrides) -> MaterialParams:
    """Coefficients of the manufactured test, with optional overrides."""
    return MaterialParams(**{**REFERENCE_PARAMS, **overrides})


def convergence_mesh(level: int) -> Mesh:
    """Level ``L`` of the two-layer box: ``2**L`` cells per side and layer."""
    if level < 1:
        raise ValueError("levels start at 1")
    n = 2**level
    return generate_two_layer_rect((-1.0, 1.0), (0.0, 2.0), (-2.0, 0.0), n, n)


def _stress(grad, pressure, mu):
    """``2 mu sym(grad) - pressure I`` for arrays grad (2, 2, ...)."""
    eps = 0.5 * (grad + np.swapaxes(grad, 0, 1))
    sig = 2.0 * mu * eps
    sig[0, 0] = sig[0, 0] - pressure
    sig[1, 1] = sig[1, 1] - pressure
    return sig


def _apply(sig, nx, ny):
    return np.stack([sig[0, 0] * nx + sig[0, 1] * ny, sig[1, 0] * nx + sig[1, 1] * ny])


@dataclass
class ManufacturedCase:
    """Closed-form fields, their derivatives and the matching data."""

    params: MaterialParams
    transient: bool = False

    # exact fields -----------------------------------------------------------
    def u(self, x, y, t):
        return math.sin(t) * self._u_shape(x, y)

    def _u_shape(self, x, y):
        return np.stack([-np.cos(PI * x) * np.sin(PI * y), np.sin(PI * x) * np.cos(PI * y)])

    def u_t(self, x, y, t):
        return math.cos(t) * self._u_shape(x, y)

    def grad_u(self, x, y, t):
        s = math.sin(t) * PI
        return s * np.array(
            [
                [np.sin(PI * x) * np.sin(PI * y), -np.cos(PI * x) * np.cos(PI * y)],
                [np.cos(PI * x) * np.cos(PI * y), -np.sin(PI * x) * np.sin(PI * y)],
            ]
        )

    def pF(self, x, y, t):
        return math.sin(t) * np.cos(PI * x) * np.cos(PI * y)

    def grad_pF(self, x, y, t):
        return -math.sin(t) * PI * np.stack([np.sin(PI * x) * np.cos(PI * y), np.cos(PI * x) * np.sin(PI * y)])

    def _d_shape(self, x, y):
        c = np.cos(PI * x * y)
        return np.stack([PI * x * c, -PI * y * c])

    def d(self, x, y, t):
        return math.cos(t) * self._d_shape(x, y)

    def d_t(self, x, y, t):
        return -math.sin(t) * self._d_shape(x, y)

    def grad_d(self, x, y, t):
        c = np.cos(PI * x * y)
        s = np.sin(PI * x * y)
        return math.cos(t) * np.array(
            [
                [PI * c - PI**2 * x * y * s, -PI**2 * x**2 * s],
                [PI**2 * y**2 * s, -PI * c + PI**2 * x * y * s],
            ]
        )

    def laplacian_d(self, x, y, t):
        c = np.cos(PI * x * y)
        s = np.sin(PI * x * y)
        r2 = x**2 + y**2
        return math.cos(t) * np.stack(
            [-2 * PI**2 * y * s - PI**3 * x * r2 * c, 2 * PI**2 * x * s + PI**3 * y * r2 * c]
        )

    def pP(self, x, y, t):
        return math.cos(t) * np.sin(PI * x) * np.sin(PI * y)

    def pP_t(self, x, y, t):
        return -math.sin(t) * np.sin(PI * x) * np.sin(PI * y)

    def grad_pP(self, x, y, t):
        return math.cos(t) * PI * np.stack([np.cos(PI * x) * np.sin(PI * y), np.sin(PI * x) * np.cos(PI * y)])

    def phi(self, x, y, t):
        return self.params.alpha * self.pP(x, y, t)

    def grad_phi(self, x, y, t):
        return self.params.alpha * self.grad_pP(x, y, t)

    def div_d(self, x, y, t):
        g = self.grad_d(x, y, t)
        return g[0, 0] + g[1, 1]

    # sources ------------------------------------------------------------------
    def fluid_force(self, x, y, t):
        """Momentum source of the free flow (with inertia in transient mode)."""
        p = self.params
        f = 2 * PI**2 * p.mu_f * self.u(x, y, t) + self.grad_pF(x, y, t)
        if self.transient:
            u = self.u(x, y, t)
            G = self.grad_u(x, y, t)
            conv = np.einsum("ij...,j...->i...", G, u)
            f = f + p.rho_f * (self.u_t(x, y, t) + conv)
        return f

    def body_load(self, x, y, t):
        """Body force per unit solid density (multiplied by rho_s in the functional)."""
        p = self.params
        return (-p.mu_s * self.laplacian_d(x, y, t) + p.alpha * self.grad_pP(x, y, t)) / p.rho_s

    def darcy_source(self, x, y, t):
        p = self.params
        return p.c0 * self.pP_t(x, y, t) + float(p.kappa) / p.mu_f * 2 * PI**2 * self.pP(x, y, t)

    # boundary data ------------------------------------------------------------
    def fluid_stress(self, x, y, t):
        return _stress(self.grad_u(x, y, t), self.pF(x, y, t), self.params.mu_f)

    def porous_stress(self, x, y, t):
        return _stress(self.grad_d(x, y, t), self.phi(x, y, t), self.params.mu_s)

    def fluid_traction(self, x, y, t, nx, ny):
        return _apply(self.fluid_stress(x, y, t), nx, ny)

    def porous_traction(self, x, y, t, nx, ny):
        return _apply(self.porous_stress(x, y, t), nx, ny)

    def darcy_flux(self, x, y, t, nx, ny):
        g = self.grad_pP(x, y, t)
        return float(self.params.kappa) / self.params.mu_f * (g[0] * nx + g[1] * ny)

    # interface residuals ------------------------------------------------------
    def m1(self, x, y, t, nx, ny):
        p = self.params
        u, dt, gp = self.u(x, y, t), self.d_t(x, y, t), self.grad_pP(x, y, t)
        k = float(p.kappa) / p.mu_f
        return (u[0] - dt[0] + k * gp[0]) * nx + (u[1] - dt[1] + k * gp[1]) * ny

    def m2(self, x, y, t, nx, ny):
        return self.fluid_traction(x, y, t, nx, ny) - self.porous_traction(x, y, t, nx, ny)

    def m3(self, x, y, t, nx, ny):
        tr = self.fluid_traction(x, y, t, nx, ny)
        return tr[0] * nx + tr[1] * ny + self.pP(x, y, t)

    def m4(self, x, y, t, nx, ny):
        p = self.params
        tx, ty = ny, -nx
        tr = self.fluid_traction(x, y, t, nx, ny)
        slip = self.u(x, y, t) - self.d_t(x, y, t)
        coef = p.gamma * p.mu_f / math.sqrt(float(p.kappa))
        return tr[0] * tx + tr[1] * ty + coef * (slip[0] * tx + slip[1] * ty)

    # problem set-up -----------------------------------------------------------
    def extras(self) -> FunctionalExtras:
        return FunctionalExtras(
            fluid_force=self.fluid_force,
            body_load=self.body_load,
            darcy_source=self.darcy_source,
            tractions={FLUID_TRACTION: self.fluid_traction, POROUS_PRESSURE: self.porous_traction},
            fluxes={POROUS_DISPLACEMENT: self.darcy_flux},
            m1=self.m1,
            m2=self.m2,
            m3=self.m3,
            m4=self.m4,
            manufactured=True,
        )

    def bcs(self) -> list:
        return [
            DirichletBC("u", FLUID_DIRICHLET, self.u),
            DirichletBC("d", POROUS_DISPLACEMENT, self.d),
            DirichletBC("pP", POROUS_PRESSURE, self.pP),
        ]

    def problem(self, mesh: Mesh, family: str = TAYLOR_HOOD, pressure_kind=None) -> CoupledProblem:
        return CoupledProblem(mesh, self.params, family=family, bcs=self.bcs(), extras=self.extras(),
                              pressure_kind=pressure_kind, navier_stokes=self.transient)

    def initial_state(self, problem: CoupledProblem) -> SolutionState:
        return problem.construct_initial_state(self.pP, 0.0, u0=self.u if self.transient else None)


def manufactured_case(params: MaterialParams | None = None, transient: bool = False) -> ManufacturedCase:
    params = params or reference_params()
    if np.ndim(params.kappa) != 0:
        raise ValueError("the manufactured case needs a constant permeability")
    return ManufacturedCase(params, transient)


# ---------------------------------------------------------------------------
# error norms

ERROR_FIELDS = ("u", "pF", "d", "pP", "phi")
_H1_FIELDS = {"u", "d", "pP"}


def error_norms(problem: CoupledProblem, state: SolutionState, case: ManufacturedCase, t: float | None = None,
                degree: int = 6) -> dict:
    """Errors of a state against the exact fields.

    H1 norms for ``u``, ``d`` and ``pP``; L2 norms for ``pF`` and ``phi``.
    """
    t = state.t if t is None else t
    S = problem.spaces
    out = {}
    exact = {
        "u": (case.u, case.grad_u),
        "pF": (case.pF, None),
        "d": (case.d, case.grad_d),
        "pP": (case.pP, case.grad_pP),
        "phi": (case.phi, None),
    }
    for name in ERROR_FIELDS:
        space = S[name]
        quad = cell_quadrature(space.mesh, space.cells, degree)
        vals, grads = evaluate(space, getattr(state, name), quad)
        x, y = quad.points[..., 0], quad.points[..., 1]
        fn, gfn = exact[name]
        ev = np.asarray(fn(x, y, t))
        if space.components == 2:
            diff = vals - np.moveaxis(ev, 0, -1)
            sq = np.sum(diff**2, axis=-1)
        else:
            sq = (vals - ev) ** 2
        total = np.sum(quad.weights * sq)
        if name in _H1_FIELDS:
            eg = np.asarray(gfn(x, y, t))
            if space.components == 2:
                gd = grads - np.transpose(eg, (2, 3, 0, 1))
                total += np.sum(quad.weights * np.sum(gd**2, axis=(-1, -2)))
            else:
                gd = grads - np.moveaxis(eg, 0, -1)
                total += np.sum(quad.weights * np.sum(gd**2, axis=-1))
        out[name] = float(np.sqrt(total))
    return out


# ---------------------------------------------------------------------------
# rate tables


CSV_HEADER = ("dof", "h", "e_u", "rate_u", "e_pF", "rate_pF", "e_d", "rate_d", "e_pP", "rate_pP", "e_phi", "rate_phi")


@dataclass
class RateTable:
    """Errors per refinement with observed orders.

    ``h`` holds the mesh size for spatial studies and the time step for
    temporal studies.  Rates are ``log(e_prev / e) / log(h_prev / h)``,
    i.e. ``log2`` of the error ratio when ``h`` halves.
    """

    dofs: list = field(default_factory=list)
    h: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # list of dicts

    def add(self, dof: int, h: float, errors: dict) -> None:
        self.dofs.append(int(dof))
        self.h.append(float(h))
        self.errors.append(dict(errors))

    def __len__(self) -> int:
        return len(self.h)

    def rates(self, name: str) -> list:
        out = [None]
        for k in range(1, len(self.h)):
            e0, e1 = self.errors[k - 1][name], self.errors[k][name]
            if e0 <= 0 or e1 <= 0 or self.h[k] == self.h[k - 1]:
                out.append(None)
            else:
                out.append(math.log(e0 / e1) / math.log(self.h[k - 1] / self.h[k]))
        return out[: len(self.h)]

    def final_rates(self) -> dict:
        return {f: self.rates(f)[-1] for f in ERROR_FIELDS}

    def rows(self) -> list:
        rates = {f: self.rates(f) for f in ERROR_FIELDS}
        out = []
        for k in range(len(self.h)):
            row = [self.dofs[k], self.h[k]]
            for f in ERROR_FIELDS:
                row += [self.errors[k][f], rates[f][k]]
            out.append(row)
        return out

    def to_csv(self, stream=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows():
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text

    def format(self) -> str:
        lines = ["  dof        h      " + "  ".join(f"{'e_' + f:>10s} {'rate':>6s}" for f in ERROR_FIELDS)]
        for row in self.rows():
            cells = [f"{row[0]:6d} {row[1]:9.4g}"]
            for k in range(len(ERROR_FIELDS)):
                e, r = row[2 + 2 * k], row[3 + 2 * k]
                cells.append(f"{e:10.4e} {'--' if r is None else f'{r:6.3f}':>6s}")
            lines.append("  ".join(cells))
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# studies


@dataclass
class RunRecord:
    """Diagnostics gathered along one manufactured run."""

    max_div_residual: float = 0.0
    max_phi_residual: float = 0.0
    newton_iterations: list = field(default_factory=list)

    def update(self, state: SolutionState) -> None:
        d = state.diagnostics
        self.max_div_residual = max(self.max_div_residual, d.get("div_residual", 0.0))
        self.max_phi_residual = max(self.max_phi_residual, d.get("phi_residual", 0.0))
        if "newton_iterations" in d:
            self.newton_iterations.append(d["newton_iterations"])


def run_manufactured(mesh: Mesh, params: MaterialParams, dt: float, n_steps: int, family: str = TAYLOR_HOOD,
                     transient: bool = False, accumulate: bool = False, pressure_kind=None):
    """Run the manufactured problem; return (problem, final state, errors, record).

    With ``accumulate`` the returned errors are ``sqrt(sum_n dt e_n^2)``
    over the steps, otherwise the errors at the final time.
    """
    case = manufactured_case(params, transient)
    problem = case.problem(mesh, family, pressure_kind)
    state = case.initial_state(problem)
    record = RunRecord()
    record.update(state)
    acc = {f: 0.0 for f in ERROR_FIELDS}
    for _ in range(n_steps):
        state = problem.step(state, dt)
        record.update(state)
        if accumulate:
            e = error_norms(problem, state, case)
            for f in ERROR_FIELDS:
                acc[f] += dt * e[f] ** 2
    if accumulate:
        errors = {f: math.sqrt(v) for f, v in acc.items()}
    else:
        errors = error_norms(problem, state, case)
    return problem, state, errors, record


def spatial_study(levels: int | Sequence[int], params: MaterialParams | None = None, dt: float = 0.01,
                  T: float = 0.03, family: str = TAYLOR_HOOD, transient: bool = False, records: list | None = None,
                  pressure_kind=None) -> RateTable:
    """Errors at ``T`` on refinement levels ``1..levels`` (or an explicit list)."""
    params = params or reference_params()
    level_list = list(range(1, levels + 1)) if isinstance(levels, int) else list(levels)
    n_steps = int(round(T / dt))
    table = RateTable()
    for level in level_list:
        mesh = convergence_mesh(level)
        problem, _, errors, record = run_manufactured(mesh, params, dt, n_steps, family, transient,
                                                      pressure_kind=pressure_kind)
        if records is not None:
            records.append(record)
        table.add(problem.layout.total, mesh.max_diameter, errors)
    return table


def temporal_study(dt_list: Sequence[float], level: int, params: MaterialParams | None = None, T: float = 1.0,
                   family: str = TAYLOR_HOOD, records: list | None = None) -> RateTable:
    """Accumulated errors ``sqrt(sum_n dt |e(t_n)|^2)`` on a fixed mesh."""
    params = params or reference_params()
    mesh = convergence_mesh(level)
    table = RateTable()
    for dt in dt_list:
        n_steps = int(round(T / dt))
        if not math.isclose(n_steps * dt, T, rel_tol=1e-9):
            raise ValueError(f"time step {dt} does not divide the horizon {T}")
        problem, _, errors, record = run_manufactured(mesh, params, dt, n_steps, family, accumulate=True)
        if records is not None:
            records.append(record)
        table.add(problem.layout.total, dt, errors)
    return table


def lambda_robustness(lambdas: Sequence[float], level: int, params: MaterialParams | None = None,
                      dt: float = 0.01, T: float = 0.03, family: str = TAYLOR_HOOD,
                      records: list | None = None) -> dict:
    """Final-time errors for each Lame parameter on one mesh level."""
    params = params or reference_params()
    mesh = convergence_mesh(level)
    out = {}
    for lam in lambdas:
        p = replace(params, lam=float(lam))
        _, _, errors, record = run_manufactured(mesh, p, dt, int(round(T / dt)), family)
        if records is not None:
            records.append(record)
        out[float(lam)] = errors
    return out
