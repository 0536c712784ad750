"""Scenario assembly from a configuration and the time loop with diagnostics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ..fem import ElementKind
from ..forms import AXISYM, FunctionalExtras, MaterialParams, sample_on_facets
from ..linalg import SolverError
from ..mesh import Mesh, Subdomain, cell_quality, generate_two_layer_rect, read_mesh, relabel_boundary
from ..movemesh import fluid_motion, global_displacement, harmonic_extension, move_mesh, vertex_samples
from ..spaces import build_space, marker_nodes
from ..system import CoupledProblem, DirichletBC, NitscheBC, SolutionState
from .config import BoundarySpec, ConfigError, ScenarioConfig, parse_config
from .output import vertex_field, write_series_csv, write_vtk
from .permeability import PermeabilityError, PermeabilityField, permeability_field, read_cell_csv, write_field_csv

log = logging.getLogger(__name__)

SERIES_COLUMNS = ("step", "t", "elastic", "storage", "total_pressure", "stored_energy", "viscous", "darcy", "slip",
                  "interface_pressure", "outlet_pressure", "pressure_drop", "max_interface_displacement",
                  "inflow", "interface_flux", "outflow", "outflow_gradient", "min_quality_near_interface", "div_residual",
                  "phi_residual", "newton_iterations")


class ScenarioError(RuntimeError):
    """A module failure during a scenario run, tagged with the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass
class ScenarioSetup:
    config: ScenarioConfig
    mesh: Mesh
    params: MaterialParams
    problem: CoupledProblem
    permeability: PermeabilityField | None = None


@dataclass
class RunResult:
    config: ScenarioConfig
    series: list
    summary: dict
    state: SolutionState
    setup: ScenarioSetup
    files: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# construction


def build_scenario_mesh(cfg: ScenarioConfig) -> Mesh:
    m = cfg.mesh
    if "file" in m:
        try:
            with open(m["file"]) as fh:
                mesh = read_mesh(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read mesh {m['file']}: {exc.strerror}") from None
    else:
        mesh = generate_two_layer_rect(m["x_range"], m["y_fluid"], m["y_porous"], m["nx"], m["ny"],
                                       markers=m.get("sides") or None)
    for marker, new, cond in m.get("splits", ()):
        if marker not in mesh.boundary_markers:
            raise ConfigError(f"[mesh] split refers to unknown marker {marker!r}")
        mesh = relabel_boundary(mesh, marker, new, lambda x, y, c=cond: c(x, y, 0.0) > 0)
    return mesh


def build_params(cfg: ScenarioConfig, mesh: Mesh) -> tuple[MaterialParams, PermeabilityField | None]:
    mat = dict(cfg.materials)
    fld = None
    if cfg.permeability is not None:
        p = cfg.permeability
        try:
            fld = permeability_field(mesh, p["kind"], p["params"], p["seed"], p["target_mean"])
        except PermeabilityError as exc:
            raise ConfigError(f"[permeability] {exc}") from None
        except OSError as exc:
            raise ConfigError(f"[permeability] cannot read {exc.filename}: {exc.strerror}") from None
        mat["kappa"] = fld.values
    if cfg.elasticity is not None:
        mat["lam"], mat["mu_s"] = lame_from_porosity(mesh, cfg.elasticity)
    try:
        return MaterialParams(**mat), fld
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid material parameters: {exc}") from None


def lame_from_porosity(mesh: Mesh, spec: dict) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell Lame parameters from a porosity column and a fixed Poisson ratio."""
    try:
        phi = read_cell_csv(mesh, spec["path"], spec["column"])
    except OSError as exc:
        raise ConfigError(f"[elasticity] cannot read {spec['path']}: {exc.strerror}") from None
    except PermeabilityError as exc:
        raise ConfigError(f"[elasticity] {exc}") from None
    porous = mesh.cells_of(Subdomain.POROUS)
    if not np.all((phi[porous] >= 0) & (phi[porous] < 0.5)):
        raise ConfigError("porosity must lie in [0, 0.5) for the Young modulus law")
    young = spec["young"] * (1.0 - 2.0 * np.nan_to_num(phi, nan=0.0)) ** spec["exponent"]
    nu = spec["poisson"]
    lam = young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = young / (2.0 * (1.0 + nu))
    return lam, mu


def _traction_fn(spec: BoundarySpec):
    value = spec.value
    if spec.kind == "normal_stress":
        if not callable(value) or hasattr(value, "parts"):
            raise ConfigError(f"[bc.{spec.marker}] normal_stress takes a scalar inflow pressure")
        return lambda x, y, t, nx, ny: -value(x, y, t) * np.stack([nx * np.ones_like(x), ny * np.ones_like(x)])
    if not hasattr(value, "parts"):
        raise ConfigError(f"[bc.{spec.marker}] traction needs two components")
    return lambda x, y, t, nx, ny: value(x, y, t)


def _flux_fn(spec: BoundarySpec):
    if hasattr(spec.value, "parts"):
        raise ConfigError(f"[bc.{spec.marker}] flux takes a scalar value")
    return lambda x, y, t, nx, ny: spec.value(x, y, t)


def translate_boundaries(cfg: ScenarioConfig, mesh: Mesh):
    """Map the boundary table to essential, Nitsche and natural data."""
    bcs, nitsche, tractions, fluxes = [], [], {}, {}
    known = set(mesh.boundary_markers)
    for spec in cfg.boundaries:
        if spec.marker not in known:
            raise ConfigError(f"boundary condition on unknown marker {spec.marker!r}; "
                              f"mesh markers: {', '.join(mesh.markers)}")
        rows = mesh.facets_with_marker(spec.marker)
        side = set(mesh.cell_subdomain[mesh.boundary_cells[rows]].tolist())
        vector = hasattr(spec.value, "parts")
        if spec.kind == "velocity":
            if side != {Subdomain.FLUID} or not vector:
                raise ConfigError(f"[bc.{spec.marker}] velocity needs a fluid marker and two components")
            bcs.append(DirichletBC("u", spec.marker, spec.value, spec.components))
        elif spec.kind == "displacement":
            if side != {Subdomain.POROUS} or not vector:
                raise ConfigError(f"[bc.{spec.marker}] displacement needs a porous marker and two components")
            bcs.append(DirichletBC("d", spec.marker, spec.value, spec.components))
        elif spec.kind == "pressure":
            if side != {Subdomain.POROUS} or vector:
                raise ConfigError(f"[bc.{spec.marker}] pressure is a scalar on a porous marker; "
                                  "use normal_stress on fluid boundaries")
            bcs.append(DirichletBC("pP", spec.marker, spec.value))
        elif spec.kind in ("traction", "normal_stress"):
            tractions[spec.marker] = _traction_fn(spec)
        elif spec.kind == "flux":
            if side != {Subdomain.POROUS}:
                raise ConfigError(f"[bc.{spec.marker}] flux needs a porous marker")
            fluxes[spec.marker] = _flux_fn(spec)
        elif spec.kind == "nitsche":
            if side != {Subdomain.FLUID} or not vector:
                raise ConfigError(f"[bc.{spec.marker}] nitsche needs a fluid marker and two components")
            nitsche.append(NitscheBC(spec.marker, spec.value, spec.penalty))
    return bcs, nitsche, FunctionalExtras(tractions=tractions, fluxes=fluxes)


def setup_scenario(cfg: ScenarioConfig) -> ScenarioSetup:
    mesh = build_scenario_mesh(cfg)
    params, fld = build_params(cfg, mesh)
    bcs, nitsche, extras = translate_boundaries(cfg, mesh)
    for name in (cfg.inlet_marker, cfg.outlet_marker):
        if name is not None and name not in mesh.boundary_markers:
            raise ConfigError(f"unknown marker {name!r} in [scenario]")
    try:
        problem = CoupledProblem(mesh, params, family=cfg.family, mode=cfg.mode, bcs=bcs, nitsche=nitsche,
                                 extras=extras, pressure_kind=cfg.pressure_element,
                                 navier_stokes=cfg.navier_stokes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ScenarioSetup(cfg, mesh, params, problem, fld)


# ---------------------------------------------------------------------------
# diagnostics


def _mean_on(problem: CoupledProblem, name: str, coeffs, where: str) -> float:
    fs = sample_on_facets(problem.spaces[name], coeffs, where, problem.mode)
    return fs.integrate(fs.values) / fs.measure


def interface_vertices(mesh: Mesh) -> np.ndarray:
    return np.unique(mesh.interface_facets.ravel())


def near_interface_cells(mesh: Mesh) -> np.ndarray:
    """Cells with at least one vertex on the interface."""
    on = np.zeros(mesh.n_vertices, dtype=bool)
    on[interface_vertices(mesh)] = True
    return np.flatnonzero(on[mesh.cells].any(axis=1))


def extension_space(problem: CoupledProblem):
    """Continuous fluid space carrying the harmonic extension (P2 or P1)."""
    kind = ElementKind.P2 if problem.spaces["d"].kind is ElementKind.P2 else ElementKind.P1
    return build_space(problem.mesh, Subdomain.FLUID, kind, components=2, field="u")


def deformed_configuration(problem: CoupledProblem, state: SolutionState, moving: bool, target=None) -> np.ndarray:
    """Vertex displacement of the visualized configuration.

    With motion the fluid vertices follow the harmonic extension; without it
    only the porous closure moves.
    """
    d_space = problem.spaces["d"]
    if moving and len(problem.mesh.interface_facets):
        ext = harmonic_extension(state.d, d_space, target or extension_space(problem))
        return global_displacement(state.d, d_space, ext)
    return vertex_samples(state.d, d_space)


def quality_near_interface(mesh: Mesh, displacement: np.ndarray) -> float:
    moved = mesh.with_vertices(mesh.vertices + displacement)
    return float(cell_quality(moved, near_interface_cells(mesh)).min())


def consistent_outflow(problem: CoupledProblem, state: SolutionState, marker: str) -> float:
    """Outward Darcy flux through a pressure-Dirichlet marker from the discrete reactions.

    Unlike the sampled gradient this is exactly conservative and does not
    suffer from the corner singularity where the outlet meets a no-flux wall.
    """
    nodes = marker_nodes(problem.spaces["pP"], marker)
    R = problem.reactions(state)
    total = -float(R[problem.layout.slice("pP").start + nodes].sum())
    return 2.0 * math.pi * total if problem.mode == AXISYM else total


def diagnostics(problem: CoupledProblem, state: SolutionState, cfg: ScenarioConfig, moving: bool,
                displacement: np.ndarray | None = None) -> dict:
    mesh, p = problem.mesh, problem.params
    e = problem.energy(state)
    row = {"step": state.step_index, "t": state.t, "elastic": e.elastic, "storage": e.storage,
           "total_pressure": e.total_pressure, "stored_energy": e.stored, "viscous": e.viscous, "darcy": e.darcy,
           "slip": e.slip}
    has_iface = len(mesh.interface_facets) > 0
    if has_iface:
        row["interface_pressure"] = _mean_on(problem, "pP", state.pP, "interface")
        dv = vertex_samples(state.d, problem.spaces["d"])[interface_vertices(mesh)]
        row["max_interface_displacement"] = float(np.sqrt((dv**2).sum(axis=1)).max())
        fs = sample_on_facets(problem.spaces["u"], state.u, "interface", problem.mode)
        row["interface_flux"] = fs.integrate(np.einsum("lqk,lk->lq", fs.values, fs.normals))
        disp = displacement if displacement is not None else deformed_configuration(problem, state, moving)
        row["min_quality_near_interface"] = quality_near_interface(mesh, disp)
    if cfg.outlet_marker:
        row["outlet_pressure"] = _mean_on(problem, "pP", state.pP, cfg.outlet_marker)
        fs = sample_on_facets(problem.spaces["pP"], state.pP, cfg.outlet_marker, problem.mode)
        rows = mesh.facets_with_marker(cfg.outlet_marker)
        kappa = p.kappa_on(mesh, mesh.boundary_cells[rows])[:, None]
        g = np.asarray(p.g)
        flux = -(kappa / p.mu_f) * np.einsum("lqi,li->lq", fs.grads - p.rho_f * g, fs.normals)
        row["outflow_gradient"] = fs.integrate(flux)
        row["outflow"] = consistent_outflow(problem, state, cfg.outlet_marker)
        if has_iface:
            row["pressure_drop"] = row["interface_pressure"] - row["outlet_pressure"]
    if cfg.inlet_marker:
        fs = sample_on_facets(problem.spaces["u"], state.u, cfg.inlet_marker, problem.mode)
        row["inflow"] = -fs.integrate(np.einsum("lqk,lk->lq", fs.values, fs.normals))
    if problem.mode == AXISYM:
        for k in ("interface_flux", "outflow_gradient", "inflow"):
            if k in row:
                row[k] *= 2.0 * math.pi
    for k in ("div_residual", "phi_residual", "newton_iterations"):
        if k in state.diagnostics:
            row[k] = state.diagnostics[k]
    return row


# ---------------------------------------------------------------------------
# running


def _zero_velocity(x, y, t):
    return np.zeros((2,) + np.shape(x))


def _write_snapshot(setup: ScenarioSetup, state: SolutionState, path: Path, displacement) -> None:
    pr, S = setup.problem, setup.problem.spaces
    point = {"u": vertex_field(state.u, S["u"]), "pF": vertex_field(state.pF, S["pF"]),
             "d": vertex_field(state.d, S["d"]), "pP": vertex_field(state.pP, S["pP"]),
             "phi": vertex_field(state.phi, S["phi"])}
    if displacement is not None:
        point["global_displacement"] = displacement
    cell = {"subdomain": pr.mesh.cell_subdomain.astype(float)}
    kappa = np.asarray(pr.params.kappa, dtype=float)
    cell["permeability"] = np.nan_to_num(np.broadcast_to(kappa, (pr.mesh.n_cells,)), nan=0.0) * (
        pr.mesh.cell_subdomain == Subdomain.POROUS)
    write_vtk(pr.fluid_mesh, path, point, cell, title=f"{setup.config.name} t={state.t:.6g}")


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None, callback=None) -> RunResult:
    """Initial data, time loop with optional mesh motion, outputs and summary."""
    setup = setup_scenario(cfg)
    pr = setup.problem
    has_iface = len(pr.mesh.interface_facets) > 0
    moving = cfg.mesh_motion and has_iface
    target = extension_space(pr) if moving else None
    out = Path(out_dir or cfg.output_dir) if (out_dir or cfg.output_dir) else None
    files = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if setup.permeability is not None:
            write_field_csv(pr.mesh, setup.permeability, out / "permeability.csv")
            files.append(out / "permeability.csv")

    p0 = cfg.initial_pressure if cfg.initial_pressure is not None else 0.0
    try:
        state = pr.construct_initial_state(p0, 0.0, u0=_zero_velocity if cfg.navier_stokes else None)
    except (SolverError, ValueError) as exc:
        raise ScenarioError(f"initial data: {exc}", 0) from exc
    series = [diagnostics(pr, state, cfg, moving)]
    for n in range(1, cfg.n_steps + 1):
        try:
            state = pr.step(state, cfg.dt)
            disp = deformed_configuration(pr, state, moving, target) if has_iface else None
            if moving:
                move_mesh(pr.mesh, disp)  # the visualized configuration must stay valid
                pr.move_fluid_mesh(fluid_motion(pr.mesh, disp).vertices)
        except (SolverError, ValueError) as exc:
            raise ScenarioError(f"step {n} (t={n * cfg.dt:g}): {exc}", n) from exc
        row = diagnostics(pr, state, cfg, moving, disp)
        series.append(row)
        if callback is not None:
            callback(state, row)
        if not all(math.isfinite(v) for v in row.values() if isinstance(v, float)):
            raise ScenarioError(f"non-finite diagnostics at step {n}", n)
        if out is not None and cfg.write_vtk and n % cfg.output_every == 0:
            path = out / f"{cfg.name}_{n:05d}.vtk"
            _write_snapshot(setup, state, path, disp)
            files.append(path)
        log.info("step %d t=%.4g stored=%.4e", n, state.t, row["stored_energy"])

    summary = summarize(cfg, series)
    if out is not None:
        write_series_csv(series, out / f"{cfg.name}_series.csv", [c for c in SERIES_COLUMNS if c in series[-1]])
        (out / f"{cfg.name}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        files += [out / f"{cfg.name}_series.csv", out / f"{cfg.name}_summary.json"]
    return RunResult(cfg, series, summary, state, setup, files)


def summarize(cfg: ScenarioConfig, series: list) -> dict:
    last = series[-1]
    out = {"name": cfg.name, "steps": len(series) - 1, "final_time": last["t"], "mesh_motion": cfg.mesh_motion}
    for k in ("elastic", "storage", "total_pressure", "stored_energy", "pressure_drop", "interface_pressure",
              "outlet_pressure"):
        if k in last:
            out[f"final_{k}"] = last[k]
    if "max_interface_displacement" in last:
        out["max_interface_displacement"] = max(r["max_interface_displacement"] for r in series)
    if "min_quality_near_interface" in last:
        out["min_quality_near_interface"] = min(r["min_quality_near_interface"] for r in series)
    for k in ("inflow", "outflow", "outflow_gradient", "interface_flux"):
        if k in last:
            out[f"integrated_{k}"] = float(sum(r[k] for r in series[1:]) * cfg.dt)
    its = [r["newton_iterations"] for r in series[1:] if "newton_iterations" in r]
    if its:
        out["mean_newton_iterations"] = float(np.mean(its))
    res = [max(r.get("div_residual", 0.0), r.get("phi_residual", 0.0)) for r in series[1:]]
    out["max_constraint_residual"] = float(max(res)) if res else 0.0
    return out


# ---------------------------------------------------------------------------
# shipped configurations


def shipped_config_names() -> list:
    return sorted(p.name[:-4] for p in resources.files(__package__).joinpath("configs").iterdir()
                  if p.name.endswith(".ini"))


def shipped_config(name: str, **overrides) -> ScenarioConfig:
    """Load a bundled configuration; keyword overrides replace config fields."""
    res = resources.files(__package__).joinpath("configs", f"{name}.ini")
    if not res.is_file():
        raise ConfigError(f"no shipped configuration {name!r}; available: {', '.join(shipped_config_names())}")
    cfg = parse_config(res.read_text(), str(res))
    if cfg.output_dir is not None:
        cfg.output_dir = Path(cfg.output_dir).name  # never write into the installed package
    return replace(cfg, **overrides) if overrides else cfg


# Four porous permeability profiles with a common mean.
EYE_PROFILES = {
    "decreasing": {"kind": "laplace_gradient", "seed": None,
                   "params": {"high": 2.88e-11, "low": 1e-14, "high_marker": "interface", "low_marker": "outlet"}},
    "increasing": {"kind": "laplace_gradient", "seed": None,
                   "params": {"high": 6.55e-11, "low": 1e-14, "high_marker": "outlet", "low_marker": "interface"}},
    "random": {"kind": "log_uniform_random", "seed": 7,
               "params": {"low": 1e-14, "high": 3.99e-11, "spacing": "linear"}},
    "spots": {"kind": "random_spots", "seed": 11,
              "params": {"low": 1e-14, "high": 2.28e-11, "count": 4, "radius": 4.0e-5}},
}
EYE_MEAN_PERMEABILITY = 2.0e-11


def pressure_drop_sweep(base: ScenarioConfig | None = None, profiles: dict | None = None,
                        target_mean: float = EYE_MEAN_PERMEABILITY) -> dict:
    """Run the axisymmetric channel once per permeability profile.

    Returns ``{profile: RunResult}``; compare ``summary["final_pressure_drop"]``.
    """
    base = base or shipped_config("eye_sweep")
    out = {}
    for name, prof in (profiles or EYE_PROFILES).items():
        perm = {"kind": prof["kind"], "params": dict(prof["params"]), "seed": prof["seed"], "target_mean": target_mean}
        cfg = replace(base, name=f"{base.name}_{name}", permeability=perm, output_dir=None)
        out[name] = run_scenario(cfg)
    return out


def channel_motion_comparison(base: ScenarioConfig | None = None) -> dict:
    """Run the pressure-driven channel with and without fluid-mesh motion."""
    base = base or shipped_config("channel")
    return {"motion": run_scenario(replace(base, mesh_motion=True, output_dir=None)),
            "static": run_scenario(replace(base, mesh_motion=False, output_dir=None))}
