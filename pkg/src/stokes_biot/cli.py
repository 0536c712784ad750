"""Command line interface: ``solver convergence|run|fields|mesh``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .linalg import SolverError
from .mesh import MeshError, Subdomain, cell_quality, read_mesh, write_mesh
from .scenarios.config import ConfigError, ScenarioConfig, load_config
from .scenarios.drivers import (ScenarioError, build_params, build_scenario_mesh, run_scenario, shipped_config,
                                shipped_config_names)
from .scenarios.permeability import write_field_csv
from .verification import convergence_mesh, spatial_study, temporal_study

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

log = logging.getLogger("stokes_biot")


def _config(ref: str) -> ScenarioConfig:
    """A config file path, or the name of a bundled configuration."""
    path = Path(ref)
    if path.exists():
        return load_config(path)
    if ref in shipped_config_names():
        return shipped_config(ref)
    raise ConfigError(f"no such config file {ref!r} (bundled: {', '.join(shipped_config_names())})")


def _out_dir(arg: str | None, default: str) -> Path:
    out = Path(arg or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_convergence(args) -> int:
    out = _out_dir(args.out, ".")
    if args.space:
        levels = args.levels or 4
        table = spatial_study(levels, dt=args.dt, T=3 * args.dt)
        path = out / "convergence_space.csv"
    else:
        levels = args.levels or 5
        dts = [0.5 / 2**k for k in range(levels)]
        table = temporal_study(dts, args.mesh_level, T=1.0)
        path = out / "convergence_time.csv"
    with open(path, "w") as fh:
        table.to_csv(fh)
    print(table.format())
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args.config)
    out = args.out or cfg.output_dir or f"{cfg.name}_output"

    def progress(state, row):
        log.info("step %d  t=%.4g  stored energy %.4e", state.step_index, state.t, row["stored_energy"])

    result = run_scenario(cfg, out, callback=progress if args.verbose else None)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    for f in result.files:
        log.info("wrote %s", f)
    return EXIT_OK


def cmd_fields(args) -> int:
    cfg = _config(args.config)
    if cfg.permeability is None:
        raise ConfigError("the configuration has no [permeability] section")
    mesh = build_scenario_mesh(cfg)
    _, fld = build_params(cfg, mesh)
    path = Path(args.out or f"{cfg.name}_permeability.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_field_csv(mesh, fld, path)
    meta = dict(fld.metadata, kind=fld.kind, seed=fld.seed, target_mean=fld.target_mean)
    print(json.dumps(meta, indent=2, sort_keys=True))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_mesh_gen(args) -> int:
    if args.config is not None:
        mesh = build_scenario_mesh(_config(args.config))
    else:
        mesh = convergence_mesh(args.level)
    if args.out:
        with open(args.out, "w") as fh:
            write_mesh(mesh, fh)
        print(f"wrote {args.out}")
    else:
        write_mesh(mesh, sys.stdout)
    return EXIT_OK


def mesh_summary(mesh) -> dict:
    q = cell_quality(mesh)
    info = {"vertices": mesh.n_vertices, "cells": mesh.n_cells, "interface_facets": len(mesh.interface_facets),
            "max_diameter": mesh.max_diameter, "min_quality": float(q.min())}
    for sd in Subdomain:
        cells = mesh.cells_of(sd)
        info[f"{sd.name.lower()}_cells"] = len(cells)
        info[f"{sd.name.lower()}_area"] = float(mesh.cell_areas[cells].sum())
    info["markers"] = {m: len(mesh.facets_with_marker(m)) for m in mesh.markers}
    return info


def cmd_mesh_info(args) -> int:
    try:
        with open(args.mesh) as fh:
            mesh = read_mesh(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.mesh}: {exc.strerror}") from None
    print(json.dumps(mesh_summary(mesh), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solver", description="Coupled free-flow / poroelastic finite element solver")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convergence", help="manufactured-solution convergence study")
    mode = c.add_mutually_exclusive_group(required=True)
    mode.add_argument("--space", action="store_true", help="refine the mesh (three steps of size --dt)")
    mode.add_argument("--time", action="store_true", help="refine the time step on a fixed mesh up to T = 1")
    c.add_argument("--levels", type=int, help="number of refinements (default 4 in space, 5 in time)")
    c.add_argument("--dt", type=float, default=0.01, help="time step of the spatial study")
    c.add_argument("--mesh-level", type=int, default=4, help="mesh level of the temporal study")
    c.add_argument("--out", help="output directory for the CSV table")
    c.set_defaults(func=cmd_convergence)

    r = sub.add_parser("run", help="run a scenario configuration")
    r.add_argument("config", help="INI file or bundled name (" + ", ".join(shipped_config_names()) + ")")
    r.add_argument("--out", help="output directory (overrides [output] dir)")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fields", help="permeability fields")
    fsub = f.add_subparsers(dest="action", required=True)
    g = fsub.add_parser("gen", help="generate the configured permeability field as CSV")
    g.add_argument("config")
    g.add_argument("--out", help="CSV path")
    g.set_defaults(func=cmd_fields)

    m = sub.add_parser("mesh", help="mesh generation and inspection")
    msub = m.add_subparsers(dest="action", required=True)
    mg = msub.add_parser("gen", help="write a mesh in the mesh2d v1 format")
    src = mg.add_mutually_exclusive_group()
    src.add_argument("--config", help="take the mesh from a scenario configuration")
    src.add_argument("--level", type=int, default=1, help="convergence mesh level (default 1)")
    mg.add_argument("--out", help="output path (default stdout)")
    mg.set_defaults(func=cmd_mesh_gen)
    mi = msub.add_parser("info", help="summarize a mesh2d v1 file")
    mi.add_argument("mesh")
    mi.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, MeshError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"solver failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
