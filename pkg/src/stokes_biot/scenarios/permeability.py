"""Piecewise-constant permeability fields on the porous cells."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..fem import ElementKind
from ..linalg import EliminatedOperator
from ..mesh import Mesh, Subdomain
from ..spaces import build_space, marker_nodes, stiffness_matrix

KINDS = ("constant", "laplace_gradient", "log_uniform_random", "random_spots", "cell_csv")
MEAN_RTOL = 1e-3
MAX_NORMALIZE_ITERATIONS = 20
INTERFACE = "interface"


class PermeabilityError(ValueError):
    """Invalid field parameters or an unreachable target mean."""


@dataclass
class PermeabilityField:
    """Per-cell values (NaN on fluid cells) with generation metadata."""

    values: np.ndarray
    kind: str
    seed: int | None = None
    target_mean: float | None = None
    metadata: dict = field(default_factory=dict)

    def porous_values(self, mesh: Mesh) -> np.ndarray:
        return self.values[mesh.cells_of(Subdomain.POROUS)]


def porous_mean(mesh: Mesh, values: np.ndarray) -> float:
    """Area-weighted mean over the porous cells."""
    cells = mesh.cells_of(Subdomain.POROUS)
    a = mesh.cell_areas[cells]
    return float(np.sum(a * values[cells]) / np.sum(a))


def make_rng(seed: int | None) -> np.random.Generator:
    """Seeded PCG64 stream; identical seeds give identical fields on every platform."""
    return np.random.Generator(np.random.PCG64(0 if seed is None else int(seed)))


def normalize_mean(mesh: Mesh, values: np.ndarray, target: float, lower: float = 0.0,
                   upper: float = np.inf) -> np.ndarray:
    """Rescale porous values to an area-weighted mean of ``target`` within bounds.

    Unclamped cells are scaled so that the mean is met given the currently
    clamped ones; clamping and rescaling repeat until the mean is within
    ``MEAN_RTOL``.
    """
    if not target > 0:
        raise PermeabilityError("target mean must be positive")
    if not lower <= target <= upper:
        raise PermeabilityError(f"target mean {target:g} is outside the bounds [{lower:g}, {upper:g}]")
    cells = mesh.cells_of(Subdomain.POROUS)
    a = mesh.cell_areas[cells]
    v = np.array(values[cells], dtype=float)
    total = target * a.sum()
    for _ in range(MAX_NORMALIZE_ITERATIONS):
        clamped = (v <= lower) | (v >= upper)
        free_mass = np.sum(a[~clamped] * v[~clamped])
        if free_mass <= 0:
            break
        scale = (total - np.sum(a[clamped] * v[clamped])) / free_mass
        v[~clamped] *= scale
        v = np.clip(v, lower, upper)
        if abs(np.sum(a * v) / total - 1.0) <= MEAN_RTOL:
            out = np.array(values, dtype=float)
            out[cells] = v
            return out
    raise PermeabilityError(f"could not reach mean {target:g} within [{lower:g}, {upper:g}] "
                            f"(got {np.sum(a * v) / a.sum():g})")


def _empty(mesh: Mesh) -> np.ndarray:
    return np.full(mesh.n_cells, np.nan)


def _laplace_gradient(mesh: Mesh, high_marker: str, low_marker: str, high: float, low: float) -> np.ndarray:
    """Cell averages of the P1 solution of a Laplace problem with two Dirichlet parts."""
    S = build_space(mesh, Subdomain.POROUS, ElementKind.P1, 1, field="pP")

    def nodes(marker):
        if marker == INTERFACE:
            return np.unique(S.vertex_node[mesh.interface_facets.ravel()])
        return marker_nodes(S, marker)

    hi, lo = nodes(high_marker), nodes(low_marker)
    if len(hi) == 0 or len(lo) == 0:
        raise PermeabilityError("laplace_gradient needs two nonempty boundary parts")
    vals = np.zeros(S.n_nodes)
    vals[lo] = low
    vals[hi] = high
    fixed = np.union1d(hi, lo)
    op = EliminatedOperator(stiffness_matrix(S), fixed)
    sol = op.solve(np.zeros(S.n_nodes), vals[fixed])
    out = _empty(mesh)
    out[S.cells] = sol[S.cell_nodes].mean(axis=1)
    return out


def read_cell_csv(mesh: Mesh, path, column: str, scale: float = 1.0) -> np.ndarray:
    """Read ``cell,<column>[,...]`` rows; one row per porous cell or per mesh cell."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or column not in rows[0]:
        raise PermeabilityError(f"{path}: missing column {column!r}")
    porous = mesh.cells_of(Subdomain.POROUS)
    out = _empty(mesh)
    if "cell" in rows[0]:
        ids = np.array([int(r["cell"]) for r in rows])
        vals = np.array([float(r[column]) for r in rows]) * scale
        if len(ids) != len(porous) or not np.array_equal(np.sort(ids), np.sort(porous)):
            raise PermeabilityError(f"{path}: {len(ids)} rows do not match the {len(porous)} porous cells")
        out[ids] = vals
    else:
        vals = np.array([float(r[column]) for r in rows]) * scale
        if len(vals) != len(porous):
            raise PermeabilityError(f"{path}: {len(vals)} rows do not match the {len(porous)} porous cells")
        out[porous] = vals
    return out


def permeability_field(mesh: Mesh, kind: str, params: dict | None = None, seed: int | None = None,
                       target_mean: float | None = None) -> PermeabilityField:
    """Generate a per-cell permeability field.

    Parameters by kind:

    * ``constant``: ``value``
    * ``laplace_gradient``: ``high``, ``low``, ``high_marker``, ``low_marker``
      (a boundary marker name or ``"interface"``)
    * ``log_uniform_random``: ``low``, ``high``, ``spacing`` (``"log"`` samples
      the exponent uniformly, ``"linear"`` the value)
    * ``random_spots``: ``low`` (spot value), ``high`` (background, rescaled
      by the mean normalization), ``count``, ``radius``
    * ``cell_csv``: ``path``, ``column`` (default ``permeability``), ``scale``

    ``low``/``high`` also bound the mean normalization.
    """
    p = dict(params or {})
    if kind not in KINDS:
        raise PermeabilityError(f"unknown permeability kind {kind!r}; expected one of {', '.join(KINDS)}")
    porous = mesh.cells_of(Subdomain.POROUS)
    if len(porous) == 0:
        raise PermeabilityError("the mesh has no porous cells")

    def need(*names):
        missing = [n for n in names if n not in p]
        if missing:
            raise PermeabilityError(f"{kind} needs parameter(s) {', '.join(missing)}")
        return [p[n] for n in names]

    lower, upper = 0.0, np.inf
    if kind == "constant":
        (value,) = need("value")
        values = _empty(mesh)
        values[porous] = float(value)
    elif kind == "laplace_gradient":
        high, low, hm, lm = need("high", "low", "high_marker", "low_marker")
        high, low = float(high), float(low)
        values = _laplace_gradient(mesh, str(hm), str(lm), high, low)
        lower, upper = min(low, high), max(low, high)
    elif kind == "log_uniform_random":
        low, high = (float(v) for v in need("low", "high"))
        if not 0 < low < high:
            raise PermeabilityError("random bounds must satisfy 0 < low < high")
        rng = make_rng(seed)
        spacing = p.get("spacing", "log")
        values = _empty(mesh)
        if spacing == "log":
            values[porous] = np.exp(rng.uniform(np.log(low), np.log(high), len(porous)))
        elif spacing == "linear":
            values[porous] = rng.uniform(low, high, len(porous))
        else:
            raise PermeabilityError(f"unknown spacing {spacing!r}")
        lower, upper = low, high
    elif kind == "random_spots":
        low, high, count, radius = need("low", "high", "count", "radius")
        low, high, count, radius = float(low), float(high), int(count), float(radius)
        rng = make_rng(seed)
        xy = mesh.vertices[np.unique(mesh.cells[porous])]
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        centers = lo + rng.random((count, 2)) * (hi - lo)
        c = mesh.cell_centroids[porous]
        dist = np.sqrt(((c[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)).min(axis=1) if count else np.full(len(c), np.inf)
        values = _empty(mesh)
        values[porous] = np.where(dist <= radius, low, high)
        # the background value is the one tuned to meet a target mean
        lower, upper = low, np.inf
    else:
        (path,) = need("path")
        values = read_cell_csv(mesh, path, p.get("column", "permeability"), float(p.get("scale", 1.0)))
        if "low" in p:
            lower = float(p["low"])
        if "high" in p:
            upper = float(p["high"])

    pv = values[porous]
    if not np.all(np.isfinite(pv) & (pv > 0)):
        raise PermeabilityError("permeability must be positive and finite on every porous cell")
    if target_mean is not None:
        values = normalize_mean(mesh, values, float(target_mean), lower, upper)
    meta = {"mean": porous_mean(mesh, values), "min": float(np.min(values[porous])),
            "max": float(np.max(values[porous]))}
    if kind == "cell_csv":
        meta["path"] = str(Path(p["path"]))
    return PermeabilityField(values, kind, seed, target_mean, meta)


def write_field_csv(mesh: Mesh, fld: PermeabilityField, path) -> None:
    """One ``cell,permeability`` row per porous cell."""
    porous = mesh.cells_of(Subdomain.POROUS)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "permeability"])
        for c in porous:
            w.writerow([int(c), repr(float(fld.values[c]))])
