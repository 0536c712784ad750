"""Legacy VTK and CSV writers."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..mesh import Mesh
from ..spaces import Space

VTK_TRIANGLE = 5


def _fmt(values) -> str:
    return "\n".join(" ".join(f"{v:.9g}" for v in row) for row in np.atleast_2d(values))


def write_vtk(mesh: Mesh, path, point_data: Mapping[str, np.ndarray] | None = None,
              cell_data: Mapping[str, np.ndarray] | None = None, title: str = "stokes-biot") -> None:
    """ASCII legacy VTK 2.0 unstructured grid.

    Point arrays have shape (n_vertices,) or (n_vertices, 2); cell arrays
    (n_cells,) or (n_cells, 2).  Vectors are written with a zero third
    component.
    """
    nv, nc = mesh.n_vertices, mesh.n_cells
    lines = ["# vtk DataFile Version 2.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {nv} double", _fmt(np.column_stack([mesh.vertices, np.zeros(nv)])),
             f"CELLS {nc} {4 * nc}", "\n".join(f"3 {a} {b} {c}" for a, b, c in mesh.cells),
             f"CELL_TYPES {nc}", "\n".join([str(VTK_TRIANGLE)] * nc)]

    def block(data, n, header):
        if not data:
            return
        lines.append(f"{header} {n}")
        for name, arr in data.items():
            a = np.asarray(arr, dtype=float)
            if a.shape[0] != n:
                raise ValueError(f"array {name!r} has {a.shape[0]} entries, expected {n}")
            key = str(name).replace(" ", "_")
            if a.ndim == 1:
                lines.extend([f"SCALARS {key} double 1", "LOOKUP_TABLE default", _fmt(a[:, None])])
            elif a.ndim == 2 and a.shape[1] == 2:
                lines.extend([f"VECTORS {key} double", _fmt(np.column_stack([a, np.zeros(n)]))])
            else:
                raise ValueError(f"array {name!r} must be scalar or 2-vector")

    block(point_data, nv, "POINT_DATA")
    block(cell_data, nc, "CELL_DATA")
    Path(path).write_text("\n".join(lines) + "\n")


def vertex_field(coeffs: np.ndarray, space: Space) -> np.ndarray:
    """Sample a field at mesh vertices (P2 fields drop their edge nodes); zero off its subdomain."""
    n = space.mesh.n_vertices
    vn = space.vertex_node
    has = vn >= 0
    c = np.asarray(coeffs, dtype=float)
    if space.components == 1:
        out = np.zeros(n)
        out[has] = c[vn[has]]
    else:
        out = np.zeros((n, 2))
        out[has] = c.reshape(-1, 2)[vn[has]]
    return out


def write_series_csv(rows: Sequence[Mapping], path, columns: Sequence[str] | None = None) -> None:
    """Write a time series with a header row; columns default to the first row's keys."""
    rows = list(rows)
    cols = list(columns) if columns is not None else (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in cols])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
