"""Result files: legacy ASCII VTK, convergence CSV and JSON run reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION

VTK_TETRA = 10
VTK_TRIANGLE = 5


def _fmt(v) -> str:
    return repr(float(v))


def write_vtk(path, mesh, displacement, cell_energy=None, title: str = "cme-mtled solution") -> Path:
    """Unstructured grid with point ``displacement`` and cell ``strain_energy_density``.

    Floats are written with ``repr`` so equal arrays give byte-identical files.
    """
    path = Path(path)
    nodes = mesh.nodes if mesh.dim == 3 else np.column_stack([mesh.nodes, np.zeros(mesh.n_nodes)])
    u = np.asarray(displacement, dtype=float)
    if u.shape[1] == 2:
        u = np.column_stack([u, np.zeros(len(u))])
    nv = mesh.cells.shape[1]
    ctype = VTK_TETRA if nv == 4 else VTK_TRIANGLE
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [" ".join(map(_fmt, x)) for x in nodes]
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (nv + 1)}")
    lines += [f"{nv} " + " ".join(map(str, c)) for c in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(ctype)] * mesh.n_cells
    if cell_energy is not None:
        lines.append(f"CELL_DATA {mesh.n_cells}")
        lines.append("SCALARS strain_energy_density double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [_fmt(w) for w in cell_energy]
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    lines.append("VECTORS displacement double")
    lines += [" ".join(map(_fmt, x)) for x in u]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk_displacement(path) -> np.ndarray:
    """Displacement vectors from a file written by :func:`write_vtk`."""
    lines = Path(path).read_text().splitlines()
    n = None
    for i, line in enumerate(lines):
        if line.startswith("POINT_DATA"):
            n = int(line.split()[1])
        elif line.startswith("VECTORS displacement") and n is not None:
            return np.array([[float(v) for v in row.split()] for row in lines[i + 1:i + 1 + n]])
    raise ValueError(f"no displacement field in {path}")


def cell_energy_density(model, W) -> np.ndarray:
    """Quadrature-weighted mean of the energy density over each cell."""
    cells = model.quad.cells
    n = model.mesh.n_cells
    w = model.quad.weights
    return np.bincount(cells, weights=W * w, minlength=n) / np.bincount(cells, weights=w, minlength=n)


TRACE_HEADER = ("step", "max_increment", "load_factor", "mean_energy_density")


def write_trace(path, trace) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for step, inc, lf, w in trace:
            writer.writerow([int(step), repr(float(inc)), repr(float(lf)), repr(float(w))])
    return path


def read_trace(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_report(path, report: dict, config: dict) -> Path:
    path = Path(path)
    payload = {"schema_version": SCHEMA_VERSION, **report, "config": config}
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")
    return path


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())
