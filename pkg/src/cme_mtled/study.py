"""Sweeps over quadrature or discretisation levels."""

from __future__ import annotations

import csv
import sys
from pathlib import Path

from . import metrics
from .config import ScenarioConfig
from .scenarios import build_mesh, run_scenario

COLUMNS = ("level", "n_nodes", "n_quadrature_points", "mean_strain_energy_density",
           "normalised_energy", "sre_w", "dt_crit", "n_exe", "t_exe")


def _row(level, res) -> dict:
    r = res.report
    return {
        "level": level,
        "n_nodes": r["n_nodes"],
        "n_quadrature_points": r["n_quadrature_points"],
        "mean_strain_energy_density": r["mean_strain_energy_density"],
        "dt_crit": r["dt_crit"],
        "n_exe": r["n_exe"],
        "t_exe": r["t_exe"],
    }


def _finish(rows, reference_index: int):
    ref = rows[reference_index]["mean_strain_energy_density"]
    first = rows[0]["mean_strain_energy_density"]
    for row in rows:
        w = row["mean_strain_energy_density"]
        row["normalised_energy"] = w / first
        row["sre_w"] = metrics.sre_w(w, ref)
    return rows


def quadrature_study(cfg: ScenarioConfig, levels, mesh=None, backend=None) -> list:
    """Same mesh, increasing quadrature points per cell; SRE_W against the finest level."""
    mesh = mesh if mesh is not None else build_mesh(cfg)
    rows = []
    for level in levels:
        res = run_scenario(cfg.copy(quadrature_points=level), write=False, mesh=mesh, backend=backend)
        rows.append(_row(level, res))
    return _finish(rows, len(rows) - 1)


def discretisation_study(cfg: ScenarioConfig, node_budgets, backend=None) -> list:
    """Increasing node budgets; SRE_W against the finest mesh."""
    rows = []
    for n in node_budgets:
        c = cfg.copy()
        c.mesh.nodes = n
        res = run_scenario(c, write=False, backend=backend)
        rows.append(_row(n, res))
    return _finish(rows, len(rows) - 1)


def write_study(rows, path=None):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if path:
            fh.close()
    return Path(path) if path else None
