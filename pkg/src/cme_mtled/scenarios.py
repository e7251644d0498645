"""Scenario orchestration: mesh, boundary conditions, solve, write results."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import generators, io, metrics
from .config import ConditionSpec, ScenarioConfig
from .material import NeoHookean
from .maxent import CMEParams
from .mesh import SimplexMesh, load_mesh
from .mtled import (
    BoundaryCondition,
    MTLEDModel,
    NonConvergenceError,
    SolverSettings,
    critical_timestep,
    run_to_steady_state,
)

log = logging.getLogger(__name__)

SELECT_TOL = 1e-6


def build_mesh(cfg: ScenarioConfig) -> SimplexMesh:
    m = cfg.mesh
    if m.generator is None:
        return load_mesh(m.node_file, m.ele_file)
    kw = {"seed": m.seed}
    if m.jitter is not None:
        kw["jitter"] = m.jitter
    if m.generator == "cube":
        return generators.cube_mesh(m.nodes, m.side, **kw)
    if m.generator == "random-cube":
        return generators.random_cube_mesh(m.nodes, m.side, seed=m.seed)
    return generators.cylinder_mesh(m.nodes, m.height, m.diameter, **kw)


def select_nodes(mesh: SimplexMesh, spec: ConditionSpec) -> np.ndarray:
    X = mesh.nodes
    ax = "xyz".index(spec.axis)
    tol = SELECT_TOL * mesh.diameter
    hit = np.abs(X[:, ax] - spec.value) <= tol
    if spec.radius is not None:
        c = np.zeros(3)
        if spec.center is not None:
            c[: len(spec.center)] = spec.center
        others = [i for i in range(3) if i != ax]
        r = np.linalg.norm(X[:, others] - c[others], axis=1)
        hit &= r <= spec.radius + tol
    return np.flatnonzero(hit)


def boundary_conditions(mesh: SimplexMesh, specs) -> list:
    bcs = []
    for spec in specs:
        ids = select_nodes(mesh, spec)
        if len(ids) == 0:
            raise ValueError(f"condition {spec.name!r} selects no nodes")
        bcs.append(BoundaryCondition(ids, tuple(spec.constrained), tuple(spec.target), spec.name))
    return bcs


def unconstrained_reference(mesh: SimplexMesh, strain: float) -> np.ndarray:
    """Exact axial displacement ``u_z = -strain (z - z0)`` of homogeneous compression."""
    z = mesh.nodes[:, 2]
    return -strain * (z - z.min())


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    mesh: SimplexMesh
    model: MTLEDModel
    state: object
    report: dict
    paths: dict


def make_model(cfg: ScenarioConfig, mesh: SimplexMesh, backend=None) -> MTLEDModel:
    mat = cfg.material
    material = NeoHookean.from_engineering(mat.youngs_modulus, mat.poisson_ratio, mat.density)
    c = cfg.cme
    params = CMEParams(c.ring_count, c.s, c.m, c.alpha, c.k, c.tol, c.max_iter, c.boundary_rule)
    return MTLEDModel(mesh, material, params, cfg.quadrature_points, cfg.workers, backend=backend)


def solver_settings(cfg: ScenarioConfig) -> SolverSettings:
    s = cfg.solver
    return SolverSettings(
        tol_u=s.tol_u, window=s.window, max_steps=s.max_steps, ramp_fraction=s.ramp_fraction,
        safety=s.safety, dt_factor=s.dt_factor, damping_interval=s.damping_interval,
        dt_update_interval=s.dt_update_interval, divergence_factor=s.divergence_factor,
    )


def run_scenario(cfg: ScenarioConfig, output_dir=None, write: bool = True, backend=None,
                 mesh: SimplexMesh | None = None) -> ScenarioResult:
    """Build, solve and (optionally) write one scenario.

    On non-convergence the partial state is still written before the
    :class:`NonConvergenceError` propagates.
    """
    cfg.validate()
    mesh = mesh if mesh is not None else build_mesh(cfg)
    cfg = cfg.resolved(mesh)
    bcs = boundary_conditions(mesh, cfg.loading.conditions)
    model = make_model(cfg, mesh, backend)
    estimate = critical_timestep(model, safety=cfg.solver.safety)
    failure = None
    try:
        state, rep = run_to_steady_state(model, bcs, solver_settings(cfg), estimate)
    except NonConvergenceError as exc:
        failure = exc
        state, rep = exc.state, exc.report

    report = rep.as_dict()
    report.update(
        scenario=cfg.loading.scenario,
        n_nodes=mesh.n_nodes,
        n_cells=mesh.n_cells,
        n_quadrature_points=len(model.quad),
        backend=model.backend_name,
        workers=cfg.workers,
    )
    if cfg.loading.scenario == "cube-unconstrained":
        ref = unconstrained_reference(mesh, cfg.loading.strain)
        report["nrmse"] = metrics.nrmse(state.u[:, 2], ref)
        report["nrmse_without_root"] = metrics.nrmse_squared(state.u[:, 2], ref)

    paths = {}
    if write:
        out = Path(output_dir or cfg.output.directory)
        out.mkdir(parents=True, exist_ok=True)
        paths["vtk"] = io.write_vtk(out / cfg.output.vtk, mesh, state.u, io.cell_energy_density(model, state.W))
        paths["trace"] = io.write_trace(out / cfg.output.trace, rep.trace)
        paths["report"] = io.write_report(out / cfg.output.report, report, cfg.to_dict())
    if failure is not None:
        raise failure
    return ScenarioResult(cfg, mesh, model, state, report, paths)
