"""Command-line entry point ``cme-mtled``.

Exit codes: 0 success, 2 configuration error, 3 mesh error, 4 solver
non-convergence (including basis dual solves), 5 instability or inversion.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import QUADRATURE_LEVELS, SCENARIOS, ConfigError, ScenarioConfig, load_config
from .distfield import RHO_EPS_RATIO, equivalence_from_rho, facet_table, rho_table
from .material import InversionError
from .maxent import BasisContext, BasisError, CMEParams, evaluate_basis
from .maxent import NonConvergenceError as BasisNonConvergence
from .mesh import MeshError, load_mesh
from .mtled import InstabilityError, NonConvergenceError

WORKERS_ENV = "CME_MTLED_WORKERS"
EXIT_CONFIG, EXIT_MESH, EXIT_NONCONVERGENCE, EXIT_INSTABILITY = 2, 3, 4, 5

log = logging.getLogger("cme_mtled")


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return value


def _add_mesh_args(p, nodes_default=150):
    g = p.add_argument_group("mesh")
    g.add_argument("--mesh-node", type=Path, help="TetGen .node file")
    g.add_argument("--mesh-ele", type=Path, help="TetGen .ele file")
    g.add_argument("--generator", choices=("cube", "random-cube", "cylinder"), default="cube")
    g.add_argument("--nodes", type=int, default=nodes_default, help="approximate node budget for generators")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jitter", type=float)


def _add_cme_args(p):
    g = p.add_argument_group("approximant")
    g.add_argument("--ring-count", type=int, default=2)
    g.add_argument("-s", type=int, default=2, dest="s", help="prior exponent")
    g.add_argument("-m", type=int, default=3, dest="m", help="R-equivalence order")
    g.add_argument("--alpha", type=float, default=2.0)
    g.add_argument("-k", type=int, default=2, dest="k")
    g.add_argument("--boundary-rule", choices=("vertex", "all"), default="vertex",
                   help="which domain-boundary facets are dropped from a support boundary")


def _mesh_from_args(args):
    from .config import MeshConfig
    from .scenarios import build_mesh

    if args.mesh_node or args.mesh_ele:
        if not (args.mesh_node and args.mesh_ele):
            raise ConfigError("--mesh-node and --mesh-ele must be given together")
        return load_mesh(args.mesh_node, args.mesh_ele)
    cfg = ScenarioConfig(mesh=MeshConfig(generator=args.generator, nodes=args.nodes, seed=args.seed, jitter=args.jitter))
    cfg.mesh.validate()
    return build_mesh(cfg)


def _params_from_args(args) -> CMEParams:
    try:
        return CMEParams(args.ring_count, args.s, args.m, args.alpha, args.k, boundary_rule=args.boundary_rule)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _read_points(path: Path, dim: int) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    except FileNotFoundError:
        raise ConfigError(f"points file not found: {path}") from None
    except ValueError:
        data = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1)
    if data.shape[1] < dim:
        raise ConfigError(f"{path}: expected {dim} columns, got {data.shape[1]}")
    return data[:, :dim]


def _out_stream(path):
    return open(path, "w", newline="") if path else contextlib.nullcontext(sys.stdout)


# -- subcommands -----------------------------------------------------------------


def _config_from_run_args(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    m = cfg.mesh
    if args.scenario:
        cfg.loading.scenario = args.scenario
        if args.scenario == "cylinder-indentation" and not args.config:
            m.generator, m.nodes = "cylinder", 2000
    if args.mesh_node or args.mesh_ele:
        m.generator, m.node_file, m.ele_file = None, str(args.mesh_node or ""), str(args.mesh_ele or "")
    if args.nodes is not None:
        m.nodes = args.nodes
    if args.seed is not None:
        m.seed = args.seed
    if args.stretch is not None:
        cfg.loading.strain = args.stretch
    if args.quadrature is not None:
        cfg.quadrature_points = args.quadrature
    if args.max_steps is not None:
        cfg.solver.max_steps = args.max_steps
    if args.dt_factor is not None:
        cfg.solver.dt_factor = args.dt_factor
    if args.output is not None:
        cfg.output.directory = str(args.output)
    cfg.workers = args.workers if args.workers is not None else (cfg.workers if args.config else _default_workers())
    return cfg.validate()


def cmd_run(args) -> int:
    from .scenarios import run_scenario

    cfg = _config_from_run_args(args)
    res = run_scenario(cfg)
    r = res.report
    print(f"scenario      {r['scenario']}")
    print(f"nodes/cells   {r['n_nodes']} / {r['n_cells']} ({r['n_quadrature_points']} quadrature points)")
    print(f"dt_crit       {r['dt_crit']:.4e} s ({r['dt_crit_method']}), dt {r['dt']:.4e} s")
    print(f"N_exe         {r['n_exe']}   t_exe {r['t_exe']:.2f} s   setup {r['setup_time']:.2f} s")
    print(f"mean W        {r['mean_strain_energy_density']:.6e} Pa")
    print(f"EBC error     {r['ebc_max_error']:.3e} m")
    if "nrmse" in r:
        print(f"NRMSE         {r['nrmse']:.4e}")
    print(f"report        {res.paths['report']}")
    return 0


def cmd_basis_eval(args) -> int:
    mesh = _mesh_from_args(args)
    ctx = BasisContext(mesh, _params_from_args(args))
    pts = _read_points(args.points, mesh.dim)
    cells = []
    for i, x in enumerate(pts):
        c = mesh.locate_point(x)
        if c is None:
            raise ConfigError(f"point {i} {x.tolist()} lies outside the mesh")
        cells.append(c)
    table = evaluate_basis(pts, np.array(cells), ctx, workers=args.workers or _default_workers())
    axes = "xyz"[: mesh.dim]
    with _out_stream(args.output) as fh:
        w = csv.writer(fh)
        w.writerow(["point", "node", "phi"] + [f"dphi_d{a}" for a in axes])
        for q in range(table.n_points):
            nodes, phi, grad = table.row(q)
            for n, p, g in zip(nodes, phi, grad):
                w.writerow([q, int(n), repr(float(p))] + [repr(float(v)) for v in g])
    return 0


def cmd_distfield_sample(args) -> int:
    mesh = _mesh_from_args(args)
    if args.support is not None:
        if not 0 <= args.support < mesh.n_nodes:
            raise ConfigError(f"--support node {args.support} out of range")
        facets = mesh.faces[mesh.ring_support(args.support, args.ring_count, args.boundary_rule).facet_ids]
    else:
        facets = mesh.boundary_faces
    table = facet_table(mesh.nodes, facets)
    eps = RHO_EPS_RATIO * mesh.diameter
    pts = _read_points(args.points, mesh.dim)
    axes = "xyz"[: mesh.dim]
    with _out_stream(args.output) as fh:
        w = csv.writer(fh)
        w.writerow(list(axes) + ["d"] + [f"dd_d{a}" for a in axes])
        for x in pts:
            rho, grad, _ = rho_table(x, table, args.alpha, args.k)
            d, g, _ = equivalence_from_rho(rho, grad, args.m, eps)
            w.writerow([repr(float(v)) for v in x] + [repr(float(d))] + [repr(float(v)) for v in g])
    return 0


def mesh_summary(mesh, ring_count: int = 2) -> dict:
    h = mesh.cell_size()
    sup = mesh.build_supports(ring_count)
    return {
        "dimension": mesh.dim,
        "nodes": mesh.n_nodes,
        "cells": mesh.n_cells,
        "boundary_faces": int(len(mesh.boundary_face_ids)),
        "boundary_nodes": int(mesh.is_boundary_node.sum()),
        "volume": mesh.volume,
        "diameter": mesh.diameter,
        "h_min": float(h.min()),
        "h_mean": float(h.mean()),
        "h_max": float(h.max()),
        "ring_count": ring_count,
        "mean_neighbors_per_cell": float(np.diff(sup.cell_nodes.indptr).mean()),
        "mean_facets_per_node": float(np.diff(sup.node_facets.indptr).mean()),
    }


def cmd_mesh_info(args) -> int:
    info = mesh_summary(_mesh_from_args(args), args.ring_count)
    if args.json:
        print(json.dumps(info, indent=2))
    else:
        for k, v in info.items():
            print(f"{k:26s} {v}")
    return 0


def cmd_convergence_study(args) -> int:
    from .study import discretisation_study, quadrature_study, write_study

    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.scenario:
        cfg.loading.scenario = args.scenario
        if args.scenario == "cylinder-indentation" and not args.config:
            cfg.mesh.generator, cfg.mesh.nodes = "cylinder", 2000
    if args.stretch is not None:
        cfg.loading.strain = args.stretch
    cfg.workers = args.workers if args.workers is not None else _default_workers()
    cfg.validate()
    if args.kind == "quadrature":
        levels = args.levels or list(QUADRATURE_LEVELS)
        rows = quadrature_study(cfg, levels)
    else:
        levels = args.levels or [150, 1000]
        rows = discretisation_study(cfg, levels)
    write_study(rows, args.output)
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cme-mtled", description="Cell-based maximum entropy meshless explicit dynamics")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="solve a scenario to steady state")
    r.add_argument("--config", type=Path, help="YAML scenario file")
    r.add_argument("--scenario", choices=SCENARIOS)
    r.add_argument("--mesh-node", type=Path)
    r.add_argument("--mesh-ele", type=Path)
    r.add_argument("--nodes", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--stretch", type=float, help="prescribed strain as a fraction of the cube side")
    r.add_argument("--quadrature", type=int, choices=QUADRATURE_LEVELS, help="points per cell")
    r.add_argument("--max-steps", type=int)
    r.add_argument("--dt-factor", type=float, help="time step as a multiple of the critical estimate")
    r.add_argument("--output", type=Path, help="output directory")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("basis-eval", help="evaluate basis functions at points from a CSV file")
    _add_mesh_args(b)
    _add_cme_args(b)
    b.add_argument("--points", type=Path, required=True, help="CSV with x,y[,z] columns")
    b.add_argument("--output", type=Path, help="CSV output (stdout if omitted)")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_basis_eval)

    d = sub.add_parser("distfield-sample", help="sample the approximate distance field at points")
    _add_mesh_args(d)
    _add_cme_args(d)
    d.add_argument("--points", type=Path, required=True)
    d.add_argument("--support", type=int, help="use the support boundary of this node instead of the domain boundary")
    d.add_argument("--output", type=Path)
    d.set_defaults(func=cmd_distfield_sample)

    m = sub.add_parser("mesh-info", help="print mesh statistics")
    _add_mesh_args(m)
    m.add_argument("--ring-count", type=int, default=2)
    m.add_argument("--json", action="store_true")
    m.set_defaults(func=cmd_mesh_info)

    c = sub.add_parser("convergence-study", help="sweep discretisation or quadrature levels, emit CSV")
    c.add_argument("--kind", choices=("quadrature", "discretization"), default="quadrature")
    c.add_argument("--levels", type=int, nargs="+", help="points per cell or node budgets")
    c.add_argument("--config", type=Path)
    c.add_argument("--scenario", choices=SCENARIOS)
    c.add_argument("--stretch", type=float)
    c.add_argument("--output", type=Path)
    c.add_argument("--workers", type=int)
    c.set_defaults(func=cmd_convergence_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"mesh error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MESH
    except MeshError as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_MESH
    except (NonConvergenceError, BasisNonConvergence) as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (InstabilityError, InversionError) as exc:
        print(f"instability: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY
    except BasisError as exc:
        print(f"basis error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
