"""Time the compiled kernels against the NumPy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--nodes 150 500] [--repeat 3]

Reports basis evaluation over all quadrature points of a cube mesh and one
internal-force assembly, for each backend, plus the speed-up.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cme_mtled import _backend
from cme_mtled.generators import cube_mesh
from cme_mtled.material import NeoHookean
from cme_mtled.maxent import BasisContext, CMEParams, evaluate_basis
from cme_mtled.quadrature import generate_points


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(n_nodes: int, repeat: int, backends: dict):
    mesh = cube_mesh(n_nodes)
    ctx = BasisContext(mesh, CMEParams())
    quad = generate_points(mesh)
    mat = NeoHookean.from_engineering(3000.0, 0.49)
    u = 1e-3 * np.random.default_rng(0).normal(size=(mesh.n_nodes, 3))
    rows = []
    for name, kern in backends.items():
        tab = evaluate_basis(quad.positions, quad.cells, ctx, backend=kern)
        t_basis = best_of(lambda: evaluate_basis(quad.positions, quad.cells, ctx, backend=kern), repeat)
        op = kern.make_force_operator(tab.indptr, tab.indices, tab.grad_phi, quad.weights, mesh.n_nodes)
        t_force = best_of(lambda: op.forces(u, mat.lam, mat.mu), max(repeat, 20))
        rows.append((name, t_basis, t_force))
    return mesh, len(quad), rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, nargs="+", default=[150, 500])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    backends = {"fallback": _backend.fallback}
    if _backend.compiled is not None:
        backends["compiled"] = _backend.compiled
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'nodes':>6} {'points':>7} {'backend':>9} {'basis [s]':>10} {'forces [ms]':>12}")
    for n in args.nodes:
        mesh, nq, rows = bench(n, args.repeat, backends)
        for name, tb, tf in rows:
            print(f"{mesh.n_nodes:>6} {nq:>7} {name:>9} {tb:>10.3f} {1e3 * tf:>12.3f}")
        if len(rows) == 2:
            print(f"{'':>6} {'':>7} {'speed-up':>9} {rows[0][1] / rows[1][1]:>9.1f}x {rows[0][2] / rows[1][2]:>11.1f}x")


if __name__ == "__main__":
    main()
