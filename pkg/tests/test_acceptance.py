"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are repeated in the terminal summary under "acceptance criteria".
Criteria that exercise long scenario runs are marked ``slow``.
"""

import time
from fractions import Fraction
from math import factorial

import numpy as np
import pytest

from cme_mtled.config import ScenarioConfig, default_step_budget
from cme_mtled.distfield import rho_table, trim_G, trim_volume_3d
from cme_mtled.generators import cube_mesh, random_cube_mesh
from cme_mtled.material import NeoHookean
from cme_mtled.maxent import BasisContext, CMEParams, basis, evaluate_basis, support_distances
from cme_mtled.mesh import TetMesh
from cme_mtled.mtled import InstabilityError, MTLEDModel, NonConvergenceError, critical_timestep
from cme_mtled.quadrature import generate_points, points_for_level
from cme_mtled.scenarios import build_mesh, make_model, run_scenario

from conftest import interior_points

MAT = NeoHookean.from_engineering(3000.0, 0.49, 1000.0)


def scenario(name, nodes, **solver):
    cfg = ScenarioConfig()
    cfg.loading.scenario = name
    cfg.mesh.nodes = nodes
    if name == "cylinder-indentation":
        cfg.mesh.generator = "cylinder"
    for k, v in solver.items():
        setattr(cfg.solver, k, v)
    return cfg


def fd(fn, x, step):
    g = []
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = step
        g.append((fn(x + e) - fn(x - e)) / (2 * step))
    return np.stack(g, axis=-1)


def rel_err(g, ref):
    return float(np.linalg.norm(g - ref) / np.linalg.norm(ref))


def test_criterion_01_reproducing_conditions(criterion):
    with criterion(1, "reproducing conditions, 500-node random cube") as c:
        t0 = time.perf_counter()
        mesh = random_cube_mesh(500)
        ctx = BasisContext(mesh, CMEParams())
        quad = generate_points(mesh)
        tab = evaluate_basis(quad.positions, quad.cells, ctx)
        elapsed = time.perf_counter() - t0
        rows = np.repeat(np.arange(tab.n_points), np.diff(tab.indptr))
        psum = np.bincount(rows, weights=tab.phi)
        xrep = np.stack([np.bincount(rows, weights=tab.phi * mesh.nodes[tab.indices, j]) for j in range(3)], 1)
        h = ctx.cell_h[quad.cells]
        e0 = np.abs(psum - 1).max()
        e1 = (np.linalg.norm(xrep - quad.positions, axis=1) / h).max()
        c.check(e0 <= 1e-10, f"max|sum phi - 1| = {e0:.1e}")
        c.check(e1 <= 1e-8, f"max|sum phi x - x|/h = {e1:.1e}")
        c.check(tab.phi.min() >= -1e-12, f"min phi = {tab.phi.min():.1e}")
        c.check(elapsed < 30, f"{mesh.n_nodes} nodes, {len(quad)} points in {elapsed:.1f} s")
    c.verdict()


def test_criterion_02_weak_kronecker(criterion, cube150, ctx150):
    with criterion(2, "weak Kronecker-delta on boundary facets") as c:
        rng = np.random.default_rng(20)
        mesh = cube150
        owners = mesh.face_cells[mesh.boundary_face_ids].indices
        worst = 0.0
        for i in rng.integers(0, len(mesh.boundary_faces), 200):
            f = mesh.boundary_faces[i]
            x = rng.dirichlet(np.ones(3)) @ mesh.nodes[f]
            ev = basis(x, int(owners[i]), ctx150)
            off = ~np.isin(ev.neighbor_ids, f)
            worst = max(worst, float(ev.phi[off].max(initial=0.0)))
        c.check(worst <= 1e-8, f"max non-facet phi over 200 points = {worst:.1e}")
    c.verdict()


def test_criterion_03_gradient_chain(criterion, cube150, ctx150):
    with criterion(3, "analytic gradients vs central differences") as c:
        rng = np.random.default_rng(30)
        pts, cells = interior_points(cube150, 100, rng, margin=0.2)
        worst = {"phi": 0.0, "rho": 0.0, "t": 0.0, "G": 0.0, "d": 0.0}
        for x, cell in zip(pts, cells):
            cell = int(cell)
            h = float(ctx150.cell_h[cell])
            step = 1e-6 * h
            ev = basis(x, cell, ctx150)
            ref = fd(lambda y: basis(y, cell, ctx150).phi, x, step)
            worst["phi"] = max(worst["phi"], rel_err(ev.grad_phi, ref))

            nbrs = ev.neighbor_ids
            d, gd, _ = support_distances(x, nbrs, ctx150, h)
            ref = fd(lambda y: support_distances(y, nbrs, ctx150, h)[0], x, step)
            worst["d"] = max(worst["d"], rel_err(gd, ref))

            a = int(rng.choice(nbrs))
            facets = ctx150.facet_idx[ctx150.facet_ptr[a]:ctx150.facet_ptr[a + 1]]
            table = ctx150.table[facets]
            for key, fn in (
                ("rho", lambda y: rho_table(y, table)[:2]),
                ("t", lambda y: trim_volume_3d(y, table)),
                ("G", lambda y: trim_G(y, table)),
            ):
                g = fn(x)[1]
                ref = fd(lambda y: fn(y)[0], x, step)
                worst[key] = max(worst[key], rel_err(g, ref))
        for key, v in worst.items():
            c.check(v <= 1e-5, f"grad {key} {v:.1e}")
    c.verdict()


@pytest.mark.slow
def test_criterion_04_unconstrained_compression(criterion, tmp_path):
    with criterion(4, "unconstrained 20% compression NRMSE") as c:
        for nodes, bound, budget in ((150, 4e-3, 60.0), (4500, 1e-3, 600.0)):
            t0 = time.perf_counter()
            res = run_scenario(scenario("cube-unconstrained", nodes), write=False)
            elapsed = time.perf_counter() - t0
            r = res.report
            c.check(r["nrmse"] <= bound, f"{r['n_nodes']} nodes NRMSE {r['nrmse']:.2e} (<= {bound:.0e})")
            c.check(elapsed < budget, f"{elapsed:.0f} s (< {budget:.0f} s)")
            c.check(r["ebc_max_error"] == 0.0, f"EBC error {r['ebc_max_error']:.1e}")
    c.verdict()


@pytest.mark.slow
def test_criterion_05_extension_compression(criterion):
    with criterion(5, "50% extension/compression at two levels") as c:
        levels = (150, 1000)
        dts = []
        for name in ("cube-extension", "cube-compression"):
            W = []
            for nodes in levels:
                r = run_scenario(scenario(name, nodes), write=False).report
                c.check(r["converged"], f"{name} {r['n_nodes']} nodes converged in {r['n_exe']} steps")
                W.append(r["mean_strain_energy_density"])
                dts.append(r["dt_crit"])
            sre = (W[0] - W[1]) / W[1]
            c.check(abs(sre) <= 0.05, f"{name} SRE_W {sre:+.3f} (|.| <= 0.05)")
            # coarse level over-estimates the energy
            c.check(sre > 0, f"{name} SRE_W sign {'+' if sre > 0 else '-'} (expected +)")
        c.check(dts[1] < dts[0] and dts[3] < dts[2],
                f"dt_crit {dts[0] * 1e3:.3f} -> {dts[1] * 1e3:.3f} ms with refinement")
        mesh = cube_mesh(150)
        dt_s = [critical_timestep(MTLEDModel(mesh, MAT, CMEParams(s=s))).dt_crit for s in (2, 4)]
        c.check(dt_s[1] < dt_s[0], f"dt_crit s=2 {dt_s[0] * 1e3:.3f} ms, s=4 {dt_s[1] * 1e3:.3f} ms")
    c.verdict()


def test_criterion_06_critical_timestep(criterion, cube150):
    with criterion(6, "dt_crit of the 150-node cube") as c:
        est = critical_timestep(MTLEDModel(cube150, MAT))
        c.check(est.converged, f"power iteration converged in {est.iterations} iterations")
        c.check(1e-3 <= est.dt_crit <= 4.4e-3, f"dt_crit {est.dt_crit * 1e3:.3f} ms in [1, 4.4] ms")
    c.verdict()


CYLINDER_DEADLINE = 30 * 60.0


@pytest.mark.slow
def test_criterion_07_quadrature_monotonicity(criterion):
    with criterion(7, "cylinder 60% indentation, quadrature sweep") as c:
        cfg = scenario("cylinder-indentation", 2000)
        mesh = build_mesh(cfg)
        t0 = time.perf_counter()
        W = {}
        for q in (1, 4, 8, 16, 32):
            if time.perf_counter() - t0 > CYLINDER_DEADLINE:
                c.check(False, f"time limit reached before {q} points/cell")
                break
            try:
                r = run_scenario(cfg.copy(quadrature_points=q), write=False, mesh=mesh).report
            except NonConvergenceError as exc:
                c.check(False, f"{q} points/cell: {exc}")
                continue
            W[q] = r["mean_strain_energy_density"]
        elapsed = time.perf_counter() - t0
        levels = sorted(W)
        series = ", ".join(f"W({q})={W[q]:.1f}" for q in levels)
        mono = all(W[a] > W[b] for a, b in zip(levels, levels[1:]))
        c.check(mono and len(levels) == 5, f"{mesh.n_nodes} nodes strictly decreasing: {series}")
        if 4 in W and 32 in W:
            gap = abs(W[4] - W[32]) / W[32]
            c.check(gap <= 0.08, f"|W4 - W32|/W32 = {gap:.3f} (<= 0.08)")
        c.check(elapsed < CYLINDER_DEADLINE, f"{elapsed / 60:.1f} min (< 30 min)")
    c.verdict()


def test_criterion_08_quadrature_exactness(criterion):
    with criterion(8, "degree-2 exactness on the reference tetrahedron") as c:
        ref = TetMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float), [[0, 1, 2, 3]])
        worst = 0.0
        for ppc in (1, 4, 8, 16, 32):
            q = points_for_level(ref, ppc)
            for a in range(3):
                for b in range(3 - a):
                    for d in range(3 - a - b):
                        if ppc == 1 and a + b + d > 1:
                            continue
                        exact = Fraction(factorial(a) * factorial(b) * factorial(d), factorial(a + b + d + 3))
                        val = q.weights @ (q.positions[:, 0] ** a * q.positions[:, 1] ** b * q.positions[:, 2] ** d)
                        worst = max(worst, abs(val - float(exact)))
        c.check(worst <= 1e-14, f"max error {worst:.1e} (centroid rule: degree 1)")
    c.verdict()


def test_criterion_09_material(criterion):
    with criterion(9, "neo-Hookean checks") as c:
        c.check(MAT.strain_energy(np.eye(3)) == 0.0, "W(I) = 0")
        rng = np.random.default_rng(90)
        worst_fd, worst_rot = 0.0, 0.0
        for _ in range(50):
            F = np.eye(3) + 0.3 * rng.normal(size=(3, 3))
            while np.linalg.det(F) < 0.2:
                F = np.eye(3) + 0.3 * rng.normal(size=(3, 3))
            P = F @ MAT.pk2_stress(F)
            ref = fd(lambda G: MAT.strain_energy(G.reshape(3, 3)), F.ravel(), 1e-6).reshape(3, 3)
            worst_fd = max(worst_fd, rel_err(P, ref))
            Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            Q *= np.sign(np.linalg.det(Q))
            W = MAT.strain_energy(F)
            worst_rot = max(worst_rot, abs(MAT.strain_energy(Q @ F) - W) / max(W, 1.0))
        c.check(worst_fd <= 1e-5, f"PK2 vs energy differences {worst_fd:.1e}")
        c.check(worst_rot <= 1e-10, f"frame indifference {worst_rot:.1e}")
    c.verdict()


@pytest.mark.slow
def test_criterion_10_stability_boundary(criterion):
    with criterion(10, "stability boundary of the explicit step") as c:
        mesh = cube_mesh(150)
        budget = 2 * default_step_budget(mesh.n_nodes)
        r = run_scenario(scenario("cube-unconstrained", 150, dt_factor=0.5, max_steps=budget),
                         write=False, mesh=mesh).report
        c.check(r["converged"], f"0.5 dt_crit converged in {r['n_exe']} steps")
        try:
            run_scenario(scenario("cube-unconstrained", 150, dt_factor=2.5, max_steps=2000), write=False, mesh=mesh)
            c.check(False, "2.5 dt_crit: detector did not fire")
        except InstabilityError as exc:
            c.check(exc.step is not None and exc.step <= 2000, f"2.5 dt_crit: detector fired at step {exc.step}")
    c.verdict()


@pytest.mark.slow
def test_criterion_11_determinism(criterion, tmp_path):
    with criterion(11, "bit-identical VTK across runs") as c:
        files = []
        for run in ("a", "b"):
            res = run_scenario(scenario("cube-unconstrained", 150), output_dir=tmp_path / run)
            files.append(res.paths["vtk"].read_bytes())
        c.check(files[0] == files[1], f"{len(files[0])} bytes, identical = {files[0] == files[1]}")
    c.verdict()
