"""Meshless total-Lagrangian explicit dynamics with dynamic relaxation.

Basis gradients are evaluated once at the quadrature points of the
reference configuration. Every step assembles internal forces from those
cached gradients, advances a damped central-difference update and then
overwrites the prescribed degrees of freedom with their ramped values.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .material import InversionError, NeoHookean
from .maxent import BasisContext, BasisTable, CMEParams, evaluate_basis
from .mesh import SimplexMesh
from .quadrature import QuadratureSet, points_for_level

log = logging.getLogger(__name__)

AXES = {"x": 0, "y": 1, "z": 2}


class LumpingError(RuntimeError):
    pass


class InstabilityError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonConvergenceError(RuntimeError):
    def __init__(self, message, state=None, report=None):
        super().__init__(message)
        self.state = state
        self.report = report


@dataclass
class BoundaryCondition:
    """Prescribed displacement of a node group, reached at full load."""

    node_ids: np.ndarray
    axes: tuple = (0, 1, 2)
    target: tuple = (0.0, 0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        self.node_ids = np.unique(np.asarray(self.node_ids, dtype=np.int64))
        axes = tuple(AXES[a] if isinstance(a, str) else int(a) for a in self.axes)
        if not axes:
            raise ValueError("boundary condition needs at least one constrained axis")
        if any(a not in (0, 1, 2) for a in axes):
            raise ValueError(f"invalid axes {self.axes}")
        self.axes = tuple(sorted(set(axes)))
        self.target = tuple(float(v) for v in self.target)
        if len(self.target) != 3:
            raise ValueError("target must have three components")


def constrained_dofs(bcs, n_nodes: int):
    """Flat DOF indices and their full-load values; later conditions win on overlap."""
    values = {}
    for bc in bcs:
        if len(bc.node_ids) and (bc.node_ids.min() < 0 or bc.node_ids.max() >= n_nodes):
            raise ValueError(f"boundary condition {bc.name!r} references invalid nodes")
        for a in bc.axes:
            for n in bc.node_ids:
                values[3 * int(n) + a] = bc.target[a]
    dofs = np.array(sorted(values), dtype=np.int64)
    return dofs, np.array([values[d] for d in dofs], dtype=float)


def smooth_ramp(tau: float) -> float:
    tau = min(max(tau, 0.0), 1.0)
    return tau * tau * (3.0 - 2.0 * tau)


def lumped_mass(table: BasisTable, quad: QuadratureSet, density: float, n_nodes: int) -> np.ndarray:
    """Row-sum lumped masses ``m_a = sum_q w_q rho0 phi_a(x_q)``."""
    rows = np.repeat(np.arange(table.n_points), np.diff(table.indptr))
    mass = np.bincount(table.indices, weights=table.phi * quad.weights[rows] * density, minlength=n_nodes)
    if not (mass > 0).all():
        bad = int(np.argmin(mass))
        raise LumpingError(f"non-positive lumped mass {mass[bad]:.3e} at node {bad}")
    return mass


class MTLEDModel:
    """Discretised body: quadrature, cached basis, lumped masses, force operator."""

    def __init__(
        self,
        mesh: SimplexMesh,
        material: NeoHookean,
        params: CMEParams | None = None,
        points_per_cell: int = 4,
        workers: int = 1,
        backend=None,
    ):
        from . import _backend

        self.mesh = mesh
        self.material = material
        self.params = params or CMEParams()
        self.workers = workers
        kern = backend or _backend.kernels
        self.backend_name = kern.NAME
        t0 = time.perf_counter()
        self.context = BasisContext(mesh, self.params)
        self.quad = points_for_level(mesh, points_per_cell)
        self.basis = evaluate_basis(self.quad.positions, self.quad.cells, self.context, workers, backend=kern)
        self.mass = lumped_mass(self.basis, self.quad, material.density, mesh.n_nodes)
        self.force_op = kern.make_force_operator(
            self.basis.indptr, self.basis.indices, self.basis.grad_phi, self.quad.weights, mesh.n_nodes, workers
        )
        self.setup_time = time.perf_counter() - t0
        self.h_min = float(mesh.cell_size().min())
        log.info(
            "model: %d nodes, %d cells, %d quadrature points, setup %.2fs (%s)",
            mesh.n_nodes, mesh.n_cells, len(self.quad), self.setup_time, self.backend_name,
        )

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def volume(self) -> float:
        return float(self.quad.weights.sum())

    def forces(self, u):
        """Internal forces and per-point energy density; raises on inversion."""
        f, W, jmin, bad = self.force_op.forces(np.ascontiguousarray(u, dtype=float), self.material.lam, self.material.mu)
        if f is None:
            raise InversionError(
                f"inverted state at quadrature point {bad} (cell {int(self.quad.cells[bad])}, det F = {jmin:.3e})",
                point=bad, jacobian=jmin,
            )
        return f, W

    def strain_energy(self, u) -> float:
        _, W = self.forces(u)
        return float(W @ self.quad.weights)

    def mean_energy_density(self, W) -> float:
        return float(W @ self.quad.weights) / self.volume


def internal_forces(model: MTLEDModel, u) -> np.ndarray:
    """Nodal internal forces ``f_a = sum_q w_q P_q grad phi_a``."""
    return model.forces(u)[0]


def _stiffness_product(model: MTLEDModel, u, v, scale: float):
    eps = scale / max(float(np.abs(v).max()), 1e-300)
    fp, _ = model.forces(u + eps * v)
    fm, _ = model.forces(u - eps * v)
    return (fp - fm) / (2.0 * eps)


@dataclass
class TimeStepEstimate:
    dt_crit: float
    omega_max: float
    iterations: int
    converged: bool
    safety: float = 0.9
    method: str = "power"
    vector: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def dt_stable(self) -> float:
        return self.safety * self.dt_crit


def gershgorin_omega(model: MTLEDModel) -> float:
    """Upper bound on the largest mass-normalised frequency from row sums of |K|."""
    t = model.basis
    rows = np.repeat(np.arange(t.n_points), np.diff(t.indptr))
    gn = np.linalg.norm(t.grad_phi, axis=1)
    per_point = np.bincount(rows, weights=gn, minlength=t.n_points)
    c = 3.0 * (model.material.lam + 2.0 * model.material.mu)
    row = np.bincount(t.indices, weights=c * model.quad.weights[rows] * gn * per_point[rows], minlength=model.n_nodes)
    return float(np.sqrt(np.max(row / model.mass)))


def critical_timestep(model: MTLEDModel, u=None, safety: float = 0.9, max_iter: int = 200,
                      rtol: float = 1e-4, seed: int = 0, v0=None) -> TimeStepEstimate:
    """Largest stable central-difference step ``2 / omega_max``.

    ``omega_max^2`` is the top eigenvalue of ``M^-1/2 K M^-1/2`` with the
    tangent stiffness applied matrix-free by central differences of the
    internal forces about ``u`` (reference state by default).
    """
    n = model.n_nodes
    u = np.zeros((n, 3)) if u is None else np.asarray(u, dtype=float)
    sq = np.sqrt(model.mass)[:, None]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, 3)) if v0 is None else np.array(v0, dtype=float)
    v /= np.linalg.norm(v)
    scale = 1e-7 * model.h_min
    lam_prev = None
    converged = False
    it = 0
    lam_est = 0.0
    for it in range(1, max_iter + 1):
        Kv = _stiffness_product(model, u, v / sq, scale) / sq
        lam_est = float(np.vdot(v, Kv))
        nrm = np.linalg.norm(Kv)
        if not nrm > 0:
            break
        v = Kv / nrm
        if lam_prev is not None and abs(lam_est - lam_prev) <= rtol * abs(lam_est):
            converged = True
            break
        lam_prev = lam_est
    if converged and lam_est > 0:
        omega = math.sqrt(lam_est)
        return TimeStepEstimate(2.0 / omega, omega, it, True, safety, "power", v)
    omega = gershgorin_omega(model)
    log.warning("power iteration did not converge in %d iterations; using Gershgorin bound", it)
    return TimeStepEstimate(2.0 / omega, omega, it, False, safety, "gershgorin", v)


@dataclass
class SolverSettings:
    tol_u: float = 1e-7
    window: int = 100
    max_steps: int = 10000
    ramp_fraction: float = 0.6
    ramp_steps: int | None = None
    safety: float = 0.9
    dt: float | None = None
    dt_factor: float | None = None
    damping_interval: int = 100
    dt_update_interval: int = 100
    divergence_factor: float = 10.0
    growth_steps: int = 5
    trace_interval: int = 1

    def resolved_ramp_steps(self) -> int:
        if self.ramp_steps is not None:
            return max(1, int(self.ramp_steps))
        return max(1, int(self.ramp_fraction * self.max_steps))


@dataclass
class SolverState:
    u: np.ndarray
    u_prev: np.ndarray
    f_int: np.ndarray
    f_ext: np.ndarray
    mass: np.ndarray
    dt: float
    step: int = 0
    load_factor: float = 0.0
    damping: float = 0.0
    max_increment: float = 0.0
    W: np.ndarray | None = None

    @classmethod
    def initial(cls, model: MTLEDModel, dt: float) -> "SolverState":
        n = model.n_nodes
        z = np.zeros((n, 3))
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), model.mass.copy(), dt)


def step(state: SolverState, model: MTLEDModel, dt: float | None = None,
         dofs: np.ndarray | None = None, values: np.ndarray | None = None,
         load_factor: float | None = None) -> SolverState:
    """One damped central-difference step, followed by direct EBC imposition.

    Returns a new state; the input is left untouched. Forces are evaluated at
    the current displacement.
    """
    dt = state.dt if dt is None else dt
    c = state.damping
    f_int, W = model.forces(state.u)
    a = (2.0 - c * dt) / (2.0 + c * dt)
    b = 2.0 * dt * dt / (2.0 + c * dt)
    u_new = state.u + a * (state.u - state.u_prev) + b * (state.f_ext - f_int) / state.mass[:, None]
    lf = state.load_factor if load_factor is None else load_factor
    if dofs is not None and len(dofs):
        u_new.reshape(-1)[dofs] = lf * values
    inc = float(np.sqrt(((u_new - state.u) ** 2).sum(axis=1)).max())
    return SolverState(u_new, state.u, f_int, state.f_ext, state.mass, dt, state.step + 1, lf, c, inc, W)


@dataclass
class RunReport:
    converged: bool
    steps: int
    dt: float
    dt_crit: float
    dt_final: float
    dt_estimate: TimeStepEstimate
    setup_time: float
    solve_time: float
    mean_energy_density: float
    strain_energy: float
    ebc_max_error: float
    final_increment: float
    damping: float
    trace: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "n_exe": self.steps,
            "dt": self.dt,
            "dt_crit": self.dt_crit,
            "dt_final": self.dt_final,
            "dt_crit_method": self.dt_estimate.method,
            "dt_crit_converged": self.dt_estimate.converged,
            "power_iterations": self.dt_estimate.iterations,
            "safety_factor": self.dt_estimate.safety,
            "setup_time": self.setup_time,
            "t_exe": self.solve_time,
            "mean_strain_energy_density": self.mean_energy_density,
            "strain_energy": self.strain_energy,
            "ebc_max_error": self.ebc_max_error,
            "final_increment": self.final_increment,
            "damping": self.damping,
        }


def _free_mask(dofs, n_nodes):
    free = np.ones(3 * n_nodes, dtype=bool)
    free[dofs] = False
    return free.reshape(n_nodes, 3)


def _rayleigh_lowest(model, u, direction, free, scale):
    v = np.where(free, direction, 0.0)
    nv = float(np.abs(v).max())
    if not nv > 0:
        return None
    Kv = _stiffness_product(model, u, v, scale)
    num = float(np.vdot(v[free], Kv[free]))
    den = float(np.vdot(v[free], (model.mass[:, None] * v)[free]))
    if not (num > 0 and den > 0):
        return None
    return num / den


def run_to_steady_state(model: MTLEDModel, bcs, settings: SolverSettings | None = None,
                        estimate: TimeStepEstimate | None = None, raise_on_failure: bool = True):
    """Dynamic relaxation to the steady state under ramped boundary displacements.

    Returns ``(state, report)``. Raises :class:`NonConvergenceError` when the
    step budget runs out and :class:`InstabilityError` when the divergence
    detector fires.
    """
    settings = settings or SolverSettings()
    n = model.n_nodes
    dofs, values = constrained_dofs(bcs, n)
    free = _free_mask(dofs, n)
    if estimate is None:
        estimate = critical_timestep(model, safety=settings.safety)
    if settings.dt is not None:
        dt = float(settings.dt)
    elif settings.dt_factor is not None:
        dt = settings.dt_factor * estimate.dt_crit
    else:
        dt = estimate.dt_stable
    ratio = dt / estimate.dt_crit
    dt_initial = dt
    current = estimate
    ramp_steps = settings.resolved_ramp_steps()
    diameter = model.mesh.diameter
    scale = 1e-7 * model.h_min

    state = SolverState.initial(model, dt)
    # initial damping from a smooth trial mode, refreshed from the increments later
    X = model.mesh.nodes
    trial = np.repeat(((X[:, 2] - X[:, 2].min()) / max(np.ptp(X[:, 2]), 1e-300))[:, None], 3, axis=1)
    lam_min = _rayleigh_lowest(model, state.u, trial, free, scale)
    omega_cap = 2.0 / dt
    state.damping = 2.0 * math.sqrt(lam_min) if lam_min else 0.0
    state.damping = min(state.damping, omega_cap)

    # with nothing prescribed the ramp is moot and convergence may count at once
    unloaded = not np.any(values)
    trace = []
    quiet = 0
    growth = 0
    prev_inc = 0.0
    converged = False
    t0 = time.perf_counter()
    for k in range(1, settings.max_steps + 1):
        lf = smooth_ramp(k / ramp_steps)
        try:
            state = step(state, model, dt, dofs, values, lf)
        except InversionError as exc:
            if growth >= 3:
                raise InstabilityError(f"solution diverged at step {k} (inverted state: {exc})", k) from exc
            raise
        inc = state.max_increment
        umax = float(np.abs(state.u).max())
        growth = growth + 1 if (inc > 2.0 * prev_inc and inc > settings.tol_u) else 0
        prev_inc = inc
        if not np.isfinite(umax) or umax > settings.divergence_factor * diameter or growth >= settings.growth_steps:
            raise InstabilityError(f"solution diverged at step {k} (max |u| = {umax:.3e}, increment {inc:.3e})", k)
        if settings.trace_interval and k % settings.trace_interval == 0:
            trace.append((k, inc, lf, model.mean_energy_density(state.W)))
        if settings.dt is None and settings.dt_update_interval and k % settings.dt_update_interval == 0:
            current = critical_timestep(model, u=state.u, safety=settings.safety, max_iter=50,
                                        rtol=1e-3, v0=current.vector)
            if current.converged and ratio * current.dt_crit < dt:
                new_dt = ratio * current.dt_crit
                # keep the velocity (u - u_prev) / dt across the change
                state.u_prev = state.u - (state.u - state.u_prev) * (new_dt / dt)
                dt = state.dt = new_dt
                omega_cap = 2.0 / dt
                state.damping = min(state.damping, omega_cap)
                log.debug("step %d: time step reduced to %.4e s", k, dt)
        if k % settings.damping_interval == 0:
            lam_min = _rayleigh_lowest(model, state.u, state.u - state.u_prev, free, scale)
            if lam_min:
                state.damping = min(2.0 * math.sqrt(lam_min), omega_cap)
        if (lf >= 1.0 or unloaded) and inc < settings.tol_u:
            quiet += 1
            if quiet >= settings.window:
                converged = True
                break
        else:
            quiet = 0
    solve_time = time.perf_counter() - t0

    f, W = model.forces(state.u)
    state.f_int, state.W = f, W
    err = float(np.abs(state.u.reshape(-1)[dofs] - values).max()) if len(dofs) else 0.0
    report = RunReport(
        converged=converged,
        steps=state.step,
        dt=dt_initial,
        dt_crit=estimate.dt_crit,
        dt_final=dt,
        dt_estimate=estimate,
        setup_time=model.setup_time,
        solve_time=solve_time,
        mean_energy_density=model.mean_energy_density(W),
        strain_energy=float(W @ model.quad.weights),
        ebc_max_error=err,
        final_increment=state.max_increment,
        damping=state.damping,
        trace=trace,
    )
    if not converged and raise_on_failure:
        raise NonConvergenceError(
            f"no steady state within {settings.max_steps} steps (last increment {state.max_increment:.3e})",
            state, report,
        )
    return state, report
