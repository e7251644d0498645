import copy
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cme_mtled.material import InversionError, NeoHookean
from cme_mtled.maxent import BasisTable, CMEParams
from cme_mtled.mtled import (
    BoundaryCondition,
    LumpingError,
    MTLEDModel,
    SolverSettings,
    SolverState,
    constrained_dofs,
    critical_timestep,
    gershgorin_omega,
    internal_forces,
    lumped_mass,
    run_to_steady_state,
    smooth_ramp,
    step,
)
from cme_mtled.quadrature import QuadratureSet

MAT = NeoHookean.from_engineering(3000.0, 0.49, 1000.0)


@pytest.fixture(scope="module")
def model150(cube150):
    return MTLEDModel(cube150, MAT)


@pytest.fixture(scope="module")
def model5(cube5):
    return MTLEDModel(cube5, MAT, CMEParams(ring_count=1))


def test_cube_mass_total(model150):
    # 0.1 m cube at 1000 kg/m^3
    assert model150.mass.sum() == pytest.approx(1.0, rel=1e-10)
    assert (model150.mass > 0).all()


def test_single_tet_equal_masses(single_tet):
    model = MTLEDModel(single_tet, MAT, CMEParams(ring_count=1))
    np.testing.assert_allclose(model.mass, model.mass.mean(), rtol=1e-12)
    assert model.mass.sum() == pytest.approx(MAT.density * single_tet.volume, rel=1e-12)


def test_lumping_error():
    table = BasisTable(
        np.array([0, 2]), np.array([0, 1]), np.array([1.2, -0.2]), np.zeros((2, 3)),
        np.zeros(1), np.zeros(1), np.zeros(1),
    )
    quad = QuadratureSet(np.zeros((1, 3)), np.ones(1), np.zeros(1, int), np.full((1, 4), 0.25), 1)
    with pytest.raises(LumpingError, match="node 1"):
        lumped_mass(table, quad, 1000.0, 2)


def test_zero_and_rigid_translation(model150, cube150):
    f0 = internal_forces(model150, np.zeros((cube150.n_nodes, 3)))
    assert np.abs(f0).max() == 0.0
    h = cube150.cell_size().min()
    bound = 1e-9 * MAT.mu * cube150.volume / h
    f = internal_forces(model150, np.tile([0.01, -0.02, 0.005], (cube150.n_nodes, 1)))
    assert np.abs(f).max() <= bound


def test_translation_invariance(model150, cube150):
    rng = np.random.default_rng(0)
    u = 1e-3 * rng.normal(size=(cube150.n_nodes, 3))
    f1 = internal_forces(model150, u)
    f2 = internal_forces(model150, u + [0.03, 0.01, -0.02])
    np.testing.assert_allclose(f2, f1, atol=1e-9 * np.abs(f1).max())


def test_forces_are_energy_gradient(model5, cube5):
    rng = np.random.default_rng(1)
    u = 0.02 * rng.normal(size=(cube5.n_nodes, 3))
    f = internal_forces(model5, u)
    for _ in range(5):
        v = rng.normal(size=u.shape)
        eps = 1e-6
        fd = (model5.strain_energy(u + eps * v) - model5.strain_energy(u - eps * v)) / (2 * eps)
        assert fd == pytest.approx(np.vdot(f, v), rel=1e-6)


def test_inversion_raises(model5, cube5):
    u = -2.0 * cube5.nodes
    with pytest.raises(InversionError):
        model5.forces(u)


def test_timestep_scaling(model150, cube150):
    base = critical_timestep(model150)
    assert base.converged and base.method == "power"
    heavy = copy.copy(model150)
    heavy.mass = 4.0 * model150.mass
    assert critical_timestep(heavy).dt_crit == pytest.approx(2.0 * base.dt_crit, rel=1e-6)
    stiff = copy.copy(model150)
    stiff.material = NeoHookean(4 * MAT.lam, 4 * MAT.mu, MAT.density)
    assert critical_timestep(stiff).dt_crit == pytest.approx(0.5 * base.dt_crit, rel=1e-6)
    assert base.dt_stable == pytest.approx(0.9 * base.dt_crit)


def test_gershgorin_bounds_power_estimate(model150):
    est = critical_timestep(model150)
    assert gershgorin_omega(model150) >= est.omega_max
    fallback = critical_timestep(model150, max_iter=2)
    assert not fallback.converged and fallback.method == "gershgorin"
    assert fallback.dt_crit <= est.dt_crit


class Spring:
    """One node, one active axis: f_int = k u."""

    def __init__(self, k, m):
        self.k = k
        self.mass = np.array([m])

    def forces(self, u):
        return self.k * u, np.zeros(1)


def _spring_state(spring, dt, u0, damping=0.0):
    u = np.array([[u0, 0.0, 0.0]])
    z = np.zeros((1, 3))
    return SolverState(u, u.copy(), z.copy(), z.copy(), spring.mass.copy(), dt, damping=damping)


@given(st.floats(0.05, 1.9), st.floats(0.0, 3.0))
def test_single_dof_recurrence(wdt, c):
    k, m = 4.0, 1.0
    spring = Spring(k, m)
    dt = wdt / 2.0
    s = _spring_state(spring, dt, 1.0, damping=c)
    u_prev, u = 1.0, 1.0
    for _ in range(30):
        s = step(s, spring, dt)
        # m (u+ - 2u + u-)/dt^2 + c m (u+ - u-)/(2 dt) + k u = 0
        u_next = (2 * u - (1 - 0.5 * c * dt) * u_prev - dt * dt * k * u / m) / (1 + 0.5 * c * dt)
        u_prev, u = u, u_next
        assert s.u[0, 0] == pytest.approx(u, rel=1e-12, abs=1e-14)


def test_undamped_oscillator_phase():
    k, m, dt = 9.0, 1.0, 0.1
    spring = Spring(k, m)
    # start from u_{-1} = u_1 so the discrete solution is cos(n theta)
    theta = math.acos(1 - 0.5 * k * dt * dt / m)
    s = _spring_state(spring, dt, 1.0)
    s.u_prev = np.array([[math.cos(theta), 0, 0]])
    for n in range(1, 200):
        s = step(s, spring, dt)
        assert s.u[0, 0] == pytest.approx(math.cos(n * theta), abs=1e-10)


def test_zero_state_unchanged(model150, cube150):
    s = SolverState.initial(model150, 1e-3)
    s2 = step(s, model150)
    assert np.abs(s2.u).max() == 0.0 and s2.step == 1
    assert np.abs(s.u).max() == 0.0


def test_direct_ebc_every_step(model150, cube150):
    top = np.flatnonzero(np.isclose(cube150.nodes[:, 2], 0.1))
    bot = np.flatnonzero(np.isclose(cube150.nodes[:, 2], 0.0))
    bcs = [BoundaryCondition(bot, "xyz"), BoundaryCondition(top, ("z",), (0, 0, 0.013))]
    dofs, values = constrained_dofs(bcs, cube150.n_nodes)
    est = critical_timestep(model150)
    s = SolverState.initial(model150, est.dt_stable)
    for k in range(1, 60):
        lf = smooth_ramp(k / 50)
        s = step(s, model150, None, dofs, values, lf)
        assert (s.u.reshape(-1)[dofs] == lf * values).all()


def test_zero_load_converges_in_window(model150, cube150):
    bot = np.flatnonzero(np.isclose(cube150.nodes[:, 2], 0.0))
    settings = SolverSettings(max_steps=500, window=100)
    state, rep = run_to_steady_state(model150, [BoundaryCondition(bot)], settings)
    assert rep.converged and rep.steps == 100
    assert np.abs(state.u).max() == 0.0


def test_tighter_tolerance_needs_more_steps(model150, cube150):
    top = np.flatnonzero(np.isclose(cube150.nodes[:, 2], 0.1))
    bot = np.flatnonzero(np.isclose(cube150.nodes[:, 2], 0.0))
    bcs = [BoundaryCondition(bot), BoundaryCondition(top, "xyz", (0, 0, -0.01))]
    est = critical_timestep(model150)
    runs = [run_to_steady_state(model150, bcs, SolverSettings(tol_u=t, max_steps=3000), est)[1] for t in (1e-6, 5e-7)]
    assert runs[0].converged and runs[1].converged
    assert runs[1].steps >= runs[0].steps
    assert runs[0].ebc_max_error == 0.0


def test_boundary_condition_validation():
    bc = BoundaryCondition([3, 1, 3], ("z", 0))
    assert bc.node_ids.tolist() == [1, 3] and bc.axes == (0, 2)
    with pytest.raises(ValueError):
        BoundaryCondition([0], ())
    with pytest.raises(ValueError):
        BoundaryCondition([0], (5,))
    with pytest.raises(ValueError):
        constrained_dofs([BoundaryCondition([7])], 5)
    dofs, vals = constrained_dofs([BoundaryCondition([0], "xyz", (1, 2, 3)), BoundaryCondition([0], "z", (0, 0, 9))], 2)
    assert dofs.tolist() == [0, 1, 2] and vals.tolist() == [1, 2, 9]


def test_smooth_ramp():
    assert smooth_ramp(0) == 0 and smooth_ramp(1) == 1 and smooth_ramp(2) == 1
    assert smooth_ramp(0.5) == 0.5
    t = np.linspace(0, 1, 50)
    assert (np.diff([smooth_ramp(x) for x in t]) >= 0).all()
