import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cme_mtled import io, metrics
from cme_mtled.config import (
    ConfigError,
    ScenarioConfig,
    default_step_budget,
    dump_config,
    load_config,
)
from cme_mtled.generators import cube_mesh


def test_defaults_validate():
    cfg = ScenarioConfig().validate()
    assert cfg.mesh.nodes == 150 and cfg.cme.ring_count == 2 and cfg.cme.s == 2
    assert cfg.cme.m == 3 and cfg.cme.alpha == 2.0 and cfg.cme.k == 2


def test_yaml_round_trip(tmp_path):
    cfg = ScenarioConfig()
    cfg.loading.scenario = "cube-extension"
    cfg.loading.strain = 0.5
    cfg.solver.max_steps = 1234
    res = cfg.resolved(cube_mesh(150))
    path = tmp_path / "c.yaml"
    dump_config(res, path)
    back = load_config(path)
    assert back == res
    assert back.loading.conditions[1].target == [0.0, 0.0, 0.05]


@given(
    st.integers(8, 5000), st.floats(0.01, 0.9), st.sampled_from([1, 4, 8, 16, 32]),
    st.sampled_from(["vertex", "all"]), st.floats(1e-9, 1e-5),
)
def test_dict_round_trip(nodes, strain, q, rule, tol):
    cfg = ScenarioConfig()
    cfg.mesh.nodes = nodes
    cfg.loading.strain = strain
    cfg.quadrature_points = q
    cfg.cme.boundary_rule = rule
    cfg.solver.tol_u = tol
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    assert ScenarioConfig.from_dict(cfg.resolved().to_dict()) == cfg.resolved()


@pytest.mark.parametrize(
    "data, match",
    [
        ({"bogus": 1}, "unknown key"),
        ({"mesh": {"nodez": 3}}, "unknown key"),
        ({"quadrature_points": 5}, "quadrature_points"),
        ({"material": {"poisson_ratio": 0.5}}, "poisson_ratio"),
        ({"cme": {"k": 3}}, "cme.k"),
        ({"loading": {"scenario": "custom"}}, "at least one condition"),
        ({"loading": {"scenario": "cube-extension"}, "mesh": {"generator": "cylinder"}}, "box-shaped"),
        ({"mesh": "x"}, "mapping"),
    ],
)
def test_invalid_configs(data, match):
    with pytest.raises(ConfigError, match=match):
        ScenarioConfig.from_dict(data).validate()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("mesh: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(bad)
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(empty) == ScenarioConfig()


def test_scenario_expansion():
    mesh = cube_mesh(150)
    c = ScenarioConfig().resolved(mesh)
    names = [s.name for s in c.loading.conditions]
    assert names == ["y0", "x0", "bottom", "top"]
    assert c.loading.conditions[-1].target[2] == pytest.approx(-0.02)
    assert c.solver.max_steps == default_step_budget(mesh.n_nodes)


def test_step_budget_grows():
    assert default_step_budget(150) < default_step_budget(4500)
    assert default_step_budget(150) % 100 == 0


def test_metrics_trivial_cases():
    u = np.linspace(0, -0.02, 11)
    assert metrics.nrmse(u, u) == 0.0
    assert metrics.nrmse(u + 0.001, u) == pytest.approx(0.001 / 0.02)
    assert metrics.nrmse_squared(u + 0.001, u) == pytest.approx(0.001**2 / 0.02)
    assert metrics.sre_w(5.0, 5.0) == 0.0
    assert metrics.sre_w(1.1, 1.0) == pytest.approx(0.1)
    with pytest.raises(metrics.MetricError):
        metrics.nrmse(np.ones(3), np.ones(3))
    with pytest.raises(metrics.MetricError):
        metrics.nrmse(np.ones(3), np.arange(4.0))
    with pytest.raises(metrics.MetricError):
        metrics.sre_w(1.0, 0.0)


def test_vtk_round_trip(tmp_path):
    mesh = cube_mesh(60)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(mesh.n_nodes, 3)) * 1e-3
    w = rng.random(mesh.n_cells)
    p = io.write_vtk(tmp_path / "a.vtk", mesh, u, w)
    np.testing.assert_array_equal(io.read_vtk_displacement(p), u)
    text = p.read_text()
    assert "SCALARS strain_energy_density double 1" in text
    assert f"CELLS {mesh.n_cells} {5 * mesh.n_cells}" in text
    q = io.write_vtk(tmp_path / "b.vtk", mesh, u.copy(), w.copy())
    assert p.read_bytes() == q.read_bytes()


def test_trace_and_report(tmp_path):
    trace = [(1, 1e-3, 0.1, 2.0), (2, 5e-4, 0.2, 3.0)]
    t = io.read_trace(io.write_trace(tmp_path / "t.csv", trace))
    np.testing.assert_array_equal(t, np.array(trace))
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == ",".join(io.TRACE_HEADER)
    cfg = ScenarioConfig()
    r = io.read_report(io.write_report(tmp_path / "r.json", {"nrmse": 1e-3}, cfg.to_dict()))
    assert r["schema_version"] == 1 and r["nrmse"] == 1e-3
    assert ScenarioConfig.from_dict(r["config"]) == cfg
    json.dumps(r)
