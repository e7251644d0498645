"""Scenario configuration: nested dataclasses with a YAML representation.

Every key has a default, so an empty file describes the ~150-node cube
under unconstrained compression. ``resolved`` expands the named scenario
into explicit boundary-condition specs and fills data-dependent defaults,
and the result is what run reports embed.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

SCHEMA_VERSION = 1
SCENARIOS = ("cube-unconstrained", "cube-extension", "cube-compression", "cylinder-indentation", "custom")
GENERATORS = ("cube", "random-cube", "cylinder")
QUADRATURE_LEVELS = (1, 4, 8, 16, 32)
DEFAULT_STRAIN = {"cube-unconstrained": 0.2, "cube-extension": 0.5, "cube-compression": 0.5}
STEPS_PER_NODE_ROOT = 600


class ConfigError(ValueError):
    pass


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


@dataclass
class MeshConfig:
    generator: str | None = "cube"
    nodes: int = 150
    side: float = 0.1
    height: float = 0.017
    diameter: float = 0.030
    jitter: float | None = None
    seed: int = 0
    node_file: str | None = None
    ele_file: str | None = None

    def validate(self):
        if self.generator is None:
            _check(bool(self.node_file and self.ele_file), "mesh: node_file and ele_file are required without a generator")
            return
        _check(self.generator in GENERATORS, f"mesh.generator must be one of {GENERATORS} or null")
        _check(self.nodes >= 8, "mesh.nodes must be >= 8")
        _check(self.side > 0 and self.height > 0 and self.diameter > 0, "mesh dimensions must be positive")
        _check(self.jitter is None or 0 <= self.jitter < 0.5, "mesh.jitter must lie in [0, 0.5)")


@dataclass
class MaterialConfig:
    youngs_modulus: float = 3000.0
    poisson_ratio: float = 0.49
    density: float = 1000.0

    def validate(self):
        _check(self.youngs_modulus > 0, "material.youngs_modulus must be positive")
        _check(-1.0 < self.poisson_ratio < 0.5, "material.poisson_ratio must lie in (-1, 0.5)")
        _check(self.density > 0, "material.density must be positive")


@dataclass
class CMEConfig:
    ring_count: int = 2
    s: int = 2
    m: int = 3
    alpha: float = 2.0
    k: int = 2
    tol: float = 1e-10
    max_iter: int = 100
    boundary_rule: str = "vertex"

    def validate(self):
        _check(self.ring_count >= 1, "cme.ring_count must be >= 1")
        _check(self.s >= 2, "cme.s must be >= 2")
        _check(self.m >= 1, "cme.m must be >= 1")
        _check(self.alpha >= 0, "cme.alpha must be >= 0")
        _check(self.k >= 2 and self.k % 2 == 0, "cme.k must be an even integer >= 2")
        _check(self.tol > 0, "cme.tol must be positive")
        _check(self.max_iter >= 1, "cme.max_iter must be >= 1")
        _check(self.boundary_rule in ("vertex", "all"), "cme.boundary_rule must be 'vertex' or 'all'")


@dataclass
class ConditionSpec:
    """Nodes on the plane ``axis = value`` (optionally within ``radius`` of ``center``)."""

    name: str
    axis: str
    value: float
    constrained: list = field(default_factory=lambda: ["x", "y", "z"])
    target: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    radius: float | None = None
    center: list | None = None

    def validate(self):
        _check(self.axis in ("x", "y", "z"), f"condition {self.name!r}: axis must be x, y or z")
        _check(bool(self.constrained) and set(self.constrained) <= {"x", "y", "z"},
               f"condition {self.name!r}: constrained axes must be a non-empty subset of x, y, z")
        _check(len(self.target) == 3, f"condition {self.name!r}: target needs three components")
        _check(self.radius is None or self.radius > 0, f"condition {self.name!r}: radius must be positive")


@dataclass
class LoadingConfig:
    scenario: str = "cube-unconstrained"
    strain: float | None = None
    indentation_depth: float = 0.010
    indenter_radius_fraction: float = 0.5
    conditions: list = field(default_factory=list)

    def validate(self):
        _check(self.scenario in SCENARIOS, f"loading.scenario must be one of {SCENARIOS}")
        _check(self.strain is None or 0 < self.strain < 1, "loading.strain must lie in (0, 1)")
        _check(self.indentation_depth > 0, "loading.indentation_depth must be positive")
        _check(0 < self.indenter_radius_fraction <= 1, "loading.indenter_radius_fraction must lie in (0, 1]")
        if self.scenario == "custom":
            _check(bool(self.conditions), "custom scenario needs at least one condition")
        for c in self.conditions:
            c.validate()


@dataclass
class SolverConfig:
    tol_u: float = 1e-7
    window: int = 100
    max_steps: int | None = None
    ramp_fraction: float = 0.6
    safety: float = 0.9
    dt_factor: float | None = None
    damping_interval: int = 100
    dt_update_interval: int = 100
    divergence_factor: float = 10.0

    def validate(self):
        _check(self.tol_u > 0, "solver.tol_u must be positive")
        _check(self.window >= 1, "solver.window must be >= 1")
        _check(self.max_steps is None or self.max_steps >= 1, "solver.max_steps must be >= 1")
        _check(0 < self.ramp_fraction <= 1, "solver.ramp_fraction must lie in (0, 1]")
        _check(0 < self.safety <= 1, "solver.safety must lie in (0, 1]")
        _check(self.dt_factor is None or self.dt_factor > 0, "solver.dt_factor must be positive")
        _check(self.damping_interval >= 1, "solver.damping_interval must be >= 1")
        _check(self.dt_update_interval >= 0, "solver.dt_update_interval must be >= 0 (0 disables)")
        _check(self.divergence_factor > 0, "solver.divergence_factor must be positive")


@dataclass
class OutputConfig:
    directory: str = "results"
    vtk: str = "solution.vtk"
    trace: str = "convergence.csv"
    report: str = "report.json"


@dataclass
class ScenarioConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    cme: CMEConfig = field(default_factory=CMEConfig)
    quadrature_points: int = 4
    loading: LoadingConfig = field(default_factory=LoadingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    workers: int = 1

    def validate(self) -> "ScenarioConfig":
        for part in (self.mesh, self.material, self.cme, self.loading, self.solver):
            part.validate()
        _check(self.quadrature_points in QUADRATURE_LEVELS, f"quadrature_points must be one of {QUADRATURE_LEVELS}")
        _check(self.workers >= 1, "workers must be >= 1")
        if self.loading.scenario.startswith("cube") and self.mesh.generator == "cylinder":
            raise ConfigError("cube scenarios need a box-shaped mesh")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ScenarioConfig":
        return _build(cls, data or {}, "")

    def copy(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(ScenarioConfig.from_dict(self.to_dict()), **changes)

    def resolved(self, mesh=None) -> "ScenarioConfig":
        """Copy with explicit boundary conditions and a concrete step budget."""
        out = ScenarioConfig.from_dict(self.to_dict())
        ld = out.loading
        if ld.scenario != "custom":
            if ld.strain is None and ld.scenario in DEFAULT_STRAIN:
                ld.strain = DEFAULT_STRAIN[ld.scenario]
            ld.conditions = scenario_conditions(out, mesh)
        if out.solver.max_steps is None and mesh is not None:
            out.solver.max_steps = default_step_budget(mesh.n_nodes)
        return out.validate()


def default_step_budget(n_nodes: int) -> int:
    """Budget growing with the node count's cube root (ratio of extreme frequencies)."""
    return int(math.ceil(STEPS_PER_NODE_ROOT * n_nodes ** (1.0 / 3.0) / 100.0) * 100)


def _bounds(cfg: ScenarioConfig, mesh):
    if mesh is not None:
        return mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    if cfg.mesh.generator == "cylinder":
        r = 0.5 * cfg.mesh.diameter
        return [-r, -r, 0.0], [r, r, cfg.mesh.height]
    return [0.0] * 3, [cfg.mesh.side] * 3


def scenario_conditions(cfg: ScenarioConfig, mesh=None) -> list:
    lo, hi = (list(map(float, b)) for b in _bounds(cfg, mesh))
    ld = cfg.loading
    height = hi[2] - lo[2]
    if ld.scenario == "cube-unconstrained":
        return [
            ConditionSpec("y0", "y", lo[1], ["y"], [0.0, 0.0, 0.0]),
            ConditionSpec("x0", "x", lo[0], ["x"], [0.0, 0.0, 0.0]),
            ConditionSpec("bottom", "z", lo[2], ["z"], [0.0, 0.0, 0.0]),
            ConditionSpec("top", "z", hi[2], ["z"], [0.0, 0.0, -ld.strain * height]),
        ]
    if ld.scenario in ("cube-extension", "cube-compression"):
        sign = 1.0 if ld.scenario == "cube-extension" else -1.0
        return [
            ConditionSpec("bottom", "z", lo[2], ["x", "y", "z"], [0.0, 0.0, 0.0]),
            ConditionSpec("top", "z", hi[2], ["x", "y", "z"], [0.0, 0.0, sign * ld.strain * height]),
        ]
    if ld.scenario == "cylinder-indentation":
        centre = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]
        radius = 0.5 * min(hi[0] - lo[0], hi[1] - lo[1])
        return [
            ConditionSpec("bottom", "z", lo[2], ["x", "y", "z"], [0.0, 0.0, 0.0]),
            ConditionSpec("indenter", "z", hi[2], ["z"], [0.0, 0.0, -ld.indentation_depth],
                          radius=ld.indenter_radius_fraction * radius, center=centre),
        ]
    return list(ld.conditions)


_NESTED = {
    "mesh": MeshConfig,
    "material": MaterialConfig,
    "cme": CMEConfig,
    "loading": LoadingConfig,
    "solver": SolverConfig,
    "output": OutputConfig,
}


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {prefix or 'config'}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in data.items():
        if cls is ScenarioConfig and key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value or {}, key)
        elif cls is LoadingConfig and key == "conditions":
            if not isinstance(value, list):
                raise ConfigError("loading.conditions must be a list")
            kwargs[key] = [_build(ConditionSpec, c, f"loading.conditions[{i}]") for i, c in enumerate(value)]
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return ScenarioConfig.from_dict(data).validate()


def dump_config(cfg: ScenarioConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
