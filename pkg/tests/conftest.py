import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cme_mtled.generators import cube_mesh, random_cube_mesh
from cme_mtled.maxent import BasisContext, CMEParams
from cme_mtled.mesh import TetMesh

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def regular_tet_nodes():
    return np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    )


def five_tet_cube():
    """Unit cube split into a central regular tet and four corner tets."""
    nodes = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=float)
    cells = np.array([[1, 2, 4, 7], [0, 1, 2, 4], [3, 1, 2, 7], [5, 1, 4, 7], [6, 2, 4, 7]])
    return TetMesh(nodes, cells)


@pytest.fixture(scope="session")
def single_tet():
    return TetMesh(regular_tet_nodes(), np.array([[0, 1, 2, 3]]))


@pytest.fixture(scope="session")
def cube5():
    return five_tet_cube()


@pytest.fixture(scope="session")
def cube150():
    return cube_mesh(150)


@pytest.fixture(scope="session")
def rand500():
    return random_cube_mesh(500)


@pytest.fixture(scope="session")
def ctx150(cube150):
    return BasisContext(cube150, CMEParams())


def interior_points(mesh, n, rng, margin=0.1):
    """Random points strictly inside random cells, with their cell ids."""
    cells = rng.integers(0, mesh.n_cells, n)
    bary = rng.dirichlet(np.ones(mesh.dim + 1), n)
    bary = margin / (mesh.dim + 1) + (1 - margin) * bary
    pts = np.einsum("qv,qvd->qd", bary, mesh.nodes[mesh.cells[cells]])
    return pts, cells


# -- acceptance reporting -------------------------------------------------------

ACCEPTANCE = {}


class Criterion:
    """Collects the outcome of one acceptance criterion.

    Exiting the block without a verdict (an exception) records a failure.
    """

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.checks = []

    def check(self, ok, detail):
        self.checks.append((bool(ok), detail))
        return bool(ok)

    @property
    def passed(self):
        return bool(self.checks) and all(ok for ok, _ in self.checks)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and not issubclass(exc_type, AssertionError):
            self.checks.append((False, f"{exc_type.__name__}: {exc}"))
        ACCEPTANCE[self.number] = self
        line = self.line()
        print(line)
        return False

    def line(self):
        detail = "; ".join(d for _, d in self.checks)
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}  {self.title}: {detail}"

    def verdict(self):
        assert self.passed, self.line()


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n].line())
