import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from cme_mtled.distfield import (
    DistanceField,
    SegmentPatch,
    TrianglePatch,
    equivalence_distance,
    patch_rho_2d,
    patch_rho_3d,
)

EQUI = (np.zeros(3), np.array([1.0, 0, 0]), np.array([0.5, math.sqrt(3) / 2, 0]))


def fd_grad(fn, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def segment_distance(x, a, b):
    a, b, x = map(np.asarray, (a, b, x))
    t = np.clip((x - a) @ (b - a) / ((b - a) @ (b - a)), 0, 1)
    return float(np.linalg.norm(x - (a + t * (b - a))))


def test_segment_reference_value():
    # closed form with f = 0.3 and t = (1/4 - 0.09) / 1
    f, t = 0.3, 0.16
    expect = math.sqrt(f**2 + 0.25 * (math.sqrt(t**2 + f**4) - t) ** 2)
    got = patch_rho_2d([0.5, 0.3], SegmentPatch([0, 0], [1, 0]))
    assert got.value == pytest.approx(expect, rel=1e-14)
    assert got.value == pytest.approx(0.30023, abs=5e-6)


def test_segment_zero_on_patch():
    v = patch_rho_2d([0.5, 0.0], SegmentPatch([0, 0], [1, 0]))
    assert v.value == 0.0 and not v.defined


@pytest.mark.xfail(strict=True, reason="the disk trim grows like r^2/L, so rho is not a far-field distance")
def test_segment_far_field_ratio():
    seg = SegmentPatch([0, 0], [1, 0])
    x = np.array([30.0, 40.0])
    assert patch_rho_2d(x, seg).value / segment_distance(x, seg.x1, seg.x2) == pytest.approx(1, rel=0.1)


def test_segment_near_field_matches_exact_distance():
    seg = SegmentPatch([0, 0], [1, 0])
    for x in ([0.3, 0.02], [0.5, -0.01], [0.8, 0.005]):
        assert patch_rho_2d(x, seg).value == pytest.approx(segment_distance(x, seg.x1, seg.x2), rel=0.02)


def test_triangle_geometry_invariants():
    tri = TrianglePatch(*EQUI)
    assert np.linalg.norm(tri.normal) == pytest.approx(1, abs=1e-15)
    verts = np.array(EQUI)
    for j, n in enumerate(tri.edge_normals):
        assert abs(n @ tri.normal) <= 1e-12
        opp = verts[(j + 2) % 3]
        assert tri.edge_plane(j, opp).value > 0


def test_triangle_zero_inside_and_flagged():
    tri = TrianglePatch(*EQUI)
    v = patch_rho_3d(np.mean(EQUI, axis=0), tri)
    assert v.value == 0.0 and not v.defined
    assert not patch_rho_3d(EQUI[1], tri).defined


@pytest.mark.parametrize("h", [0.1, 0.05, 0.01, 0.001])
def test_triangle_centroid_normal(h):
    tri = TrianglePatch(*EQUI)
    x = np.mean(EQUI, axis=0) + [0, 0, h]
    assert patch_rho_3d(x, tri).value == pytest.approx(h, rel=0.05)


@given(
    st.floats(0.05, 0.9), st.floats(0.05, 0.9), st.floats(1e-4, 0.05), st.booleans()
)
def test_first_order_normalisation(a, b, delta, below):
    assume(a + b <= 0.95)
    tri = TrianglePatch(*EQUI)
    p = (1 - a - b) * EQUI[0] + a * EQUI[1] + b * EQUI[2]
    x = p + [0, 0, -delta if below else delta]
    d = equivalence_distance(x, DistanceField([tri]))
    assert d.value / delta == pytest.approx(1.0, rel=0.02)


def r_and(a, b):
    return a + b - math.sqrt(a * a + b * b)


def test_alpha_zero_trim_is_r_conjunction():
    tri = TrianglePatch(*EQUI, alpha=0.0)
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.uniform(-1, 2, 3)
        x[2] = rng.choice([-1, 1]) * rng.uniform(0.1, 1)
        p = [tri.edge_plane(j, x).value for j in range(3)]
        expect = r_and(r_and(p[0], p[1]), p[2])
        assert tri.trim(x).value == pytest.approx(expect, abs=1e-12)


def _random_offpatch(rng):
    x = rng.uniform(-0.5, 1.5, 3)
    x[2] = rng.choice([-1, 1]) * rng.uniform(0.05, 0.8)
    return x


@pytest.mark.parametrize("quantity", ["G", "trim"])
def test_trim_gradients(quantity):
    tri = TrianglePatch(*EQUI)
    rng = np.random.default_rng(11)
    fn = getattr(tri, quantity)
    for _ in range(100):
        x = _random_offpatch(rng)
        g = fn(x).grad
        fd = fd_grad(lambda y: fn(y).value, x)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-3)


def test_rho_gradients():
    tri = TrianglePatch(*EQUI)
    seg = SegmentPatch([0, 0], [1, 0])
    rng = np.random.default_rng(12)
    for _ in range(100):
        x = _random_offpatch(rng)
        g = patch_rho_3d(x, tri).grad
        fd = fd_grad(lambda y: patch_rho_3d(y, tri).value, x)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)
        y = np.array([rng.uniform(-1, 2), rng.choice([-1, 1]) * rng.uniform(0.05, 1)])
        g2 = patch_rho_2d(y, seg).grad
        fd2 = fd_grad(lambda z: patch_rho_2d(z, seg).value, y)
        assert np.linalg.norm(g2 - fd2) <= 1e-5 * np.linalg.norm(fd2)


def _tet_surface():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    faces = [(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)]
    return DistanceField([TrianglePatch(*v[list(f)]) for f in faces])


def test_equivalence_gradient_and_bounds():
    field = _tet_surface()
    rng = np.random.default_rng(13)
    for _ in range(100):
        b = rng.dirichlet(np.ones(4)) * 0.8 + 0.05
        x = b[1:] * 1.0
        d = equivalence_distance(x, field)
        fd = fd_grad(lambda y: equivalence_distance(y, field).value, x)
        assert np.linalg.norm(d.grad - fd) <= 1e-5 * np.linalg.norm(fd)
        rhos = [patch_rho_3d(x, p).value for p in field.patches]
        assert 0 < d.value <= min(rhos)


def test_single_patch_equivalence_is_rho():
    tri = TrianglePatch(*EQUI)
    x = np.array([0.2, 0.3, 0.4])
    d = equivalence_distance(x, DistanceField([tri]))
    r = patch_rho_3d(x, tri)
    assert d.value == pytest.approx(r.value, rel=1e-15)
    np.testing.assert_allclose(d.grad, r.grad, rtol=1e-14)


def test_zero_on_any_patch():
    field = _tet_surface()
    for x in ([0.3, 0.3, 0.0], [0.2, 0.0, 0.5], [0.3, 0.3, 0.4]):
        d = equivalence_distance(np.array(x), field)
        assert d.value == 0.0 and not d.defined


def test_mirror_symmetry():
    # patches paired with their images under x -> 1 - x, vertex order kept
    # (the nested trim is not symmetric in its three edges)
    flip = np.array([-1.0, 1, 1])
    shift = np.array([1.0, 0, 0])
    tris = [np.array([[0, 0, 0], [0.4, 0, 0], [0.1, 0.5, 0]]), np.array([[0.1, 0.1, 0.8], [0.3, 0.2, 0.9], [0.2, 0.6, 1.0]])]
    tris += [t * flip + shift for t in tris]
    field = DistanceField([TrianglePatch(*t) for t in tris])
    rng = np.random.default_rng(5)
    for _ in range(30):
        x = np.array([rng.uniform(0, 1), rng.uniform(0, 0.6), rng.uniform(0, 0.5)])
        m = x.copy()
        m[0] = 1 - x[0]
        a, b = equivalence_distance(x, field), equivalence_distance(m, field)
        assert a.value == pytest.approx(b.value, abs=1e-12)
        assert a.grad[0] == pytest.approx(-b.grad[0], abs=1e-10)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_nonnegative(x):
    assert equivalence_distance(np.array(x), _tet_surface()).value >= 0


def test_bad_parameters():
    with pytest.raises(ValueError):
        TrianglePatch(*EQUI, k=3)
    with pytest.raises(ValueError):
        TrianglePatch(*EQUI, alpha=-1)
    with pytest.raises(ValueError):
        DistanceField([])
