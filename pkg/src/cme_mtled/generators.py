"""Built-in benchmark geometries.

Box meshes lay nodes on a structured lattice, jitter the interior nodes
and tetrahedralise with Delaunay. Nodes on flat faces move only within
their face so the geometry stays exact. The cylinder is an extruded disk
triangulation instead (see :func:`cylinder_mesh`).
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.spatial import Delaunay

from .mesh import DEGENERATE_VOLUME_RATIO, SimplexMesh, TetMesh, simplex_volumes

DEFAULT_JITTER = 0.2


def _grid_counts(n_nodes: int, aspect=(1.0, 1.0, 1.0)) -> tuple[int, ...]:
    """Per-axis node counts whose product is closest to ``n_nodes``."""
    a = np.asarray(aspect, dtype=float)
    base = (n_nodes / np.prod(a)) ** (1.0 / len(a)) * a
    best = None
    for combo in itertools.product(*[(math.floor(b), math.ceil(b), math.ceil(b) + 1) for b in base]):
        combo = tuple(max(2, int(c)) for c in combo)
        err = (abs(np.prod(combo) - n_nodes), np.ptp(np.asarray(combo) / a))
        if best is None or err < best[0]:
            best = (err, combo)
    return best[1]


def _delaunay(points: np.ndarray) -> np.ndarray:
    tri = Delaunay(points, qhull_options="Qbb Qc Qz Q12 Qt")
    cells = tri.simplices.astype(np.int64)
    vol = np.abs(simplex_volumes(points, cells))
    # flat simplices spanning coplanar hull points carry no volume
    keep = vol > 1e3 * DEGENERATE_VOLUME_RATIO * vol.mean()
    return cells[keep]


def _jitter_box(points, lo, hi, spacing, jitter, rng):
    """Jitter points of an axis-aligned box, keeping boundary nodes on their faces."""
    pts = points.copy()
    tol = 1e-9 * np.max(hi - lo)
    for ax in range(pts.shape[1]):
        free = (pts[:, ax] > lo[ax] + tol) & (pts[:, ax] < hi[ax] - tol)
        pts[free, ax] += rng.uniform(-jitter, jitter, free.sum()) * spacing[ax]
    return pts


def box_mesh(lengths, n_nodes: int, jitter: float = DEFAULT_JITTER, seed: int = 0) -> SimplexMesh:
    """Jittered structured Delaunay mesh of ``[0, L0] x [0, L1] (x [0, L2])``."""
    lengths = np.asarray(lengths, dtype=float)
    counts = _grid_counts(n_nodes, lengths / lengths.min())
    axes = [np.linspace(0.0, L, n) for L, n in zip(lengths, counts)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lengths))
    spacing = lengths / (np.asarray(counts) - 1)
    rng = np.random.default_rng(seed)
    pts = _jitter_box(pts, np.zeros_like(lengths), lengths, spacing, jitter, rng)
    cells = _delaunay(pts)
    return TetMesh(pts, cells) if len(lengths) == 3 else SimplexMesh(pts, cells)


def cube_mesh(n_nodes: int = 150, side: float = 0.1, jitter: float = DEFAULT_JITTER, seed: int = 0) -> TetMesh:
    """Cube ``[0, side]^3`` with roughly ``n_nodes`` nodes."""
    return box_mesh((side, side, side), n_nodes, jitter=jitter, seed=seed)


def rectangle_mesh(n_nodes: int = 60, size=(10.0, 4.0), jitter: float = 0.0, seed: int = 0) -> SimplexMesh:
    """Planar triangle mesh of a rectangle."""
    return box_mesh(size, n_nodes, jitter=jitter, seed=seed)


def random_cube_mesh(n_nodes: int = 500, side: float = 0.1, seed: int = 0) -> TetMesh:
    """Cube with a structured surface lattice and uniformly random interior nodes."""
    rng = np.random.default_rng(seed)
    # pick the surface lattice so that roughly half the nodes sit inside
    n = 2
    while True:
        surface = n**3 - (n - 2) ** 3
        if surface > 0.5 * n_nodes or n > 60:
            break
        n += 1
    n = max(n - 1, 2)
    axis = np.linspace(0.0, side, n)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    on_surface = ((grid <= 1e-12) | (grid >= side - 1e-12)).any(axis=1)
    surface_pts = _jitter_box(
        grid[on_surface], np.zeros(3), np.full(3, side), np.full(3, side / (n - 1)), 0.25, rng
    )
    n_inner = max(n_nodes - len(surface_pts), 0)
    margin = 0.15 * side / (n - 1)
    inner = rng.uniform(margin, side - margin, size=(n_inner, 3))
    pts = np.vstack([surface_pts, inner])
    return TetMesh(pts, _delaunay(pts))


def _disk_points(radius: float, nr: int, jitter: float, rng) -> np.ndarray:
    """Centre plus ``nr`` rings of ``6 i`` points; the outer ring stays on the circle."""
    dr = radius / nr
    pts = [(0.0, 0.0)]
    for i in range(1, nr + 1):
        m = 6 * i
        th = 2 * np.pi * np.arange(m) / m + rng.uniform(-jitter, jitter, m) / i
        r = np.full(m, i * dr)
        if i < nr:
            r += rng.uniform(-jitter, jitter, m) * dr
        pts.extend(zip(r * np.cos(th), r * np.sin(th)))
    return np.asarray(pts)


def _split_prisms(tri: np.ndarray, n_layers: int, layer_size: int) -> np.ndarray:
    """Three tetrahedra per triangular prism.

    Each quadrilateral side is cut from its lower-index bottom vertex to its
    higher-index top vertex, so neighbouring prisms agree on the diagonal.
    """
    t = np.sort(tri, axis=1)
    out = []
    for k in range(n_layers):
        a, b, c = (t[:, j] + k * layer_size for j in range(3))
        A, B, C = a + layer_size, b + layer_size, c + layer_size
        out += [np.column_stack(x) for x in ((a, b, c, C), (a, b, B, C), (a, A, B, C))]
    return np.vstack(out)


def cylinder_mesh(
    n_nodes: int = 2000,
    height: float = 0.017,
    diameter: float = 0.030,
    jitter: float = 0.15,
    seed: int = 0,
) -> TetMesh:
    """Circular cylinder standing on ``z = 0`` with axis along z.

    A jittered ring layout of the disk is triangulated once and extruded in
    layers; every prism is split into three tetrahedra. Unlike a 3D Delaunay
    of lattice points this produces no slivers.
    """
    radius = 0.5 * diameter
    rng = np.random.default_rng(seed)
    best = None
    for nr in range(1, 60):
        dr = radius / nr
        nz = max(2, round(height / dr) + 1)
        total = (1 + 3 * nr * (nr + 1)) * nz
        if best is None or abs(total - n_nodes) < abs(best[2] - n_nodes):
            best = (nr, nz, total)
    nr, nz, _ = best
    xy = _disk_points(radius, nr, jitter, rng)
    tri = Delaunay(xy).simplices
    dz = height / (nz - 1)
    layers = []
    for k, z in enumerate(np.linspace(0.0, height, nz)):
        zc = np.full(len(xy), z)
        if 0 < k < nz - 1:
            zc += rng.uniform(-jitter, jitter, len(xy)) * dz
        layers.append(np.column_stack([xy, zc]))
    return TetMesh(np.vstack(layers), _split_prisms(tri, nz - 1, len(xy)))
