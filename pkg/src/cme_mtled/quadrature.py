"""Background-cell quadrature over tetrahedral meshes.

Rules are stored in barycentric form. Refined levels split each cell by
repeated longest-edge bisection and apply the 4-point rule on every child;
points stay attached to the original cell for neighbour lookup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mesh import SimplexMesh

SUBDIVISIONS = (1, 2, 4, 8)
POINTS_PER_CELL = (1, 4, 8, 16, 32)


@dataclass(frozen=True)
class QuadratureRule:
    bary: np.ndarray  # (n, 4), rows sum to one
    weights: np.ndarray  # fractions of the cell volume


def four_point_rule() -> QuadratureRule:
    """Symmetric degree-2 rule: permutations of (a, b, b, b), equal weights."""
    a = (5.0 + 3.0 * math.sqrt(5.0)) / 20.0
    b = (5.0 - math.sqrt(5.0)) / 20.0
    bary = np.full((4, 4), b)
    np.fill_diagonal(bary, a)
    return QuadratureRule(bary, np.full(4, 0.25))


def centroid_rule() -> QuadratureRule:
    return QuadratureRule(np.full((1, 4), 0.25), np.ones(1))


def bisect(vertices: np.ndarray, bary: np.ndarray, levels: int):
    """Split a tetrahedron ``levels`` times by longest-edge bisection.

    ``bary`` (4, 4) holds the child's vertices as barycentric rows of the
    original cell. Returns the list of children in the same form.
    """
    children = [bary]
    for _ in range(levels):
        nxt = []
        for c in children:
            x = c @ vertices
            best, pair = -1.0, (0, 1)
            for i in range(4):
                for j in range(i + 1, 4):
                    L = np.linalg.norm(x[i] - x[j])
                    if L > best * (1 + 1e-12):
                        best, pair = L, (i, j)
            i, j = pair
            mid = 0.5 * (c[i] + c[j])
            a, b = c.copy(), c.copy()
            a[i] = mid
            b[j] = mid
            nxt.extend([a, b])
        children = nxt
    return children


class QuadraturePoint(NamedTuple):
    position: np.ndarray
    weight: float
    cell: int


@dataclass
class QuadratureSet:
    positions: np.ndarray  # (nq, 3)
    weights: np.ndarray  # (nq,) physical weights, volume units
    cells: np.ndarray  # (nq,) owning original cell
    bary: np.ndarray  # (nq, 4) barycentric coordinates in the owning cell
    points_per_cell: int

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, q) -> QuadraturePoint:
        return QuadraturePoint(self.positions[q], float(self.weights[q]), int(self.cells[q]))


def generate_points(mesh: SimplexMesh, subdivisions: int = 1, rule: str = "four_point") -> QuadratureSet:
    """Quadrature points on every cell.

    ``subdivisions`` in {1, 2, 4, 8} children per cell; ``rule`` is
    ``"four_point"`` or ``"centroid"``.
    """
    if mesh.dim != 3:
        raise ValueError("quadrature generation needs a tetrahedral mesh")
    if subdivisions not in SUBDIVISIONS:
        raise ValueError(f"subdivisions must be one of {SUBDIVISIONS}")
    base = four_point_rule() if rule == "four_point" else centroid_rule() if rule == "centroid" else None
    if base is None:
        raise ValueError(f"unknown rule {rule!r}")
    levels = int(round(math.log2(subdivisions)))
    per_child = len(base.weights)
    npc = per_child * subdivisions
    nq = mesh.n_cells * npc
    bary = np.empty((nq, 4))
    weights = np.empty(nq)
    eye = np.eye(4)
    for c in range(mesh.n_cells):
        verts = mesh.nodes[mesh.cells[c]]
        kids = bisect(verts, eye, levels) if levels else [eye]
        vol = mesh.volumes[c] / len(kids)
        for ci, kid in enumerate(kids):
            sl = slice(c * npc + ci * per_child, c * npc + (ci + 1) * per_child)
            bary[sl] = base.bary @ kid
            weights[sl] = base.weights * vol
    cells = np.repeat(np.arange(mesh.n_cells), npc)
    positions = np.einsum("qi,qij->qj", bary, mesh.nodes[mesh.cells[cells]])
    return QuadratureSet(positions, weights, cells, bary, npc)


def points_for_level(mesh: SimplexMesh, points_per_cell: int) -> QuadratureSet:
    """Quadrature with 1 (centroid), 4, 8, 16 or 32 points per cell."""
    if points_per_cell == 1:
        return generate_points(mesh, 1, rule="centroid")
    if points_per_cell not in POINTS_PER_CELL:
        raise ValueError(f"points_per_cell must be one of {POINTS_PER_CELL}")
    return generate_points(mesh, points_per_cell // 4)
