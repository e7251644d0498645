"""Smooth approximate distance fields to piecewise-linear boundaries.

Each boundary patch (a segment in 2D, a triangle in 3D) gets a first-order
normalised field ``rho`` built from its carrier line/plane ``f`` and a
trimming function ``t``. Patch fields are joined with the R-equivalence

    d = (sum_i rho_i**-m) ** (-1/m)

All gradients are analytic. Evaluation is vectorised over patches through
compact geometry tables so the same code serves single patches and whole
support boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DEFAULT_ALPHA = 2.0
DEFAULT_K = 2
DEFAULT_M = 3
RHO_EPS_RATIO = 1e-14

# column layout of the triangle table: carrier plane then three edge planes,
# each stored as (unit normal, offset) so that value = n . x - offset
TRI_COLS = 16
SEG_COLS = 6  # normal(2), offset, centre(2), length


class FieldValue(NamedTuple):
    value: float
    grad: np.ndarray
    defined: bool = True


def triangle_table(v1, v2, v3) -> np.ndarray:
    """Geometry table rows for triangles with vertices ``v1, v2, v3`` (each (n, 3))."""
    v1, v2, v3 = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (v1, v2, v3))
    nf = np.cross(v2 - v1, v3 - v1)
    area2 = np.linalg.norm(nf, axis=1)
    if (area2 <= 0).any():
        raise ValueError("degenerate triangle")
    nf /= area2[:, None]
    out = np.empty((len(v1), TRI_COLS))
    out[:, 0:3] = nf
    out[:, 3] = np.einsum("ij,ij->i", nf, v1)
    verts = (v1, v2, v3)
    for j in range(3):
        a, b, opp = verts[j], verts[(j + 1) % 3], verts[(j + 2) % 3]
        npj = np.cross(nf, b - a)
        npj /= np.linalg.norm(npj, axis=1)[:, None]
        # orient toward the opposite vertex so the plane is positive inside
        sgn = np.sign(np.einsum("ij,ij->i", npj, opp - a))
        npj *= sgn[:, None]
        out[:, 4 + 4 * j:7 + 4 * j] = npj
        out[:, 7 + 4 * j] = np.einsum("ij,ij->i", npj, a)
    return out


def segment_table(x1, x2) -> np.ndarray:
    """Geometry table rows for segments ``x1 -> x2`` (each (n, 2))."""
    x1, x2 = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (x1, x2))
    d = x2 - x1
    L = np.linalg.norm(d, axis=1)
    if (L <= 0).any():
        raise ValueError("degenerate segment")
    n = np.column_stack([d[:, 1], -d[:, 0]]) / L[:, None]
    out = np.empty((len(x1), SEG_COLS))
    out[:, 0:2] = n
    out[:, 2] = np.einsum("ij,ij->i", n, x1)
    out[:, 3:5] = 0.5 * (x1 + x2)
    out[:, 5] = L
    return out


def facet_table(nodes: np.ndarray, facets: np.ndarray) -> np.ndarray:
    """Geometry table for mesh facets given as node-index tuples."""
    facets = np.asarray(facets)
    if nodes.shape[1] == 3:
        return triangle_table(nodes[facets[:, 0]], nodes[facets[:, 1]], nodes[facets[:, 2]])
    return segment_table(nodes[facets[:, 0]], nodes[facets[:, 1]])


def trim_G(x, table, alpha=DEFAULT_ALPHA, k=DEFAULT_K):
    """Inner R_f-conjunction radical ``G = sqrt(p1^2 + p2^2 + alpha f^k)`` and its gradient."""
    x = np.asarray(x, dtype=float)
    f = table[:, 0:3] @ x - table[:, 3]
    p1 = table[:, 4:7] @ x - table[:, 7]
    p2 = table[:, 8:11] @ x - table[:, 11]
    G = np.sqrt(p1**2 + p2**2 + alpha * f**k)
    with np.errstate(divide="ignore", invalid="ignore"):
        dG = (
            p1[:, None] * table[:, 4:7]
            + p2[:, None] * table[:, 8:11]
            + (0.5 * alpha * k * f ** (k - 1))[:, None] * table[:, 0:3]
        ) / G[:, None]
    return G, dG


def trim_volume_3d(x, table, alpha=DEFAULT_ALPHA, k=DEFAULT_K):
    """Smooth trimming volume ``t = (p1 ^f p2) ^f p3`` and its gradient for triangles."""
    x = np.asarray(x, dtype=float)
    nf = table[:, 0:3]
    f = nf @ x - table[:, 3]
    p1 = table[:, 4:7] @ x - table[:, 7]
    p2 = table[:, 8:11] @ x - table[:, 11]
    p3 = table[:, 12:15] @ x - table[:, 15]
    afk = alpha * f**k
    G, dG = trim_G(x, table, alpha, k)
    a = p1 + p2 - G
    H = np.sqrt(a**2 + p3**2 + afk)
    t = p1 + p2 + p3 - G - H
    da = table[:, 4:7] + table[:, 8:11] - dG
    with np.errstate(divide="ignore", invalid="ignore"):
        dH = (
            a[:, None] * da
            + p3[:, None] * table[:, 12:15]
            + (0.5 * alpha * k * f ** (k - 1))[:, None] * nf
        ) / H[:, None]
    dt = table[:, 4:7] + table[:, 8:11] + table[:, 12:15] - dG - dH
    return t, dt


def trim_disk_2d(x, table):
    """Disk trimming function ``t = ((L/2)^2 - |x - xc|^2) / L`` and gradient for segments."""
    x = np.asarray(x, dtype=float)
    r = x[None, :] - table[:, 3:5]
    L = table[:, 5]
    t = (0.25 * L**2 - np.einsum("ij,ij->i", r, r)) / L
    dt = -2.0 * r / L[:, None]
    return t, dt


def rho_from_ft(f, df, t, dt):
    """Normalised patch field from carrier value ``f`` and trim ``t`` (vectorised).

    Returns ``(rho, grad, defined)``; ``defined`` is False where the gradient
    does not exist (points on the patch).
    """
    f4 = f**4
    S = np.sqrt(t * t + f4)
    # S - t without cancellation when t > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(t > 0, f4 / (S + t), S - t)
        rho = np.sqrt(f * f + 0.25 * q * q)
        dq = (t[:, None] * dt + (2 * f**3)[:, None] * df) / S[:, None] - dt
        grad = (f[:, None] * df + (0.25 * q)[:, None] * dq) / rho[:, None]
    defined = (rho > 0) & (S > 0)
    grad = np.where(defined[:, None], grad, 0.0)
    return rho, grad, defined


def rho_table(x, table, alpha=DEFAULT_ALPHA, k=DEFAULT_K):
    """Patch fields and gradients for every row of a triangle or segment table."""
    x = np.asarray(x, dtype=float)
    if table.shape[1] == TRI_COLS:
        f = table[:, 0:3] @ x - table[:, 3]
        df = table[:, 0:3]
        t, dt = trim_volume_3d(x, table, alpha, k)
    else:
        f = table[:, 0:2] @ x - table[:, 2]
        df = table[:, 0:2]
        t, dt = trim_disk_2d(x, table)
    return rho_from_ft(f, df, t, dt)


def equivalence_from_rho(rho, grad, m: int = DEFAULT_M, eps: float = 0.0):
    """R-equivalence join of patch fields.

    Evaluated relative to the smallest field so no power over- or underflows.
    Returns ``(d, grad_d, defined)``.
    """
    rmin = float(rho.min())
    if rmin <= eps:
        return 0.0, np.zeros(grad.shape[1]), False
    r = rmin / rho
    rm = r**m
    s = rm.sum()
    d = rmin * s ** (-1.0 / m)
    g = (rm * r) @ grad / s ** ((m + 1.0) / m)
    return d, g, True


@dataclass(frozen=True)
class SegmentPatch:
    x1: np.ndarray
    x2: np.ndarray
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "x1", np.asarray(self.x1, dtype=float))
        object.__setattr__(self, "x2", np.asarray(self.x2, dtype=float))
        object.__setattr__(self, "table", segment_table(self.x1, self.x2))

    @property
    def length(self) -> float:
        return float(self.table[0, 5])

    @property
    def center(self) -> np.ndarray:
        return self.table[0, 3:5].copy()


@dataclass(frozen=True)
class TrianglePatch:
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    alpha: float = DEFAULT_ALPHA
    k: int = DEFAULT_K
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.k < 2 or self.k % 2:
            raise ValueError("k must be an even integer >= 2")
        for name in ("v1", "v2", "v3"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "table", triangle_table(self.v1, self.v2, self.v3))

    @property
    def normal(self) -> np.ndarray:
        return self.table[0, 0:3].copy()

    @property
    def edge_normals(self) -> np.ndarray:
        return self.table[0, [4, 5, 6, 8, 9, 10, 12, 13, 14]].reshape(3, 3)

    def carrier(self, x) -> FieldValue:
        x = np.asarray(x, dtype=float)
        return FieldValue(float(self.table[0, 0:3] @ x - self.table[0, 3]), self.normal)

    def edge_plane(self, j: int, x) -> FieldValue:
        x = np.asarray(x, dtype=float)
        n = self.table[0, 4 + 4 * j:7 + 4 * j]
        return FieldValue(float(n @ x - self.table[0, 7 + 4 * j]), n.copy())

    def G(self, x) -> FieldValue:
        g, dg = trim_G(x, self.table, self.alpha, self.k)
        return FieldValue(float(g[0]), dg[0], bool(g[0] > 0))

    def trim(self, x) -> FieldValue:
        t, dt = trim_volume_3d(x, self.table, self.alpha, self.k)
        return FieldValue(float(t[0]), dt[0], bool(np.isfinite(dt[0]).all()))


def patch_rho_2d(x, patch: SegmentPatch) -> FieldValue:
    """Normalised distance field of one segment at a planar point."""
    rho, grad, ok = rho_table(x, patch.table)
    return FieldValue(float(rho[0]), grad[0], bool(ok[0]))


def _at_vertex(x, patch: TrianglePatch, tol=1e-12) -> bool:
    scale = max(np.linalg.norm(patch.v2 - patch.v1), np.linalg.norm(patch.v3 - patch.v1))
    return any(np.linalg.norm(np.asarray(x) - v) <= tol * scale for v in (patch.v1, patch.v2, patch.v3))


def patch_rho_3d(x, patch: TrianglePatch) -> FieldValue:
    """Normalised distance field of one triangle at a point in space.

    The gradient is flagged undefined on the triangle itself and at its
    vertices.
    """
    rho, grad, ok = rho_table(x, patch.table, patch.alpha, patch.k)
    defined = bool(ok[0]) and not _at_vertex(x, patch)
    if not defined:
        return FieldValue(float(rho[0]), np.zeros(3), False)
    return FieldValue(float(rho[0]), grad[0], True)


@dataclass
class DistanceField:
    """Approximate distance to the union of a set of patches."""

    patches: list
    order: int = DEFAULT_M
    eps: float | None = None

    def __post_init__(self):
        if not self.patches:
            raise ValueError("distance field needs at least one patch")
        if self.order < 1:
            raise ValueError("equivalence order must be >= 1")
        self.table = np.vstack([p.table for p in self.patches])
        first = self.patches[0]
        self.alpha = getattr(first, "alpha", DEFAULT_ALPHA)
        self.k = getattr(first, "k", DEFAULT_K)
        if self.eps is None:
            if self.table.shape[1] == TRI_COLS:
                pts = np.vstack([np.vstack([p.v1, p.v2, p.v3]) for p in self.patches])
            else:
                pts = np.vstack([np.vstack([p.x1, p.x2]) for p in self.patches])
            self.eps = RHO_EPS_RATIO * float(np.linalg.norm(pts.max(0) - pts.min(0)))


def equivalence_distance(x, field: DistanceField) -> FieldValue:
    """R-equivalence distance ``d`` and gradient; ``d = 0`` (flagged) on any patch."""
    rho, grad, _ = rho_table(x, field.table, field.alpha, field.k)
    d, g, ok = equivalence_from_rho(rho, grad, field.order, field.eps)
    return FieldValue(d, g, ok)
