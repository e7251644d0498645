"""Simplicial mesh ingestion and topology queries.

The solver works on tetrahedral meshes. Triangle meshes share the same
topology code and are only used to build planar basis functions for
inspection, so both live in :class:`SimplexMesh`.
"""

from __future__ import annotations

import errno
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DEGENERATE_VOLUME_RATIO = 1e-14
LOCATE_TOL = 1e-12


class MeshError(ValueError):
    """Raised for malformed mesh files or invalid connectivity."""


def simplex_volumes(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Signed volumes (areas in 2D) of every simplex."""
    x0 = nodes[cells[:, 0]]
    edges = np.stack([nodes[cells[:, j]] - x0 for j in range(1, cells.shape[1])], axis=1)
    return np.linalg.det(edges) / math.factorial(nodes.shape[1])


@dataclass(frozen=True)
class SupportDomain:
    """N-ring support of one node.

    ``facets`` holds node-index tuples of the support boundary after the
    boundary-exclusion rule; ``facet_ids`` indexes the same facets in the
    mesh-wide face table.
    """

    node: int
    ring_count: int
    cells: np.ndarray
    neighbor_nodes: np.ndarray
    facets: np.ndarray
    facet_ids: np.ndarray


@dataclass
class SupportSet:
    """Supports of every node at a common ring count, stored as sparse incidence."""

    ring_count: int
    node_cells: sp.csr_matrix  # (n_nodes, n_cells) ring membership
    node_facets: sp.csr_matrix  # (n_nodes, n_faces) retained boundary facets
    cell_nodes: sp.csr_matrix = field(init=False)  # transpose of node_cells

    def __post_init__(self):
        self.cell_nodes = self.node_cells.T.tocsr()
        self.cell_nodes.sort_indices()

    def cells_of(self, node: int) -> np.ndarray:
        m = self.node_cells
        return m.indices[m.indptr[node]:m.indptr[node + 1]]

    def facets_of(self, node: int) -> np.ndarray:
        m = self.node_facets
        return m.indices[m.indptr[node]:m.indptr[node + 1]]

    def neighbors_of_cell(self, cell: int) -> np.ndarray:
        m = self.cell_nodes
        return m.indices[m.indptr[cell]:m.indptr[cell + 1]]

    @property
    def facet_counts(self) -> np.ndarray:
        return np.diff(self.node_facets.indptr)


class SimplexMesh:
    """Nodes plus simplicial connectivity with derived topology.

    Parameters
    ----------
    nodes : (N, d) array
        Node coordinates.
    cells : (M, d + 1) int array
        Cell connectivity. Negatively oriented cells are reoriented.
    """

    def __init__(self, nodes, cells):
        nodes = np.ascontiguousarray(nodes, dtype=float)
        cells = np.array(cells, dtype=np.int64, copy=True)
        if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
            raise MeshError(f"nodes must be (N, 2) or (N, 3), got {nodes.shape}")
        dim = nodes.shape[1]
        if cells.ndim != 2 or cells.shape[1] != dim + 1 or len(cells) == 0:
            raise MeshError(f"cells must be (M, {dim + 1}), got {cells.shape}")
        if cells.min() < 0 or cells.max() >= len(nodes):
            bad = int(np.argmax((cells < 0).any(1) | (cells >= len(nodes)).any(1)))
            raise MeshError(
                f"cell {bad} references node outside [0, {len(nodes)}): {cells[bad].tolist()}"
            )
        vol = simplex_volumes(nodes, cells)
        flip = vol < 0
        cells[flip, 0], cells[flip, 1] = cells[flip, 1], cells[flip, 0].copy()
        vol = np.abs(vol)
        tiny = vol <= DEGENERATE_VOLUME_RATIO * vol.mean()
        if tiny.any():
            raise MeshError(f"degenerate cell {int(np.argmax(tiny))} (volume {vol[tiny][0]:.3e})")

        self.dim = dim
        self.nodes = nodes
        self.cells = cells
        self.volumes = vol
        self._build_faces()
        self._build_node_cells()

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def volume(self) -> float:
        return float(self.volumes.sum())

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.nodes.max(0) - self.nodes.min(0)))

    def _build_faces(self):
        d1 = self.dim + 1
        # local face j is opposite local vertex j
        local = np.array([[k for k in range(d1) if k != j] for j in range(d1)])
        cf = self.cells[:, local]  # (M, d1, d)
        key = np.sort(cf.reshape(-1, self.dim), axis=1)
        faces, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if (counts > 2).any():
            raise MeshError(f"non-manifold face {faces[np.argmax(counts > 2)].tolist()}")
        self.faces = faces
        self.cell_faces = inverse.reshape(-1, d1)
        self.face_cell_count = counts

        owner = np.repeat(np.arange(self.n_cells), d1)
        fc = sp.csr_matrix(
            (np.ones(len(owner), dtype=np.int32), (inverse, owner)), shape=(len(faces), self.n_cells)
        )
        self.face_cells = fc

        neigh = np.full((self.n_cells, d1), -1, dtype=np.int64)
        for j in range(d1):
            f = self.cell_faces[:, j]
            a = fc.indices[fc.indptr[f]]
            b = fc.indices[np.minimum(fc.indptr[f] + 1, fc.indptr[f + 1] - 1)]
            other = np.where(a == np.arange(self.n_cells), b, a)
            neigh[:, j] = np.where(counts[f] == 2, other, -1)
        self.cell_neighbors = neigh

        self.boundary_face_ids = np.flatnonzero(counts == 1)
        bcell, bloc = np.nonzero(counts[self.cell_faces] == 1)
        order = np.argsort(self.cell_faces[bcell, bloc], kind="stable")
        bcell, bloc = bcell[order], bloc[order]
        oriented = self.cells[bcell[:, None], local[bloc]]
        # outward orientation: the face, followed by the opposite vertex, is negatively oriented
        if self.dim == 3:
            p = self.nodes[oriented]
            opp = self.nodes[self.cells[bcell, bloc]]
            n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            inward = np.einsum("ij,ij->i", n, opp - p[:, 0]) > 0
            oriented[inward, 1], oriented[inward, 2] = oriented[inward, 2], oriented[inward, 1].copy()
        else:
            p = self.nodes[oriented]
            opp = self.nodes[self.cells[bcell, bloc]]
            t = p[:, 1] - p[:, 0]
            n = np.stack([t[:, 1], -t[:, 0]], axis=1)
            inward = np.einsum("ij,ij->i", n, opp - p[:, 0]) > 0
            oriented[inward, 0], oriented[inward, 1] = oriented[inward, 1], oriented[inward, 0].copy()
        self.boundary_faces = oriented
        self.is_boundary_node = np.zeros(self.n_nodes, dtype=bool)
        self.is_boundary_node[faces[self.boundary_face_ids].ravel()] = True

    def _build_node_cells(self):
        d1 = self.dim + 1
        rows = self.cells.ravel()
        cols = np.repeat(np.arange(self.n_cells), d1)
        inc = sp.csr_matrix(
            (np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(self.n_nodes, self.n_cells)
        )
        inc.sort_indices()
        self.node_cell_incidence = inc

    def cells_of_node(self, node: int) -> np.ndarray:
        m = self.node_cell_incidence
        return m.indices[m.indptr[node]:m.indptr[node + 1]]

    def cell_size(self) -> np.ndarray:
        """Longest edge of every cell."""
        p = self.nodes[self.cells]
        d1 = self.dim + 1
        h = np.zeros(self.n_cells)
        for i in range(d1):
            for j in range(i + 1, d1):
                h = np.maximum(h, np.linalg.norm(p[:, i] - p[:, j], axis=1))
        return h

    def barycentric(self, cell: int, x) -> np.ndarray:
        p = self.nodes[self.cells[cell]]
        a = np.vstack([p.T, np.ones(self.dim + 1)])
        return np.linalg.solve(a, np.append(np.asarray(x, dtype=float), 1.0))

    def _centroid_kdtree(self):
        if getattr(self, "_kdtree", None) is None:
            from scipy.spatial import cKDTree

            self._kdtree = cKDTree(self.nodes[self.cells].mean(axis=1))
        return self._kdtree

    def locate_point(self, x, start: int | None = None) -> int | None:
        """Cell containing ``x`` or ``None`` when ``x`` lies outside the mesh.

        A walk across face neighbours is tried first; an exhaustive scan
        backs it up. Points on shared faces resolve to the lowest cell index.
        """
        x = np.asarray(x, dtype=float)
        if start is None:
            start = int(self._centroid_kdtree().query(x)[1])
        cell = start
        found = None
        for _ in range(4 * self.n_cells):
            b = self.barycentric(cell, x)
            j = int(np.argmin(b))
            if b[j] >= -LOCATE_TOL:
                found = cell
                break
            nxt = self.cell_neighbors[cell, j]
            if nxt < 0:
                break
            cell = int(nxt)
        if found is None:
            found = self._scan(x)
            if found is None:
                return None
        candidates = np.unique(
            np.concatenate([self.cells_of_node(v) for v in self.cells[found]])
        )
        for c in candidates:
            if c < found and self.barycentric(int(c), x).min() >= -LOCATE_TOL:
                return int(c)
        return int(found)

    def _scan(self, x) -> int | None:
        p = self.nodes[self.cells]  # (M, d1, d)
        t = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))
        rhs = x - p[:, 0]
        lam = np.linalg.solve(t, rhs[..., None])[..., 0]
        b = np.column_stack([1.0 - lam.sum(1), lam])
        inside = np.flatnonzero(b.min(1) >= -LOCATE_TOL)
        return int(inside[0]) if len(inside) else None

    def build_supports(self, ring_count: int, boundary_rule: str = "vertex") -> SupportSet:
        """Supports of every node for a common ring count.

        ``boundary_rule`` selects which support-boundary facets lying on the
        domain boundary are dropped: ``"vertex"`` drops those containing the
        node itself, ``"all"`` drops every one of them.
        """
        if ring_count < 1:
            raise ValueError("ring_count must be >= 1")
        _check_rule(boundary_rule)
        inc = self.node_cell_incidence
        adj = (inc @ inc.T).tocsr()
        adj.data[:] = 1
        ring = inc.copy()
        for _ in range(ring_count - 1):
            ring = adj @ ring
            ring.data[:] = 1
        ring = ring.tocsr().astype(np.int32)
        ring.eliminate_zeros()
        ring.sort_indices()

        counts = (ring @ self.face_cells.T).tocsr()
        counts.data = (counts.data == 1).astype(np.int8)
        counts.eliminate_zeros()
        bf = self.boundary_face_ids
        if boundary_rule == "all":
            on_domain = np.zeros(len(self.faces), dtype=bool)
            on_domain[bf] = True
            counts = counts.tocsr()
            counts.data[on_domain[counts.indices]] = 0
            facets = counts
        else:
            # drop domain-boundary facets that contain the node itself
            rows = self.faces[bf].ravel()
            cols = np.repeat(bf, self.dim)
            own = sp.csr_matrix(
                (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=counts.shape
            )
            facets = (counts - counts.multiply(own)).tocsr()
        facets.eliminate_zeros()
        facets.sort_indices()
        return SupportSet(ring_count=ring_count, node_cells=ring, node_facets=facets)

    def ring_support(self, node: int, ring_count: int, boundary_rule: str = "vertex") -> SupportDomain:
        """Support of a single node (see :meth:`build_supports` for all nodes)."""
        _check_rule(boundary_rule)
        if not 0 <= node < self.n_nodes:
            raise IndexError(f"node {node} out of range")
        if ring_count < 1:
            raise ValueError("ring_count must be >= 1")
        cells = self.cells_of_node(node)
        for _ in range(ring_count - 1):
            verts = np.unique(self.cells[cells])
            cells = np.unique(np.concatenate([self.cells_of_node(v) for v in verts]))
        fids, cnt = np.unique(self.cell_faces[cells].ravel(), return_counts=True)
        fids = fids[cnt == 1]
        on_domain = self.face_cell_count[fids] == 1
        if boundary_rule == "all":
            fids = fids[~on_domain]
        else:
            has_node = (self.faces[fids] == node).any(axis=1)
            fids = fids[~(on_domain & has_node)]
        return SupportDomain(
            node=node,
            ring_count=ring_count,
            cells=np.sort(cells),
            neighbor_nodes=np.unique(self.cells[cells]),
            facets=self.faces[fids],
            facet_ids=fids,
        )


BOUNDARY_RULES = ("vertex", "all")


def _check_rule(rule: str):
    if rule not in BOUNDARY_RULES:
        raise ValueError(f"boundary_rule must be one of {BOUNDARY_RULES}, got {rule!r}")


class TetMesh(SimplexMesh):
    """Tetrahedral mesh in three dimensions."""

    def __init__(self, nodes, cells):
        super().__init__(nodes, cells)
        if self.dim != 3:
            raise MeshError("TetMesh requires 3D nodes and 4-node cells")


def neighbors_of_cell(supports: SupportSet, cell: int) -> np.ndarray:
    """Nodes whose support contains ``cell``."""
    return supports.neighbors_of_cell(cell)


def _read_table(path: Path, ncols_min: int):
    rows = []
    header = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if header is None:
                try:
                    header = [int(p) for p in parts]
                except ValueError:
                    raise MeshError(f"{path}:{lineno}: bad header {line!r}") from None
                continue
            if len(parts) < ncols_min:
                raise MeshError(f"{path}:{lineno}: expected {ncols_min} columns, got {len(parts)}")
            rows.append((lineno, parts))
    if header is None:
        raise MeshError(f"{path}: empty file")
    return header, rows


def load_mesh(node_file, ele_file) -> SimplexMesh:
    """Read TetGen/Triangle-style ``.node`` and ``.ele`` files.

    Indices may start at 0 or 1; the base is taken from the first node index.
    Returns a :class:`TetMesh` for 3D input and a :class:`SimplexMesh` for 2D.
    """
    node_file, ele_file = Path(node_file), Path(ele_file)
    for p in (node_file, ele_file):
        if not p.is_file():
            raise FileNotFoundError(errno.ENOENT, "mesh file not found", str(p))
    header, rows = _read_table(node_file, 3)
    n, dim = header[0], header[1] if len(header) > 1 else 3
    if dim not in (2, 3):
        raise MeshError(f"{node_file}: unsupported dimension {dim}")
    if len(rows) != n:
        raise MeshError(f"{node_file}: header declares {n} nodes, found {len(rows)}")
    ids = np.empty(n, dtype=np.int64)
    coords = np.empty((n, dim))
    for i, (lineno, parts) in enumerate(rows):
        try:
            ids[i] = int(parts[0])
            coords[i] = [float(v) for v in parts[1:dim + 1]]
        except (ValueError, IndexError):
            raise MeshError(f"{node_file}:{lineno}: cannot parse node line") from None
    base = int(ids[0])
    if base not in (0, 1):
        raise MeshError(f"{node_file}: first node index must be 0 or 1, got {base}")
    uniq, cnt = np.unique(ids, return_counts=True)
    if (cnt > 1).any():
        dup = int(uniq[np.argmax(cnt > 1)])
        lineno = rows[int(np.flatnonzero(ids == dup)[1])][0]
        raise MeshError(f"{node_file}:{lineno}: duplicate node index {dup}")
    if ids.min() != base or ids.max() != base + n - 1:
        raise MeshError(f"{node_file}: node indices must be contiguous from {base}")
    order = np.argsort(ids)
    coords = coords[order]

    header, rows = _read_table(ele_file, dim + 2)
    m, per = header[0], header[1] if len(header) > 1 else dim + 1
    if per != dim + 1:
        raise MeshError(f"{ele_file}: expected {dim + 1} nodes per cell, header says {per}")
    if len(rows) != m:
        raise MeshError(f"{ele_file}: header declares {m} cells, found {len(rows)}")
    cells = np.empty((m, dim + 1), dtype=np.int64)
    for i, (lineno, parts) in enumerate(rows):
        try:
            cells[i] = [int(v) - base for v in parts[1:dim + 2]]
        except ValueError:
            raise MeshError(f"{ele_file}:{lineno}: cannot parse cell line") from None
        if cells[i].min() < 0 or cells[i].max() >= n:
            raise MeshError(
                f"{ele_file}:{lineno}: cell references node outside [{base}, {base + n - 1}]"
            )
    cls = TetMesh if dim == 3 else SimplexMesh
    return cls(coords, cells)


def save_mesh(mesh: SimplexMesh, stem) -> tuple[Path, Path]:
    """Write ``stem.node`` / ``stem.ele`` with 0-based indices."""
    stem = Path(stem)
    node_path, ele_path = stem.with_suffix(".node"), stem.with_suffix(".ele")
    with open(node_path, "w") as fh:
        fh.write(f"{mesh.n_nodes} {mesh.dim} 0 0\n")
        for i, x in enumerate(mesh.nodes):
            fh.write(f"{i} " + " ".join(repr(float(v)) for v in x) + "\n")
    with open(ele_path, "w") as fh:
        fh.write(f"{mesh.n_cells} {mesh.dim + 1} 0\n")
        for i, c in enumerate(mesh.cells):
            fh.write(f"{i} " + " ".join(str(int(v)) for v in c) + "\n")
    return node_path, ele_path
