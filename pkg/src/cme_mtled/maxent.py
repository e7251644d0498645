"""Cell-based maximum-entropy basis functions.

Priors come from the approximate distance of the evaluation point to each
neighbour's support boundary, ``w_a = d_a^s / sum_b d_b^s``. The basis is the
exponential family

    phi_a = w_a exp(lam . (x - x_a)) / Z

with ``lam`` minimising ``ln Z``. Single-point functions here are the
reference implementation; :func:`evaluate_basis` runs many points through the
compiled kernel when it is available.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distfield import DEFAULT_ALPHA, DEFAULT_K, DEFAULT_M, RHO_EPS_RATIO, equivalence_from_rho, facet_table, rho_table
from .mesh import BOUNDARY_RULES, SimplexMesh, SupportSet

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100
COND_LIMIT = 1e12
REG_RATIO = 1e-10
MAX_HALVINGS = 40

STATUS_OK = 0
STATUS_NOT_CONVERGED = 1
STATUS_DEGENERATE_POINT = 2
STATUS_SINGULAR = 3


class BasisError(RuntimeError):
    """Base class for basis construction failures."""


class DegeneratePointError(BasisError):
    """Every prior vanishes at the evaluation point."""


class NonConvergenceError(BasisError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DegenerateGeometryError(BasisError):
    """The dual Hessian is singular even after regularisation."""


@dataclass(frozen=True)
class CMEParams:
    ring_count: int = 2
    s: int = 2
    m: int = DEFAULT_M
    alpha: float = DEFAULT_ALPHA
    k: int = DEFAULT_K
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    boundary_rule: str = "vertex"

    def __post_init__(self):
        if self.ring_count < 1:
            raise ValueError("ring_count must be >= 1")
        if self.s < 2:
            raise ValueError("s must be >= 2")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.k < 2 or self.k % 2:
            raise ValueError("k must be an even integer >= 2")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.boundary_rule not in BOUNDARY_RULES:
            raise ValueError(f"boundary_rule must be one of {BOUNDARY_RULES}")


@dataclass
class BasisContext:
    """Everything needed to evaluate basis functions on one mesh."""

    mesh: SimplexMesh
    params: CMEParams = field(default_factory=CMEParams)

    def __post_init__(self):
        self.supports: SupportSet = self.mesh.build_supports(self.params.ring_count, self.params.boundary_rule)
        self.table = facet_table(self.mesh.nodes, self.mesh.faces)
        nf = self.supports.node_facets
        self.facet_ptr = nf.indptr.astype(np.int64)
        self.facet_idx = nf.indices.astype(np.int64)
        self.cell_h = self.mesh.cell_size()

    def neighbors(self, cell: int) -> np.ndarray:
        return self.supports.neighbors_of_cell(cell)

    def eps_rho(self, h: float) -> float:
        return RHO_EPS_RATIO * h


@dataclass
class PriorEvaluation:
    neighbor_ids: np.ndarray
    w: np.ndarray
    grad_w: np.ndarray
    d: np.ndarray
    grad_d: np.ndarray
    s: int


@dataclass
class DualSolution:
    lam: np.ndarray
    iterations: int
    residual: float
    objective: list


@dataclass
class BasisEvaluation:
    neighbor_ids: np.ndarray
    phi: np.ndarray
    grad_phi: np.ndarray
    lam: np.ndarray
    iterations: int
    residual: float


def support_distances(x, neighbors, ctx: BasisContext, h: float | None = None):
    """Distance of ``x`` to each neighbour's support boundary, with gradients.

    The patch field of every distinct facet is evaluated once and shared by
    all neighbours that carry it.
    """
    x = np.asarray(x, dtype=float)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    p = ctx.params
    if h is None:
        h = float(ctx.cell_h.mean())
    starts, ends = ctx.facet_ptr[neighbors], ctx.facet_ptr[neighbors + 1]
    refs = np.concatenate([ctx.facet_idx[a:b] for a, b in zip(starts, ends)])
    uniq, inv = np.unique(refs, return_inverse=True)
    rho, grad, _ = rho_table(x, ctx.table[uniq], p.alpha, p.k)
    eps = ctx.eps_rho(h)
    dim = x.shape[0]
    d = np.zeros(len(neighbors))
    gd = np.zeros((len(neighbors), dim))
    ok = np.zeros(len(neighbors), dtype=bool)
    pos = 0
    for i, n in enumerate(ends - starts):
        sel = inv[pos:pos + n]
        pos += n
        if n == 0:
            continue
        d[i], gd[i], ok[i] = equivalence_from_rho(rho[sel], grad[sel], p.m, eps)
    return d, gd, ok


def weights_from_distances(d, grad_d, s: int):
    """Normalised prior weights ``w_a = d_a^s / sum d_b^s`` and their gradients."""
    ds = d**s
    total = ds.sum()
    if not total > 0:
        raise DegeneratePointError("all prior distances vanish at this point")
    w = ds / total
    dds = (s * d ** (s - 1))[:, None] * grad_d
    grad_w = (dds - w[:, None] * dds.sum(axis=0)) / total
    return w, grad_w


def prior_weights(x, neighbors, ctx: BasisContext, s: int | None = None, m: int | None = None, h=None) -> PriorEvaluation:
    """Prior weights of ``neighbors`` at ``x``."""
    if s is not None or m is not None:
        params = ctx.params
        ctx = _with_params(ctx, s if s is not None else params.s, m if m is not None else params.m)
    d, gd, _ = support_distances(x, neighbors, ctx, h)
    w, gw = weights_from_distances(d, gd, ctx.params.s)
    return PriorEvaluation(np.asarray(neighbors), w, gw, d, gd, ctx.params.s)


def _with_params(ctx: BasisContext, s: int, m: int) -> BasisContext:
    clone = object.__new__(BasisContext)
    clone.__dict__.update(ctx.__dict__)
    p = ctx.params
    clone.params = CMEParams(p.ring_count, s, m, p.alpha, p.k, p.tol, p.max_iter)
    return clone


def _log_partition(lam, y, logw):
    e = y @ lam + logw
    emax = e.max()
    return emax + np.log(np.exp(e - emax).sum())


def _regularised(J):
    n = J.shape[0]
    try:
        cond = np.linalg.cond(J, "fro")
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > COND_LIMIT:
        J = J + REG_RATIO * np.trace(J) * np.eye(n)
    return J


def solve_dual(x, nodes, w, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, h: float | None = None) -> DualSolution:
    """Minimise ``ln Z`` over the multipliers with damped Newton steps.

    ``nodes`` and ``w`` cover the neighbours; zero-weight entries are ignored.
    The iteration runs on coordinates scaled by ``h`` and stops once
    ``|sum phi_a (x - x_a)| <= tol * h``. The returned multiplier is in
    physical units (1/length).
    """
    x = np.asarray(x, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    w = np.asarray(w, dtype=float)
    active = w > 0
    dim = x.shape[0]
    if not active.any():
        raise DegeneratePointError("no active prior weights")
    diff = x[None, :] - nodes[active]
    if h is None:
        h = float(np.max(np.linalg.norm(diff, axis=1))) or 1.0
    y = diff / h
    logw = np.log(w[active])
    lam = np.zeros(dim)
    if active.sum() == 1:
        return DualSolution(lam, 0, float(np.linalg.norm(y[0])), [float(logw[0])])
    F = _log_partition(lam, y, logw)
    history = [float(F)]
    it = 0
    while True:
        e = y @ lam + logw
        g = np.exp(e - e.max())
        phi = g / g.sum()
        r = phi @ y
        res = float(np.linalg.norm(r))
        if res <= tol:
            break
        if it >= max_iter:
            raise NonConvergenceError(
                f"dual solve did not converge in {max_iter} iterations (residual {res:.3e})", res, it
            )
        J = (phi[:, None] * y).T @ y - np.outer(r, r)
        J = _regularised(J)
        try:
            step = -np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            raise DegenerateGeometryError("singular dual Hessian") from None
        if not np.isfinite(step).all():
            raise DegenerateGeometryError("singular dual Hessian")
        a = 1.0
        slack = 1e-14 * (1.0 + abs(F))
        for _ in range(MAX_HALVINGS):
            F_new = _log_partition(lam + a * step, y, logw)
            if F_new <= F + slack:
                break
            a *= 0.5
        else:
            raise NonConvergenceError("line search failed", res, it)
        lam = lam + a * step
        F = F_new
        history.append(float(F))
        it += 1
    return DualSolution(lam / h, it, res, history)


def basis_from_priors(x, nodes, w, grad_w, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, h=None):
    """Basis values and gradients given prior weights; returns ``(phi, grad_phi, DualSolution)``."""
    x = np.asarray(x, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    sol = solve_dual(x, nodes, w, tol, max_iter, h)
    lam = sol.lam
    dim = x.shape[0]
    n = len(w)
    active = w > 0
    diff = x[None, :] - nodes
    phi = np.zeros(n)
    grad = np.zeros((n, dim))
    if active.sum() == 1:
        phi[active] = 1.0
        return phi, grad, sol
    e = diff[active] @ lam
    e -= e.max()
    ex = np.exp(e)
    Z = (w[active] * ex).sum()
    g = np.zeros(n)
    g[active] = ex / Z  # phi / w, taken in the limit form
    phi[active] = w[active] * g[active]
    r = phi @ diff
    J = (phi[:, None] * diff).T @ diff - np.outer(r, r)
    J = _regularised(J)
    gw = g[:, None] * grad_w
    gw_sum = gw.sum(axis=0)
    A = gw.T @ diff
    try:
        M = -(A + np.eye(dim)) @ np.linalg.inv(J)
    except np.linalg.LinAlgError:
        raise DegenerateGeometryError("singular dual Hessian") from None
    grad = gw + phi[:, None] * (diff @ M.T - gw_sum[None, :])
    return phi, grad, sol


def basis(x, cell: int, ctx: BasisContext) -> BasisEvaluation:
    """Basis functions of every neighbour of ``cell`` evaluated at ``x``."""
    x = np.asarray(x, dtype=float)
    nbrs = ctx.neighbors(cell)
    h = float(ctx.cell_h[cell])
    pri = prior_weights(x, nbrs, ctx, h=h)
    p = ctx.params
    phi, grad, sol = basis_from_priors(x, ctx.mesh.nodes[nbrs], pri.w, pri.grad_w, p.tol, p.max_iter, h)
    return BasisEvaluation(nbrs.copy(), phi, grad, sol.lam, sol.iterations, sol.residual)


@dataclass
class BasisTable:
    """Basis values of many points in compressed-row form."""

    indptr: np.ndarray
    indices: np.ndarray
    phi: np.ndarray
    grad_phi: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    status: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.indptr) - 1

    def row(self, q: int):
        sl = slice(self.indptr[q], self.indptr[q + 1])
        return self.indices[sl], self.phi[sl], self.grad_phi[sl]

    def matrix(self, n_nodes: int):
        import scipy.sparse as sp

        return sp.csr_matrix((self.phi, self.indices, self.indptr), shape=(self.n_points, n_nodes))

    def gradient_matrices(self, n_nodes: int):
        import scipy.sparse as sp

        return [
            sp.csr_matrix((self.grad_phi[:, j].copy(), self.indices, self.indptr), shape=(self.n_points, n_nodes))
            for j in range(self.grad_phi.shape[1])
        ]


def evaluate_basis(points, cells, ctx: BasisContext, workers: int = 1, backend=None, check: bool = True) -> BasisTable:
    """Evaluate the basis at many points, each with its owning cell.

    Raises the first failure found when ``check`` is set.
    """
    from . import _backend

    kern = backend or _backend.kernels
    points = np.ascontiguousarray(points, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    cn = ctx.supports.cell_nodes
    counts = np.diff(cn.indptr)[cells]
    indptr = np.zeros(len(cells) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    starts = cn.indptr[cells]
    offs = np.arange(indptr[-1]) - np.repeat(indptr[:-1] - starts, counts)
    indices = cn.indices[offs].astype(np.int64)
    h = np.ascontiguousarray(ctx.cell_h[cells])
    p = ctx.params
    phi, grad, iters, resid, status = kern.basis_batch(
        points, h, indptr, indices, ctx.mesh.nodes, ctx.facet_ptr, ctx.facet_idx, ctx.table,
        p.s, p.m, p.alpha, p.k, p.tol, p.max_iter, RHO_EPS_RATIO, workers,
    )
    table = BasisTable(indptr, indices, phi, grad, iters, resid, status)
    if check:
        raise_for_status(table)
    return table


def raise_for_status(table: BasisTable):
    bad = np.flatnonzero(table.status != STATUS_OK)
    if not len(bad):
        return
    q = int(bad[0])
    code = int(table.status[q])
    if code == STATUS_NOT_CONVERGED:
        raise NonConvergenceError(
            f"dual solve did not converge at point {q} (residual {table.residual[q]:.3e})",
            float(table.residual[q]), int(table.iterations[q]),
        )
    if code == STATUS_DEGENERATE_POINT:
        raise DegeneratePointError(f"all prior distances vanish at point {q}")
    raise DegenerateGeometryError(f"singular dual Hessian at point {q}")
