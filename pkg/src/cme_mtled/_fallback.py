"""NumPy implementations of the hot kernels.

Signatures mirror the compiled ``_kernels`` module so either can be
selected at import time. ``workers`` is accepted and ignored.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import maxent
from .distfield import equivalence_from_rho, rho_table

NAME = "python"


def basis_batch(points, h, nbr_ptr, nbr_idx, nodes, fac_ptr, fac_idx, table,
                s, m, alpha, k, tol, max_iter, eps_ratio, workers=1):
    nq, dim = points.shape
    nnz = int(nbr_ptr[-1])
    phi = np.zeros(nnz)
    grad = np.zeros((nnz, dim))
    iters = np.zeros(nq, dtype=np.int32)
    resid = np.zeros(nq)
    status = np.zeros(nq, dtype=np.int8)
    for q in range(nq):
        a, b = nbr_ptr[q], nbr_ptr[q + 1]
        nbrs = nbr_idx[a:b]
        x = points[q]
        starts, ends = fac_ptr[nbrs], fac_ptr[nbrs + 1]
        refs = np.concatenate([fac_idx[i:j] for i, j in zip(starts, ends)])
        uniq, inv = np.unique(refs, return_inverse=True)
        rho, drho, _ = rho_table(x, table[uniq], alpha, k)
        eps = eps_ratio * h[q]
        d = np.zeros(len(nbrs))
        gd = np.zeros((len(nbrs), dim))
        pos = 0
        for i, n in enumerate(ends - starts):
            sel = inv[pos:pos + n]
            pos += n
            if n:
                d[i], gd[i], _ = equivalence_from_rho(rho[sel], drho[sel], m, eps)
        try:
            w, gw = maxent.weights_from_distances(d, gd, s)
            p, g, sol = maxent.basis_from_priors(x, nodes[nbrs], w, gw, tol, max_iter, h[q])
        except maxent.DegeneratePointError:
            status[q] = maxent.STATUS_DEGENERATE_POINT
            continue
        except maxent.NonConvergenceError as exc:
            status[q] = maxent.STATUS_NOT_CONVERGED
            iters[q] = exc.iterations
            resid[q] = exc.residual
            continue
        except maxent.DegenerateGeometryError:
            status[q] = maxent.STATUS_SINGULAR
            continue
        phi[a:b] = p
        grad[a:b] = g
        iters[q] = sol.iterations
        resid[q] = sol.residual
    return phi, grad, iters, resid, status


def _gradient_operators(nbr_ptr, nbr_idx, dphi, n_nodes):
    nq = len(nbr_ptr) - 1
    return [
        sp.csr_matrix((np.ascontiguousarray(dphi[:, j]), nbr_idx, nbr_ptr), shape=(nq, n_nodes))
        for j in range(3)
    ]


class ForceOperator:
    """Cached sparse gradient operators for repeated force evaluations."""

    def __init__(self, nbr_ptr, nbr_idx, dphi, weights, n_nodes):
        self.G = _gradient_operators(nbr_ptr, nbr_idx, dphi, n_nodes)
        self.GT = [g.T.tocsr() for g in self.G]
        self.weights = np.asarray(weights, dtype=float)
        self.n_nodes = n_nodes

    def deformation_gradient(self, u):
        # F[q, i, J] = delta_iJ + sum_b u[b, i] dphi_b/dX_J
        F = np.empty((len(self.weights), 3, 3))
        for J in range(3):
            F[:, :, J] = self.G[J] @ u
        F[:, 0, 0] += 1.0
        F[:, 1, 1] += 1.0
        F[:, 2, 2] += 1.0
        return F

    def forces(self, u, lam, mu):
        """Internal forces, per-point strain energy density and min det F."""
        F = self.deformation_gradient(u)
        J = np.linalg.det(F)
        jmin = float(J.min())
        if not jmin > 0:
            bad = int(np.argmin(J))
            return None, None, jmin, bad
        C = np.einsum("qki,qkj->qij", F, F)
        Cinv = np.linalg.inv(C)
        lnJ = np.log(J)
        S = mu * (np.eye(3)[None] - Cinv) + (lam * lnJ)[:, None, None] * Cinv
        P = F @ S
        W = 0.5 * mu * (np.trace(C, axis1=1, axis2=2) - 3.0) - mu * lnJ + 0.5 * lam * lnJ**2
        wP = P * self.weights[:, None, None]
        f = np.zeros((self.n_nodes, 3))
        for Jx in range(3):
            f += self.GT[Jx] @ wP[:, :, Jx]
        return f, W, jmin, -1


def make_force_operator(nbr_ptr, nbr_idx, dphi, weights, n_nodes, workers=1):
    return ForceOperator(nbr_ptr, nbr_idx, dphi, weights, n_nodes)
