# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: batched 3D basis evaluation and internal force assembly.

Same call signatures as ``_fallback``. Points are independent, so the
OpenMP loops give identical results for any worker count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, threadid
from libc.math cimport sqrt, exp, log, fabs, INFINITY
from libc.stdint cimport int64_t, int32_t, int8_t

from . import _fallback

NAME = "cython"

cdef int STATUS_OK = 0
cdef int STATUS_NOT_CONVERGED = 1
cdef int STATUS_DEGENERATE_POINT = 2
cdef int STATUS_SINGULAR = 3
cdef double COND_LIMIT = 1e12
cdef double REG_RATIO = 1e-10
cdef int MAX_HALVINGS = 40


cdef inline double ipow(double x, int n) noexcept nogil:
    cdef double r = 1.0
    cdef int i
    for i in range(n):
        r *= x
    return r


cdef inline double det3(double* A) noexcept nogil:
    return (A[0] * (A[4] * A[8] - A[5] * A[7])
            - A[1] * (A[3] * A[8] - A[5] * A[6])
            + A[2] * (A[3] * A[7] - A[4] * A[6]))


cdef inline void adj3(double* A, double* B) noexcept nogil:
    B[0] = A[4] * A[8] - A[5] * A[7]
    B[1] = A[2] * A[7] - A[1] * A[8]
    B[2] = A[1] * A[5] - A[2] * A[4]
    B[3] = A[5] * A[6] - A[3] * A[8]
    B[4] = A[0] * A[8] - A[2] * A[6]
    B[5] = A[2] * A[3] - A[0] * A[5]
    B[6] = A[3] * A[7] - A[4] * A[6]
    B[7] = A[1] * A[6] - A[0] * A[7]
    B[8] = A[0] * A[4] - A[1] * A[3]


cdef inline double fro3(double* A) noexcept nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(9):
        s += A[i] * A[i]
    return sqrt(s)


cdef int inv_regularised(double* J, double* Jinv) noexcept nogil:
    """Inverse of a symmetric 3x3, regularised when ill-conditioned. 0 on success."""
    cdef double B[9]
    cdef double det, cond, tr
    cdef int i
    det = det3(J)
    adj3(J, B)
    if det > 0:
        cond = fro3(J) * fro3(B) / det
    else:
        cond = INFINITY
    if not (cond <= COND_LIMIT):
        tr = REG_RATIO * (J[0] + J[4] + J[8])
        J[0] += tr
        J[4] += tr
        J[8] += tr
        det = det3(J)
        adj3(J, B)
    if not (det > 0) or det != det:
        return 1
    for i in range(9):
        Jinv[i] = B[i] / det
    return 0


cdef inline void facet_rho(const double* x, const double* T, double alpha, int k,
                           double* out) noexcept nogil:
    """out = (rho, drho_x, drho_y, drho_z) for one triangle table row."""
    cdef double f, p1, p2, p3, fk, c1, G, a, H, t, f4, S, q, rho
    cdef double dG[3]
    cdef double dt[3]
    cdef double dH, da, dq
    cdef int i
    f = T[0] * x[0] + T[1] * x[1] + T[2] * x[2] - T[3]
    p1 = T[4] * x[0] + T[5] * x[1] + T[6] * x[2] - T[7]
    p2 = T[8] * x[0] + T[9] * x[1] + T[10] * x[2] - T[11]
    p3 = T[12] * x[0] + T[13] * x[1] + T[14] * x[2] - T[15]
    fk = alpha * ipow(f, k)
    c1 = 0.5 * alpha * k * ipow(f, k - 1)
    G = sqrt(p1 * p1 + p2 * p2 + fk)
    a = p1 + p2 - G
    H = sqrt(a * a + p3 * p3 + fk)
    t = p1 + p2 + p3 - G - H
    f4 = f * f * f * f
    S = sqrt(t * t + f4)
    if t > 0:
        q = f4 / (S + t)
    else:
        q = S - t
    rho = sqrt(f * f + 0.25 * q * q)
    out[0] = rho
    if rho <= 0 or S <= 0 or G <= 0 or H <= 0:
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
        return
    for i in range(3):
        dG[i] = (p1 * T[4 + i] + p2 * T[8 + i] + c1 * T[i]) / G
    for i in range(3):
        da = T[4 + i] + T[8 + i] - dG[i]
        dH = (a * da + p3 * T[12 + i] + c1 * T[i]) / H
        dt[i] = T[4 + i] + T[8 + i] + T[12 + i] - dG[i] - dH
    for i in range(3):
        dq = (t * dt[i] + 2.0 * f * f * f * T[i]) / S - dt[i]
        out[1 + i] = (f * T[i] + 0.25 * q * dq) / rho


cdef int basis_point(const double* x, double h, const int64_t* nbrs, int nn,
                     const double* nodes, const int64_t* fptr, const int64_t* fidx,
                     const double* table, int s, int m, double alpha, int k,
                     double tol, int max_iter, double eps, int64_t tag,
                     int64_t* stamp, double* cache,
                     double* d, double* gd, double* w, double* gw, double* y, double* g,
                     double* phi_out, double* grad_out, int* iters_out,
                     double* resid_out) noexcept nogil:
    cdef int i, j, l, n_active, last_active, it, hv
    cdef int64_t a, fa, fb, fid
    cdef double rmin, S, r, rm, V0, V1, V2, total, ds, dsum0, dsum1, dsum2
    cdef double lam[3]
    cdef double r3[3]
    cdef double J[9]
    cdef double Jinv[9]
    cdef double A[9]
    cdef double M[9]
    cdef double step[3]
    cdef double trial[3]
    cdef double e, emax, Z, F, F_new, res, slack, alpha_ls, gws0, gws1, gws2, dx0, dx1, dx2
    cdef double* c

    # distances to each neighbour's support boundary
    for i in range(nn):
        a = nbrs[i]
        fa = fptr[a]
        fb = fptr[a + 1]
        rmin = INFINITY
        for l in range(fb - fa):
            fid = fidx[fa + l]
            c = cache + 4 * fid
            if stamp[fid] != tag:
                facet_rho(x, table + 16 * fid, alpha, k, c)
                stamp[fid] = tag
            if c[0] < rmin:
                rmin = c[0]
        gd[3 * i] = 0.0
        gd[3 * i + 1] = 0.0
        gd[3 * i + 2] = 0.0
        if fb == fa or rmin <= eps:
            d[i] = 0.0
            continue
        S = 0.0
        V0 = 0.0
        V1 = 0.0
        V2 = 0.0
        for l in range(fb - fa):
            c = cache + 4 * fidx[fa + l]
            r = rmin / c[0]
            rm = ipow(r, m)
            S += rm
            rm *= r
            V0 += rm * c[1]
            V1 += rm * c[2]
            V2 += rm * c[3]
        d[i] = rmin * S ** (-1.0 / m)
        S = S ** ((m + 1.0) / m)
        gd[3 * i] = V0 / S
        gd[3 * i + 1] = V1 / S
        gd[3 * i + 2] = V2 / S

    # prior weights
    total = 0.0
    dsum0 = 0.0
    dsum1 = 0.0
    dsum2 = 0.0
    for i in range(nn):
        ds = ipow(d[i], s)
        w[i] = ds
        total += ds
        ds = s * ipow(d[i], s - 1)
        gw[3 * i] = ds * gd[3 * i]
        gw[3 * i + 1] = ds * gd[3 * i + 1]
        gw[3 * i + 2] = ds * gd[3 * i + 2]
        dsum0 += gw[3 * i]
        dsum1 += gw[3 * i + 1]
        dsum2 += gw[3 * i + 2]
    if not (total > 0):
        return STATUS_DEGENERATE_POINT
    n_active = 0
    last_active = 0
    for i in range(nn):
        w[i] /= total
        gw[3 * i] = (gw[3 * i] - w[i] * dsum0) / total
        gw[3 * i + 1] = (gw[3 * i + 1] - w[i] * dsum1) / total
        gw[3 * i + 2] = (gw[3 * i + 2] - w[i] * dsum2) / total
        y[3 * i] = (x[0] - nodes[3 * nbrs[i]]) / h
        y[3 * i + 1] = (x[1] - nodes[3 * nbrs[i] + 1]) / h
        y[3 * i + 2] = (x[2] - nodes[3 * nbrs[i] + 2]) / h
        phi_out[i] = 0.0
        grad_out[3 * i] = 0.0
        grad_out[3 * i + 1] = 0.0
        grad_out[3 * i + 2] = 0.0
        if w[i] > 0:
            n_active += 1
            last_active = i
    if n_active == 1:
        phi_out[last_active] = 1.0
        iters_out[0] = 0
        resid_out[0] = sqrt(y[3 * last_active] ** 2 + y[3 * last_active + 1] ** 2
                            + y[3 * last_active + 2] ** 2)
        return STATUS_OK

    # damped Newton on ln Z in h-scaled coordinates
    lam[0] = 0.0
    lam[1] = 0.0
    lam[2] = 0.0
    F = log_partition(lam, y, w, nn)
    it = 0
    while True:
        emax = -INFINITY
        for i in range(nn):
            if w[i] > 0:
                e = lam[0] * y[3 * i] + lam[1] * y[3 * i + 1] + lam[2] * y[3 * i + 2]
                g[i] = e
                if e > emax:
                    emax = e
        Z = 0.0
        for i in range(nn):
            if w[i] > 0:
                g[i] = exp(g[i] - emax)
                Z += w[i] * g[i]
            else:
                g[i] = 0.0
        r3[0] = 0.0
        r3[1] = 0.0
        r3[2] = 0.0
        for i in range(nn):
            g[i] /= Z
            phi_out[i] = w[i] * g[i]
            for j in range(3):
                r3[j] += phi_out[i] * y[3 * i + j]
        res = sqrt(r3[0] * r3[0] + r3[1] * r3[1] + r3[2] * r3[2])
        if res <= tol:
            break
        if it >= max_iter:
            iters_out[0] = it
            resid_out[0] = res
            return STATUS_NOT_CONVERGED
        for j in range(9):
            J[j] = 0.0
        for i in range(nn):
            if phi_out[i] > 0:
                for j in range(3):
                    for l in range(3):
                        J[3 * j + l] += phi_out[i] * y[3 * i + j] * y[3 * i + l]
        for j in range(3):
            for l in range(3):
                J[3 * j + l] -= r3[j] * r3[l]
        if inv_regularised(J, Jinv):
            return STATUS_SINGULAR
        for j in range(3):
            step[j] = -(Jinv[3 * j] * r3[0] + Jinv[3 * j + 1] * r3[1] + Jinv[3 * j + 2] * r3[2])
        alpha_ls = 1.0
        slack = 1e-14 * (1.0 + fabs(F))
        for hv in range(MAX_HALVINGS + 1):
            if hv == MAX_HALVINGS:
                iters_out[0] = it
                resid_out[0] = res
                return STATUS_NOT_CONVERGED
            for j in range(3):
                trial[j] = lam[j] + alpha_ls * step[j]
            F_new = log_partition(trial, y, w, nn)
            if F_new <= F + slack:
                break
            alpha_ls *= 0.5
        for j in range(3):
            lam[j] = trial[j]
        F = F_new
        it += 1
    iters_out[0] = it
    resid_out[0] = res

    # gradients, in physical units
    for j in range(9):
        J[j] = 0.0
        A[j] = 0.0
    gws0 = 0.0
    gws1 = 0.0
    gws2 = 0.0
    for i in range(nn):
        dx0 = y[3 * i] * h
        dx1 = y[3 * i + 1] * h
        dx2 = y[3 * i + 2] * h
        if phi_out[i] > 0:
            J[0] += phi_out[i] * dx0 * dx0
            J[1] += phi_out[i] * dx0 * dx1
            J[2] += phi_out[i] * dx0 * dx2
            J[4] += phi_out[i] * dx1 * dx1
            J[5] += phi_out[i] * dx1 * dx2
            J[8] += phi_out[i] * dx2 * dx2
        # g * grad w, kept in gw
        gw[3 * i] *= g[i]
        gw[3 * i + 1] *= g[i]
        gw[3 * i + 2] *= g[i]
        gws0 += gw[3 * i]
        gws1 += gw[3 * i + 1]
        gws2 += gw[3 * i + 2]
        for j in range(3):
            A[3 * j] += gw[3 * i + j] * dx0
            A[3 * j + 1] += gw[3 * i + j] * dx1
            A[3 * j + 2] += gw[3 * i + j] * dx2
    J[3] = J[1]
    J[6] = J[2]
    J[7] = J[5]
    for j in range(3):
        for l in range(3):
            J[3 * j + l] -= r3[j] * r3[l] * h * h
    if inv_regularised(J, Jinv):
        return STATUS_SINGULAR
    A[0] += 1.0
    A[4] += 1.0
    A[8] += 1.0
    for j in range(3):
        for l in range(3):
            M[3 * j + l] = -(A[3 * j] * Jinv[l] + A[3 * j + 1] * Jinv[3 + l] + A[3 * j + 2] * Jinv[6 + l])
    for i in range(nn):
        dx0 = y[3 * i] * h
        dx1 = y[3 * i + 1] * h
        dx2 = y[3 * i + 2] * h
        grad_out[3 * i] = gw[3 * i] + phi_out[i] * (M[0] * dx0 + M[1] * dx1 + M[2] * dx2 - gws0)
        grad_out[3 * i + 1] = gw[3 * i + 1] + phi_out[i] * (M[3] * dx0 + M[4] * dx1 + M[5] * dx2 - gws1)
        grad_out[3 * i + 2] = gw[3 * i + 2] + phi_out[i] * (M[6] * dx0 + M[7] * dx1 + M[8] * dx2 - gws2)
    return STATUS_OK


cdef double log_partition(double* lam, double* y, double* w, int nn) noexcept nogil:
    cdef double emax = -INFINITY
    cdef double e, Z = 0.0
    cdef int i
    for i in range(nn):
        if w[i] > 0:
            e = lam[0] * y[3 * i] + lam[1] * y[3 * i + 1] + lam[2] * y[3 * i + 2]
            if e > emax:
                emax = e
    for i in range(nn):
        if w[i] > 0:
            e = lam[0] * y[3 * i] + lam[1] * y[3 * i + 1] + lam[2] * y[3 * i + 2]
            Z += w[i] * exp(e - emax)
    return emax + log(Z)


def basis_batch(points, h, nbr_ptr, nbr_idx, nodes, fac_ptr, fac_idx, table,
                int s, int m, double alpha, int k, double tol, int max_iter,
                double eps_ratio, int workers=1):
    """Basis values and gradients at many points (3D; 2D defers to NumPy)."""
    if points.shape[1] != 3:
        return _fallback.basis_batch(points, h, nbr_ptr, nbr_idx, nodes, fac_ptr, fac_idx,
                                     table, s, m, alpha, k, tol, max_iter, eps_ratio, workers)
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[::1] H = np.ascontiguousarray(h, dtype=np.float64)
    cdef int64_t[::1] NP = np.ascontiguousarray(nbr_ptr, dtype=np.int64)
    cdef int64_t[::1] NI = np.ascontiguousarray(nbr_idx, dtype=np.int64)
    cdef double[:, ::1] X = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef int64_t[::1] FP = np.ascontiguousarray(fac_ptr, dtype=np.int64)
    cdef int64_t[::1] FI = np.ascontiguousarray(fac_idx, dtype=np.int64)
    cdef double[:, ::1] T = np.ascontiguousarray(table, dtype=np.float64)
    cdef Py_ssize_t nq = P.shape[0]
    cdef Py_ssize_t nf = T.shape[0]
    cdef int nthreads = max(1, workers)
    cdef Py_ssize_t nnz = NP[nq]
    counts = np.diff(np.asarray(NP))
    cdef int maxn = int(counts.max()) if nq else 0

    phi_arr = np.zeros(nnz)
    grad_arr = np.zeros((nnz, 3))
    iters_arr = np.zeros(nq, dtype=np.int32)
    resid_arr = np.zeros(nq)
    status_arr = np.zeros(nq, dtype=np.int8)
    cdef double[::1] PHI = phi_arr
    cdef double[:, ::1] GR = grad_arr
    cdef int[::1] IT = iters_arr
    cdef double[::1] RS = resid_arr
    cdef int8_t[::1] ST = status_arr

    stamp_arr = np.full((nthreads, max(nf, 1)), -1, dtype=np.int64)
    cache_arr = np.zeros((nthreads, 4 * max(nf, 1)))
    work_arr = np.zeros((nthreads, 13 * max(maxn, 1)))
    cdef int64_t[:, ::1] STAMP = stamp_arr
    cdef double[:, ::1] CACHE = cache_arr
    cdef double[:, ::1] WORK = work_arr

    cdef Py_ssize_t q
    cdef int tid, nn
    cdef double* wk
    if nq == 0 or nnz == 0:
        return phi_arr, grad_arr, iters_arr, resid_arr, status_arr
    for q in prange(nq, nogil=True, num_threads=nthreads, schedule="dynamic", chunksize=16):
        tid = threadid()
        nn = <int>(NP[q + 1] - NP[q])
        wk = &WORK[tid, 0]
        ST[q] = basis_point(&P[q, 0], H[q], &NI[NP[q]], nn, &X[0, 0], &FP[0], &FI[0], &T[0, 0],
                            s, m, alpha, k, tol, max_iter, eps_ratio * H[q], q,
                            &STAMP[tid, 0], &CACHE[tid, 0],
                            wk, wk + maxn, wk + 4 * maxn, wk + 5 * maxn, wk + 8 * maxn,
                            wk + 11 * maxn,
                            &PHI[NP[q]], &GR[NP[q], 0], &IT[q], &RS[q])
    return phi_arr, grad_arr, iters_arr, resid_arr, status_arr


cdef inline double point_stress(const double* F, double lam, double mu, double* P,
                                double* W) noexcept nogil:
    """First Piola stress P = F S and energy density; returns det F."""
    cdef double C[9]
    cdef double Ci[9]
    cdef double S[9]
    cdef double J, detC, lnJ, trC
    cdef int i, j, l
    J = det3(<double*>F)
    if not (J > 0):
        return J
    for i in range(3):
        for j in range(3):
            C[3 * i + j] = F[i] * F[j] + F[3 + i] * F[3 + j] + F[6 + i] * F[6 + j]
    adj3(C, Ci)
    detC = J * J
    lnJ = log(J)
    trC = C[0] + C[4] + C[8]
    for i in range(9):
        Ci[i] /= detC
        S[i] = (lam * lnJ - mu) * Ci[i]
    S[0] += mu
    S[4] += mu
    S[8] += mu
    for i in range(3):
        for j in range(3):
            P[3 * i + j] = F[3 * i] * S[j] + F[3 * i + 1] * S[3 + j] + F[3 * i + 2] * S[6 + j]
    W[0] = 0.5 * mu * (trC - 3.0) - mu * lnJ + 0.5 * lam * lnJ * lnJ
    return J


cdef double force_point(const int64_t* idx, Py_ssize_t n, const double* dphi, const double* U,
                        double wq, double lam, double mu, double* out,
                        double* W) noexcept nogil:
    """Weighted first Piola stress of one point into ``out``; returns det F."""
    cdef double F[9]
    cdef double P[9]
    cdef Py_ssize_t e
    cdef int64_t b
    cdef int i
    cdef double J
    F[0] = 1.0
    F[1] = 0.0
    F[2] = 0.0
    F[3] = 0.0
    F[4] = 1.0
    F[5] = 0.0
    F[6] = 0.0
    F[7] = 0.0
    F[8] = 1.0
    for e in range(n):
        b = idx[e]
        for i in range(3):
            F[3 * i] += U[3 * b + i] * dphi[3 * e]
            F[3 * i + 1] += U[3 * b + i] * dphi[3 * e + 1]
            F[3 * i + 2] += U[3 * b + i] * dphi[3 * e + 2]
    J = point_stress(F, lam, mu, P, W)
    for i in range(9):
        out[i] = wq * P[i]
    return J


cdef class ForceOperator:
    """Internal forces from cached reference gradients."""

    cdef int64_t[::1] ptr
    cdef int64_t[::1] idx
    cdef double[:, ::1] dphi
    cdef double[::1] weights
    cdef public int n_nodes
    cdef public int workers
    cdef double[:, ::1] buf

    def __init__(self, nbr_ptr, nbr_idx, dphi, weights, n_nodes, workers=1):
        self.ptr = np.ascontiguousarray(nbr_ptr, dtype=np.int64)
        self.idx = np.ascontiguousarray(nbr_idx, dtype=np.int64)
        self.dphi = np.ascontiguousarray(dphi, dtype=np.float64)
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self.n_nodes = n_nodes
        self.workers = max(1, workers)
        self.buf = np.zeros((self.weights.shape[0], 9))

    def deformation_gradient(self, u):
        cdef double[:, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
        cdef Py_ssize_t nq = self.weights.shape[0]
        out = np.zeros((nq, 3, 3))
        cdef double[:, :, ::1] Fv = out
        cdef Py_ssize_t q, e
        cdef int i, j
        cdef int64_t b
        for q in range(nq):
            Fv[q, 0, 0] = 1.0
            Fv[q, 1, 1] = 1.0
            Fv[q, 2, 2] = 1.0
            for e in range(self.ptr[q], self.ptr[q + 1]):
                b = self.idx[e]
                for i in range(3):
                    for j in range(3):
                        Fv[q, i, j] += U[b, i] * self.dphi[e, j]
        return out

    def forces(self, u, double lam, double mu):
        """Return ``(f_int, W, min det F, offending point or -1)``."""
        cdef double[:, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
        cdef Py_ssize_t nq = self.weights.shape[0]
        f_arr = np.zeros((self.n_nodes, 3))
        W_arr = np.zeros(nq)
        J_arr = np.zeros(nq)
        cdef double[:, ::1] f = f_arr
        cdef double[::1] Wv = W_arr
        cdef double[::1] Jv = J_arr
        cdef double[:, ::1] buf = self.buf
        cdef Py_ssize_t q, e
        cdef int64_t b
        cdef int i
        cdef double g0, g1, g2
        if nq == 0:
            return f_arr, W_arr, 1.0, -1
        for q in prange(nq, nogil=True, num_threads=self.workers, schedule="static"):
            Jv[q] = force_point(&self.idx[self.ptr[q]], self.ptr[q + 1] - self.ptr[q],
                                &self.dphi[self.ptr[q], 0], &U[0, 0], self.weights[q],
                                lam, mu, &buf[q, 0], &Wv[q])
        jmin = float(J_arr.min()) if nq else 1.0
        if not jmin > 0:
            return None, None, jmin, int(np.argmin(J_arr))
        # fixed-order scatter keeps the sum independent of the worker count
        with nogil:
            for q in range(nq):
                for e in range(self.ptr[q], self.ptr[q + 1]):
                    b = self.idx[e]
                    g0 = self.dphi[e, 0]
                    g1 = self.dphi[e, 1]
                    g2 = self.dphi[e, 2]
                    for i in range(3):
                        f[b, i] += buf[q, 3 * i] * g0 + buf[q, 3 * i + 1] * g1 + buf[q, 3 * i + 2] * g2
        return f_arr, W_arr, jmin, -1


def make_force_operator(nbr_ptr, nbr_idx, dphi, weights, n_nodes, workers=1):
    return ForceOperator(nbr_ptr, nbr_idx, dphi, weights, n_nodes, workers)
