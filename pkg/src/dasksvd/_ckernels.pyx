# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled OMP kernel.

Mirrors ``dasksvd._pykernels.omp_batch`` step for step; see that module
for the algorithm description.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def omp_batch(const double[:, ::1] atoms_t,
              const double[:, ::1] gram,
              const double[:, ::1] signals_t,
              const double[:, ::1] corr0,
              int q,
              double res_tol,
              double cond_max):
    cdef Py_ssize_t n = signals_t.shape[0]
    cdef Py_ssize_t dim = signals_t.shape[1]
    cdef Py_ssize_t m = atoms_t.shape[0]

    support_arr = np.full((n, q), -1, dtype=np.intp)
    coef_arr = np.zeros((n, q), dtype=np.float64)
    resid_arr = np.zeros(n, dtype=np.float64)
    cdef Py_ssize_t[:, ::1] support = support_arr
    cdef double[:, ::1] coef = coef_arr
    cdef double[::1] resid = resid_arr

    cdef double[::1] alpha = np.empty(m, dtype=np.float64)
    cdef char[::1] used = np.zeros(m, dtype=np.int8)
    cdef double[:, ::1] chol = np.zeros((q, q), dtype=np.float64)
    cdef double[::1] w = np.empty(q, dtype=np.float64)
    cdef double[::1] c = np.empty(q, dtype=np.float64)
    cdef double[::1] r = np.empty(dim, dtype=np.float64)
    cdef Py_ssize_t[::1] sel = np.empty(q, dtype=np.intp)

    cdef Py_ssize_t i, j, k, a, b, best, nsel
    cdef double val, best_val, s, d, rn, dmax, dmin, diag

    for i in range(n):
        for j in range(m):
            alpha[j] = corr0[i, j]
            used[j] = 0
        rn = 0.0
        for a in range(dim):
            r[a] = signals_t[i, a]
            rn += r[a] * r[a]
        rn = sqrt(rn)
        nsel = 0
        dmax = 0.0
        dmin = 0.0

        for k in range(q):
            if rn <= res_tol:
                break
            best = -1
            best_val = 0.0
            for j in range(m):
                if used[j]:
                    continue
                val = fabs(alpha[j])
                if val > best_val:
                    best_val = val
                    best = j
            if best < 0:
                break

            # Cholesky update of the Gram matrix restricted to the support
            for a in range(k):
                s = gram[sel[a], best]
                for b in range(a):
                    s -= chol[a, b] * w[b]
                w[a] = s / chol[a, a]
            d = gram[best, best]
            for a in range(k):
                d -= w[a] * w[a]
            if d <= 0.0:
                break
            diag = sqrt(d)
            if k == 0:
                dmax = diag
                dmin = diag
            else:
                if diag > dmax:
                    val = diag
                else:
                    val = dmax
                if diag < dmin:
                    s = diag
                else:
                    s = dmin
                if (val / s) * (val / s) > cond_max:
                    break
                dmax = val
                dmin = s
            for a in range(k):
                chol[k, a] = w[a]
            chol[k, k] = diag
            sel[k] = best
            used[best] = 1
            nsel = k + 1

            # solve L L^T c = corr0[support]
            for a in range(nsel):
                s = corr0[i, sel[a]]
                for b in range(a):
                    s -= chol[a, b] * c[b]
                c[a] = s / chol[a, a]
            for a in range(nsel - 1, -1, -1):
                s = c[a]
                for b in range(a + 1, nsel):
                    s -= chol[b, a] * c[b]
                c[a] = s / chol[a, a]

            rn = 0.0
            for a in range(dim):
                s = signals_t[i, a]
                for b in range(nsel):
                    s -= c[b] * atoms_t[sel[b], a]
                r[a] = s
                rn += s * s
            rn = sqrt(rn)

            for j in range(m):
                s = corr0[i, j]
                for b in range(nsel):
                    s -= gram[j, sel[b]] * c[b]
                alpha[j] = s

        for b in range(nsel):
            support[i, b] = sel[b]
            coef[i, b] = c[b]
        resid[i] = rn

    return support_arr, coef_arr, resid_arr
