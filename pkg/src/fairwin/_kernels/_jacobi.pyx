# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled one-sided Jacobi sweeps. Same contract as ``_jacobi_py``."""
from libc.math cimport fabs, sqrt, copysign


cdef inline double _dot(double[:, ::1] a, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    for k in range(a.shape[1]):
        acc += a[i, k] * a[j, k]
    return acc


cdef inline void _rotate(double[:, ::1] a, Py_ssize_t p, Py_ssize_t q,
                         double c, double s) noexcept nogil:
    cdef Py_ssize_t k
    cdef double x, y
    for k in range(a.shape[1]):
        x = a[p, k]
        y = a[q, k]
        a[p, k] = c * x - s * y
        a[q, k] = s * x + c * y


def jacobi_sweeps(double[:, ::1] cols, double[:, ::1] vcols, double tol, int max_sweeps,
                  double floor=0.0):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t p, q
    cdef int sweep
    cdef bint rotated
    cdef int result = -1
    cdef double alpha, beta, gamma, zeta, t, c, s
    with nogil:
        for sweep in range(1, max_sweeps + 1):
            rotated = False
            for p in range(n - 1):
                for q in range(p + 1, n):
                    alpha = _dot(cols, p, p)
                    beta = _dot(cols, q, q)
                    gamma = _dot(cols, p, q)
                    if gamma == 0.0 or alpha <= floor or beta <= floor or fabs(gamma) <= tol * sqrt(alpha) * sqrt(beta):
                        continue
                    rotated = True
                    zeta = (beta - alpha) / (2.0 * gamma)
                    t = copysign(1.0, zeta) / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = c * t
                    _rotate(cols, p, q, c, s)
                    _rotate(vcols, p, q, c, s)
            if not rotated:
                result = sweep
                break
    return result
