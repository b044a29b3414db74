# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled alternating-projection kernels.

Every absorbed block (a categorical effect, or per-unit polynomial trends)
is stored as group codes plus a per-row orthonormal basis ``Q``: within each
group the columns of ``Q`` are orthonormal, so the projection onto the block
is ``x -> Q_g (Q_g' x_g)``.  Plain group demeaning is the one-column case
``Q = 1/sqrt(n_g)``.

Signatures match :mod:`agrilend.panel._fallback` exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

ctypedef cnp.intp_t intp


cdef void _project_out(double* x, const intp* codes, const double[:, ::1] Q,
                       Py_ssize_t col0, Py_ssize_t p, Py_ssize_t n_groups,
                       Py_ssize_t n, double* work) noexcept nogil:
    cdef Py_ssize_t i, j, g
    cdef double s, xi
    for i in range(n_groups * p):
        work[i] = 0.0
    if p == 1:
        for i in range(n):
            work[codes[i]] += Q[i, col0] * x[i]
        for i in range(n):
            x[i] -= Q[i, col0] * work[codes[i]]
        return
    for i in range(n):
        g = codes[i] * p
        xi = x[i]
        for j in range(p):
            work[g + j] += Q[i, col0 + j] * xi
    for i in range(n):
        g = codes[i] * p
        s = 0.0
        for j in range(p):
            s += Q[i, col0 + j] * work[g + j]
        x[i] -= s


def project_out(double[::1] x, const intp[:, ::1] codes, const double[:, ::1] Q,
                const intp[::1] offsets, const intp[::1] n_groups, Py_ssize_t block):
    """Remove the projection of ``x`` onto one absorbed block, in place."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t p = offsets[block + 1] - offsets[block]
    cdef double[::1] work = np.empty(max(1, n_groups[block] * p))
    with nogil:
        _project_out(&x[0], &codes[block, 0], Q, offsets[block], p,
                     n_groups[block], n, &work[0])


def map_column(double[::1] x, const intp[:, ::1] codes, const double[:, ::1] Q,
               const intp[::1] offsets, const intp[::1] n_groups,
               double tol, Py_ssize_t max_sweeps, double[::1] history):
    """Cycle projections over all blocks until the sweep change is below ``tol``.

    The change is ``max_i |x_new - x_old|`` divided by the starting
    ``max_i |x|``.  ``history[s]`` receives ``sum(x**2)`` after sweep ``s``.
    Returns ``(sweeps, last_change)``.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t n_blocks = codes.shape[0]
    cdef Py_ssize_t i, b, sweep = 0, wsize = 1
    cdef double scale = 0.0, change = 0.0, d, ss
    for b in range(n_blocks):
        wsize = max(wsize, n_groups[b] * (offsets[b + 1] - offsets[b]))
    cdef double[::1] work = np.empty(wsize)
    cdef double[::1] prev = np.empty(max(n, 1))
    if n == 0 or n_blocks == 0:
        return 0, 0.0
    with nogil:
        for i in range(n):
            if fabs(x[i]) > scale:
                scale = fabs(x[i])
        if scale == 0.0:
            scale = 1.0
        while sweep < max_sweeps:
            for i in range(n):
                prev[i] = x[i]
            for b in range(n_blocks):
                _project_out(&x[0], &codes[b, 0], Q, offsets[b],
                             offsets[b + 1] - offsets[b], n_groups[b], n, &work[0])
            change = 0.0
            ss = 0.0
            for i in range(n):
                d = fabs(x[i] - prev[i])
                if d > change:
                    change = d
                ss += x[i] * x[i]
            change /= scale
            if sweep < history.shape[0]:
                history[sweep] = ss
            sweep += 1
            if change < tol:
                break
    return sweep, change
