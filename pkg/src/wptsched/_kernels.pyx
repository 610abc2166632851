# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: log-domain Bessel evaluation and the estimate-power
transition density. API matches ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, lgamma, fabs, INFINITY, M_PI

cnp.import_array()

DEF SERIES_TOL = 1e-17
DEF MAX_TERMS = 2000

SWITCH_ARG = 30.0
MAX_SWITCH_ARG = 600.0


cdef inline double _switch_arg(double nu) nogil:
    cdef double s = nu * nu
    if s < 30.0:
        s = 30.0
    if s > 600.0:
        s = 600.0
    return s


def switch_arg(double nu):
    return _switch_arg(nu)


cdef inline double _log_series(double nu, double y) nogil:
    cdef double term = 1.0, total = 1.0
    cdef int j = 0
    while j < MAX_TERMS:
        term = term * y / ((j + 1.0) * (j + nu + 1.0))
        total += term
        j += 1
        if term <= SERIES_TOL * total:
            break
    return log(total) - lgamma(nu + 1.0)


cdef inline double _log_asymptotic(double nu, double z) nogil:
    cdef double mu = 4.0 * nu * nu
    cdef double total = 1.0, term = 1.0, new, prev = INFINITY
    cdef int k
    for k in range(1, 200):
        new = -term * (mu - (2 * k - 1) * (2 * k - 1)) / (k * 8.0 * z)
        if fabs(new) >= prev:
            break
        term = new
        total += new
        prev = fabs(new)
        if fabs(new) <= SERIES_TOL * fabs(total):
            break
    return z - 0.5 * log(2.0 * M_PI * z) + log(total)


cdef inline double _log_scaled_bessel(double nu, double y) nogil:
    cdef double z = 2.0 * sqrt(y)
    if z >= _switch_arg(nu):
        return _log_asymptotic(nu, z) - nu * log(0.5 * z)
    return _log_series(nu, y)


def log_scaled_bessel(double nu, y):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.atleast_1d(
        np.ascontiguousarray(y, dtype=np.float64)).ravel()
    cdef Py_ssize_t i, n = ya.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    with nogil:
        for i in range(n):
            out[i] = _log_scaled_bessel(nu, ya[i])
    return out


def log_bessel_i(double nu, x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.atleast_1d(
        np.ascontiguousarray(x, dtype=np.float64)).ravel()
    cdef Py_ssize_t i, n = xa.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef double lead
    with nogil:
        for i in range(n):
            if nu > 0:
                if xa[i] == 0.0:
                    out[i] = -INFINITY
                    continue
                lead = nu * log(0.5 * xa[i])
            else:
                lead = 0.0
            out[i] = lead + _log_scaled_bessel(nu, 0.25 * xa[i] * xa[i])
    return out


def transition_params(int k, int m, double noise_var):
    cdef double s = m * noise_var
    return (k * (k + 1 + s) / ((k + 1) * (k + s)),
            s * (k + 1 + s) / ((k + 1.0) * (k + 1.0) * (k + s)))


def transition_density(v_from, v_to, int k, int m, double noise_var):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vf = np.ascontiguousarray(
        v_from, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vt = np.ascontiguousarray(
        v_to, dtype=np.float64).ravel()
    cdef Py_ssize_t i, j, nf = vf.shape[0], nt = vt.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((nf, nt))
    cdef double s = m * noise_var
    cdef double mean_scale = k * (k + 1 + s) / ((k + 1) * (k + s))
    cdef double var = s * (k + 1 + s) / ((k + 1.0) * (k + 1.0) * (k + s))
    cdef double nu = m - 1.0, lvar = log(var)
    cdef double theta, t, logf, sq
    with nogil:
        for i in range(nf):
            theta = 2.0 * mean_scale * mean_scale * vf[i] / var
            sq = sqrt(0.5 * theta)
            for j in range(nt):
                t = vt[j] / var
                # the exponent is at most -(sqrt t - sqrt(theta/2))^2 plus
                # slowly varying terms; skip hopeless entries
                if (sqrt(t) - sq) * (sqrt(t) - sq) > 800.0:
                    out[i, j] = 0.0
                    continue
                if t == 0.0:
                    if nu > 0:
                        out[i, j] = 0.0
                        continue
                    logf = -lvar - 0.5 * theta - lgamma(nu + 1.0)
                else:
                    logf = (-lvar - t - 0.5 * theta + nu * log(t)
                            + _log_scaled_bessel(nu, 0.5 * theta * t))
                out[i, j] = exp(logf)
    return out
