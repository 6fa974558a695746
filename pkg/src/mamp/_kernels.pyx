"""Compiled Bernoulli-Gaussian posterior kernels.

Both routines take the slab variance ``s = 1/mu`` implicitly through ``mu``
and evaluate the posterior weight in the log domain.
"""
import numpy as np

from libc.math cimport exp, log, log1p


cdef inline double _weight(double logit) nogil:
    cdef double e
    if logit >= 0.0:
        return 1.0 / (1.0 + exp(-logit))
    e = exp(logit)
    return e / (1.0 + e)


def bg_posterior(const double complex[::1] r, double v, double mu):
    """Posterior mean and variance of x given r = x + CN(0, v), 0 < mu < 1."""
    cdef Py_ssize_t i, n = r.shape[0]
    mean = np.empty(n, dtype=np.complex128)
    var = np.empty(n, dtype=np.float64)
    cdef double complex[::1] mv = mean
    cdef double[::1] vv = var
    cdef double s = 1.0 / mu
    cdef double c = s + v
    cdef double gain = s / c
    cdef double pvar = s * v / c
    cdef double base = log(mu) - log1p(-mu) + log(v / c)
    cdef double slope = 1.0 / v - 1.0 / c
    cdef double re, im, a, pi, m2
    with nogil:
        for i in range(n):
            re = r[i].real
            im = r[i].imag
            a = re * re + im * im
            pi = _weight(base + a * slope)
            m2 = gain * gain * a
            mv[i] = (pi * gain) * r[i]
            vv[i] = pi * pvar + pi * (1.0 - pi) * m2
    return mean, var


def bg_mean(const double complex[::1] r, double v, double mu):
    """Posterior mean only (skips the variance pass)."""
    cdef Py_ssize_t i, n = r.shape[0]
    mean = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] mv = mean
    cdef double s = 1.0 / mu
    cdef double c = s + v
    cdef double gain = s / c
    cdef double base = log(mu) - log1p(-mu) + log(v / c)
    cdef double slope = 1.0 / v - 1.0 / c
    cdef double re, im
    with nogil:
        for i in range(n):
            re = r[i].real
            im = r[i].imag
            mv[i] = (_weight(base + (re * re + im * im) * slope) * gain) * r[i]
    return mean
