"""Pure-numpy versions of the compiled posterior kernels."""
import numpy as np
from scipy.special import expit


def _logit(r, v, mu):
    s = 1.0 / mu
    c = s + v
    base = np.log(mu) - np.log1p(-mu) + np.log(v / c)
    a = r.real**2 + r.imag**2
    return base + a * (1.0 / v - 1.0 / c), s / c, s * v / c, a


def bg_posterior(r, v, mu):
    logit, gain, pvar, a = _logit(r, v, mu)
    pi = expit(logit)
    mean = (pi * gain) * r
    var = pi * pvar + pi * (1.0 - pi) * (gain * gain * a)
    return mean, var


def bg_mean(r, v, mu):
    logit, gain, _, _ = _logit(r, v, mu)
    return (expit(logit) * gain) * r
