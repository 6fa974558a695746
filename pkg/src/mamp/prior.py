"""Bernoulli-Gaussian prior, its MMSE denoiser and the orthogonalized NLE."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels

DEFAULT_MC_SAMPLES = 10**6


@dataclass(frozen=True)
class BernoulliGaussianPrior:
    """x_i = 0 w.p. 1 - mu, else CN(0, 1/mu); unit signal power."""

    mu: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")

    @property
    def slab_variance(self) -> float:
        return 1.0 / self.mu

    @property
    def is_gaussian(self) -> bool:
        return self.mu == 1.0


@dataclass(frozen=True)
class DenoiserStats:
    v_in: float
    mmse: float
    eps_phi: float
    v_out: float


def complex_normal(rng, size, var=1.0):
    return np.sqrt(var / 2.0) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_signal(prior: BernoulliGaussianPrior, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    support = rng.random(n) < prior.mu
    return np.where(support, complex_normal(rng, n, prior.slab_variance), 0.0)


def matched_signal(prior: BernoulliGaussianPrior, n: int, rng) -> np.ndarray:
    """Monte-Carlo signal bank with support fraction and power fixed exactly.

    ``round(mu n)`` nonzeros at random positions, slab rescaled so that
    ``mean |x|^2 == 1``. Used only inside scalar-channel estimators.
    """
    k = max(1, int(round(prior.mu * n)))
    x = np.zeros(n, dtype=np.complex128)
    slab = complex_normal(rng, k)
    slab *= np.sqrt(n / np.vdot(slab, slab).real)
    x[rng.permutation(n)[:k]] = slab
    return x


def _check_v(v):
    if not v > 0:
        raise ValueError(f"noise variance must be positive, got {v}")


def denoise(prior: BernoulliGaussianPrior, r, v):
    """Posterior mean E[x | r] for r = x + CN(0, v), entry-wise."""
    _check_v(v)
    if prior.is_gaussian:
        return np.asarray(r) / (1.0 + v)
    return kernels.bg_mean(r, v, prior.mu)


def posterior(prior: BernoulliGaussianPrior, r, v):
    """Posterior mean and variance, entry-wise."""
    _check_v(v)
    if prior.is_gaussian:
        r = np.asarray(r)
        return r / (1.0 + v), np.full(r.shape, v / (1.0 + v))
    return kernels.bg_posterior(r, v, prior.mu)


def _posterior_variance_radial(rho, v, mu):
    # posterior variance as a function of |r|^2 (real-valued path)
    s = 1.0 / mu
    c = s + v
    logit = np.log(mu) - np.log1p(-mu) + np.log(v / c) + rho * (1.0 / v - 1.0 / c)
    pi = 0.5 * (1.0 + np.tanh(0.5 * logit))
    gain = s / c
    return pi * (s * v / c) + pi * (1.0 - pi) * gain * gain * rho


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


@lru_cache(maxsize=4096)
def _mmse_quadrature(mu, v):
    s = 1.0 / mu
    c = s + v
    slope = 1.0 / v - 1.0 / c
    rho_star = max(0.0, -(np.log(mu) - np.log1p(-mu) + np.log(v / c)) / slope)
    total = 0.0
    # |r|^2 is exponential with mean s + v (on support) or v (off support);
    # integrate u = |r|^2 / scale against exp(-u) with panels packed around
    # the switch of the posterior weight.
    for weight, scale in ((mu, c), (1.0 - mu, v)):
        u_star = rho_star / scale
        width = 1.0 / (slope * scale)
        upper = max(80.0, u_star + 80.0)
        brk = np.concatenate([
            np.arange(0.0, upper, 2.0),
            u_star + width * np.arange(-12, 13),
            u_star * np.array([0.25, 0.5, 0.75]),
            [upper],
        ])
        brk = np.unique(brk[(brk >= 0.0) & (brk <= upper)])
        lo, hi = brk[:-1, None], brk[1:, None]
        u = 0.5 * (hi - lo) * _GL_NODES[None, :] + 0.5 * (hi + lo)
        f = _posterior_variance_radial(scale * u, v, mu) * np.exp(-u)
        total += weight * float(np.sum(0.5 * (hi - lo) * _GL_WEIGHTS[None, :] * f))
    return total


def mmse_eval(prior: BernoulliGaussianPrior, v, quality="quadrature", seed=0):
    """Scalar-channel MMSE ``E|E[x|x+eta] - x|^2`` with eta ~ CN(0, v).

    ``quality`` is ``"quadrature"`` (radial Gauss-Kronrod over |r|^2, the
    default) or an integer Monte-Carlo sample count drawn from ``seed``.
    """
    _check_v(v)
    if prior.is_gaussian:
        return v / (1.0 + v)
    if quality == "quadrature":
        return float(_mmse_quadrature(float(prior.mu), float(v)))
    rng = np.random.default_rng(seed)
    n = int(quality)
    x = sample_signal(prior, n, rng)
    r = x + complex_normal(rng, n, v)
    e = denoise(prior, r, v) - x
    return float(np.mean(e.real**2 + e.imag**2))


def orthogonal_nle(prior: BernoulliGaussianPrior, r, v, mmse=None):
    """Divergence-free denoiser ``[phi_hat(r) + (eps - 1) r] / eps``.

    ``eps = 1 - mmse(v) / v``. Pass ``mmse`` to reuse a precomputed value.
    """
    _check_v(v)
    if mmse is None:
        mmse = mmse_eval(prior, v)
    eps = 1.0 - mmse / v
    if not eps > 0:
        raise ValueError(f"mmse {mmse:.6g} >= input variance {v:.6g}; orthogonalization undefined")
    r = np.asarray(r)
    x_out = (denoise(prior, r, v) + (eps - 1.0) * r) / eps
    return x_out, DenoiserStats(v_in=v, mmse=mmse, eps_phi=eps, v_out=v * (1.0 / eps - 1.0))


def _channel_estimate(prior, r, v, mode, estimator):
    if mode == "pseudo_zero":
        return np.zeros_like(r)
    if mode != "denoiser":
        raise ValueError(f"unknown channel mode {mode!r}")
    if estimator == "posterior":
        return denoise(prior, r, v)
    if estimator == "orthogonal":
        return orthogonal_nle(prior, r, v)[0]
    raise ValueError(f"unknown estimator {estimator!r}")


def nle_cross_mse(
    prior: BernoulliGaussianPrior,
    v_aa,
    v_bb,
    v_ab,
    mode=("denoiser", "denoiser"),
    quality=DEFAULT_MC_SAMPLES,
    seed=0,
    estimator="posterior",
):
    """``E{[phi_a(x + eta_a) - x]^* [phi_b(x + eta_b) - x]}`` over a joint channel.

    ``(eta_a, eta_b)`` are circular Gaussian with real covariance
    ``[[v_aa, v_ab], [v_ab, v_bb]]``. A channel in ``"pseudo_zero"`` mode uses
    the constant-zero estimate (error ``-x``) and ignores its variance.
    ``estimator`` picks the plain posterior mean (default) or the
    orthogonalized NLE.
    """
    if isinstance(mode, str):
        mode = (mode, mode)
    tol = 1e-12 * max(abs(v_aa), abs(v_bb), 1.0)
    if v_aa < -tol or v_bb < -tol or v_ab**2 > v_aa * v_bb + tol:
        raise ValueError(f"channel covariance [[{v_aa}, {v_ab}], [{v_ab}, {v_bb}]] is not PSD")
    rng = np.random.default_rng(seed)
    n = int(quality)
    x = matched_signal(prior, n, rng)
    z1 = complex_normal(rng, n)
    z2 = complex_normal(rng, n)
    sa = np.sqrt(max(v_aa, 0.0))
    eta_a = sa * z1
    if sa > 0:
        rho = v_ab / sa
        eta_b = rho * z1 + np.sqrt(max(v_bb - rho * rho, 0.0)) * z2
    else:
        eta_b = np.sqrt(max(v_bb, 0.0)) * z2
    ea = _channel_estimate(prior, x + eta_a, v_aa, mode[0], estimator) - x
    eb = _channel_estimate(prior, x + eta_b, v_bb, mode[1], estimator) - x
    # imaginary part is pure Monte-Carlo noise for real channel correlations
    return float(np.vdot(ea, eb).real / n)
