"""MAMP relaxation schedule (theta, xi, vartheta, p, eps) and optimal damping.

Iterations are numbered from 1 in the public functions; row ``t - 1`` of the
arrays belongs to iteration ``t``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

RIDGE = 1e-9


class ScheduleError(ArithmeticError):
    pass


class DampingError(ArithmeticError):
    pass


@dataclass
class MampSchedule:
    t_max: int
    theta: np.ndarray = None
    xi: np.ndarray = None
    vartheta: np.ndarray = None
    p: np.ndarray = None
    eps: np.ndarray = None
    zeta: list = field(default_factory=list)
    t: int = 0

    def __post_init__(self):
        T = self.t_max
        self.theta = np.zeros(T)
        self.xi = np.zeros(T)
        self.vartheta = np.zeros((T, T))
        self.p = np.zeros((T, T))
        self.eps = np.zeros(T)

    def damping_length(self, t, L):
        return min(L, t + 1)


def theta_opt(table, sigma2, v_phi_tt):
    """Spectral-radius minimizing relaxation ``1 / (lambda_dagger + sigma2 / v)``."""
    return 1.0 / (table.lambda_dagger + sigma2 / v_phi_tt)


def xi_coefficients(table, schedule, V_phibar, t, sigma2):
    """(c0, c1, c2, c3) of the quadratic-over-square form of ``v^gamma_tt(xi)``.

    Expects ``theta_t`` already folded into row ``t`` of ``vartheta``.
    """
    k = t - 1
    w, wbar = table.w, table.wbar
    V = np.real(V_phibar)
    th = schedule.vartheta[k, :k]
    lag = k - np.arange(k)
    c0 = float(np.dot(th, w[lag])) / w[0]
    c1 = sigma2 * w[0] + V[k, k] * wbar[0, 0]
    c2 = -float(np.dot(th, sigma2 * w[lag] + V[k, :k] * wbar[0, lag]))
    inner = sigma2 * w[lag[:, None] + lag[None, :]] + V[:k, :k] * wbar[lag[:, None], lag[None, :]]
    c3 = float(th @ inner @ th)
    return c0, c1, c2, c3


def gamma_variance_of_xi(coeffs, xi, w0):
    c0, c1, c2, c3 = coeffs
    return (c1 * xi**2 - 2.0 * c2 * xi + c3) / (w0**2 * (xi + c0) ** 2)


def mamp_step_schedule(table, V_phibar, schedule: MampSchedule, t, sigma2):
    """Fill row ``t`` of the schedule from the current error covariance.

    Needs ``V_phibar`` up to index ``t`` (entries ``v_ij`` for ``i, j <= t``).
    Returns ``(theta_t, xi_t, eps_t)``.
    """
    if t != schedule.t + 1:
        raise ScheduleError(f"schedule holds {schedule.t} rows, cannot fill row {t}")
    table.check_order(t - 1)
    k = t - 1
    v_tt = float(np.real(V_phibar[k, k]))
    if not v_tt > 0:
        raise ScheduleError(f"v_phibar[{t},{t}] = {v_tt:.3g} must be positive")
    theta = theta_opt(table, sigma2, v_tt)
    if k:
        schedule.vartheta[k, :k] = theta * schedule.vartheta[k - 1, :k]
    if t == 1:
        xi = 1.0
    else:
        c0, c1, c2, c3 = xi_coefficients(table, schedule, V_phibar, t, sigma2)
        den = c1 * c0 + c2
        num = c2 * c0 + c3
        if abs(den) <= 1e-14 * (abs(c1 * c0) + abs(c2) + 1e-300):
            # with no memory terms (B = 0) v^gamma_tt does not depend on xi
            if abs(num) > 1e-14 * (abs(c2 * c0) + abs(c3)) and abs(num) > 1e-300:
                warnings.warn(f"xi denominator vanishes at t={t}; using xi=1", RuntimeWarning)
            else:
                log.debug("xi is free at t=%d; using xi=1", t)
            xi = 1.0
        else:
            xi = num / den
    schedule.vartheta[k, k] = xi
    lag = k - np.arange(k + 1)
    schedule.p[k, : k + 1] = schedule.vartheta[k, : k + 1] * table.w[lag]
    eps = float(schedule.p[k, : k + 1].sum())
    if eps == 0.0 or not np.isfinite(eps):
        raise ScheduleError(f"normalization eps_{t} = {eps}")
    schedule.theta[k] = theta
    schedule.xi[k] = xi
    schedule.eps[k] = eps
    schedule.t = t
    return theta, xi, eps


def optimal_damping(V, ridge=RIDGE):
    """Weights ``V^-1 1 / (1^T V^-1 1)`` minimizing ``zeta^T V zeta`` on the simplex plane.

    A relative ridge keeps rank-deficient windows finite. If rounding leaves
    the combined variance above the best single entry, that entry is used.
    """
    V = np.real(0.5 * (np.asarray(V) + np.conj(np.asarray(V)).T))
    l = V.shape[0]
    if l == 1:
        return np.ones(1)
    scale = float(np.mean(np.diag(V)))
    if not scale > 0:
        raise DampingError("window covariance has no positive variance")
    Vr = V + ridge * scale * np.eye(l)
    try:
        z = np.linalg.solve(Vr, np.ones(l))
    except np.linalg.LinAlgError:
        z = np.linalg.lstsq(Vr, np.ones(l), rcond=None)[0]
    den = z.sum()
    if not (np.isfinite(den) and den > 0):
        raise DampingError(f"1^T V^-1 1 = {den} after regularization")
    zeta = z / den
    diag = np.diag(V)
    if zeta @ V @ zeta > diag.min():
        best = l - 1 - int(np.argmin(diag[::-1]))
        log.debug("damping fell back to unit weight on entry %d", best)
        zeta = np.zeros(l)
        zeta[best] = 1.0
    return zeta
