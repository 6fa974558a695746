"""State evolution: scalar recursion for OAMP/VAMP, covariance recursion for MAMP.

The MAMP recursion has two halves. The linear half (``mamp_se_gamma``) is
closed form in the spectral moments. The nonlinear half (``mamp_se_phi``)
needs cross-MSEs between denoisers fed by correlated Gaussian channels; these
come from a bank of jointly simulated scalar channels that keeps every
channel's error samples, so the resulting covariance matrices are exact Gram
matrices and stay PSD.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, NamedTuple

import numpy as np

from .prior import complex_normal, denoise, matched_signal, mmse_eval
from .schedule import RIDGE, MampSchedule, mamp_step_schedule, optimal_damping

DEFAULT_BANK_SAMPLES = 2**16


# ---------------------------------------------------------------- OAMP/VAMP


def lmmse_eps(table, rho):
    """``(1/N) tr{A^H (rho I + A A^H)^-1 A}`` from the spectrum."""
    eig = table.eigenvalues
    return float(np.sum(eig / (rho + eig)) / table.n)


class OampSERecord(NamedTuple):
    v_phi: float
    rho: float
    eps_gamma: float
    v_gamma: float
    mmse: float
    eps_phi: float
    v_phi_next: float


def oamp_se_record(table, prior, sigma2, v_phi) -> OampSERecord:
    if not v_phi > 0:
        raise ValueError(f"v_phi must be positive, got {v_phi}")
    rho = sigma2 / v_phi
    eps_g = lmmse_eps(table, rho)
    v_gamma = v_phi * (1.0 / eps_g - 1.0)
    mmse = mmse_eval(prior, v_gamma)
    eps_phi = 1.0 - mmse / v_gamma
    return OampSERecord(v_phi, rho, eps_g, v_gamma, mmse, eps_phi, v_gamma * (1.0 / eps_phi - 1.0))


def oamp_se_step(table, prior, sigma2, v_phi):
    """One OAMP/VAMP SE step: ``v_phi -> (v_gamma, v_phi_next)``."""
    rec = oamp_se_record(table, prior, sigma2, v_phi)
    return rec.v_gamma, rec.v_phi_next


def oamp_se_trajectory(table, prior, sigma2, t_max) -> List[OampSERecord]:
    out = []
    v_phi = 1.0
    for _ in range(t_max):
        rec = oamp_se_record(table, prior, sigma2, v_phi)
        out.append(rec)
        v_phi = rec.v_phi_next
    return out


class FixedPoint(NamedTuple):
    mse: float
    v_gamma: float
    v_phi: float
    iterations: int
    converged: bool


def se_fixed_point(table, prior, sigma2, tol=1e-10, max_iter=2000) -> FixedPoint:
    """Iterate the OAMP/VAMP SE from ``v_phi = 1`` until the MMSE settles."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    v_phi = 1.0
    prev = np.inf
    rec = None
    for it in range(1, max_iter + 1):
        rec = oamp_se_record(table, prior, sigma2, v_phi)
        if abs(rec.mmse - prev) < tol * max(rec.mmse, 1e-300):
            return FixedPoint(rec.mmse, rec.v_gamma, rec.v_phi, it, True)
        prev = rec.mmse
        v_phi = rec.v_phi_next
    warnings.warn(f"SE fixed point not reached in {max_iter} iterations", RuntimeWarning)
    return FixedPoint(rec.mmse, rec.v_gamma, rec.v_phi, max_iter, False)


def lmmse_mse(table, sigma2):
    """Gaussian-prior (mu = 1) LMMSE error straight from the spectrum."""
    eig = table.eigenvalues[table.eigenvalues > 0]
    return float((np.sum(sigma2 / (sigma2 + eig)) + (table.n - eig.size)) / table.n)


# --------------------------------------------------------------------- MAMP


def mamp_se_gamma(table, schedule: MampSchedule, V_phibar, t, t_prime, sigma2):
    """``v^gamma_{t t'}`` from the schedule and the NLE-output error covariance.

    ``(1/(eps_t eps_t')) sum_i sum_j vartheta_ti vartheta_t'j
    [sigma2 w_{(t-i)+(t'-j)} + v_ij wbar_{t-i, t'-j}]``.
    """
    k, kp = t - 1, t_prime - 1
    if max(k, kp) >= schedule.t:
        raise IndexError(f"schedule has {schedule.t} rows; asked for ({t}, {t_prime})")
    table.check_order(max(k, kp))
    V = np.real(V_phibar)
    a = k - np.arange(k + 1)
    b = kp - np.arange(kp + 1)
    inner = sigma2 * table.w[a[:, None] + b[None, :]] + V[: k + 1, : kp + 1] * table.wbar[a[:, None], b[None, :]]
    val = schedule.vartheta[k, : k + 1] @ inner @ schedule.vartheta[kp, : kp + 1]
    return float(val / (schedule.eps[k] * schedule.eps[kp]))


class ScalarChannelBank:
    """Jointly Gaussian scalar channels ``x + eta_t`` sharing one signal bank.

    Column 0 of the error store is the pseudo-error ``-x`` of the all-zero
    initial estimate; column ``t`` is the orthogonalized NLE error of channel
    ``t``.
    """

    def __init__(self, prior, samples=DEFAULT_BANK_SAMPLES, capacity=64, seed=0):
        self.prior = prior
        self.samples = int(samples)
        self.rng = np.random.default_rng(seed)
        self.x = matched_signal(prior, self.samples, self.rng)
        self.capacity = capacity
        self.Z = np.empty((self.samples, capacity), dtype=np.complex128)
        self.errors = np.empty((self.samples, capacity + 1), dtype=np.complex128)
        self.errors[:, 0] = -self.x
        self.L = np.zeros((capacity, capacity))
        self.count = 0

    def add_channel(self, cov_row):
        """Append a channel whose noise covariances with the existing ones
        (and itself, last entry) are ``cov_row``; returns its noise samples."""
        k = self.count
        cov_row = np.asarray(cov_row, dtype=float)
        if k:
            Lk = self.L[:k, :k]
            a = np.linalg.lstsq(Lk, cov_row[:k], rcond=1e-13)[0]
        else:
            a = np.zeros(0)
        resid = cov_row[k] - a @ a
        if resid < -1e-8 * max(cov_row[k], 1e-300):
            warnings.warn(
                f"channel covariance not PSD (deficit {resid:.3g}); clipped", RuntimeWarning
            )
        self.L[k, :k] = a
        self.L[k, k] = np.sqrt(max(resid, 0.0))
        self.Z[:, k] = complex_normal(self.rng, self.samples)
        self.count += 1
        return self.Z[:, : k + 1] @ self.L[k, : k + 1]

    def add_error(self, err):
        """Store channel error samples; return their cross-MSEs with all stored errors."""
        k = self.count
        self.errors[:, k] = err
        return np.real(self.errors[:, : k + 1].conj().T @ err) / self.samples


@dataclass
class CovarianceState:
    capacity: int
    V_gamma: np.ndarray = None
    V_phibar: np.ndarray = None
    M_nle: np.ndarray = None
    D: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        T = self.capacity
        self.V_gamma = np.zeros((T, T))
        self.V_phibar = np.zeros((T + 1, T + 1))
        self.M_nle = np.zeros((T + 1, T + 1))
        self.D = np.zeros((T + 1, T + 1))
        self.M_nle[0, 0] = 1.0
        self.D[0, 0] = 1.0
        self.V_phibar[0, 0] = 1.0


def window_rows(t, L):
    """Zero-based rows of the NLE-output errors that enter the damping window at iteration t."""
    l = min(L, t + 1)
    return list(range(t - l + 1, t)), l


def mamp_se_phi(cov: CovarianceState, m_row, zeta, t, L):
    """Extend ``V_phibar`` with the error of ``x_{t+1}``.

    ``m_row`` holds cross-MSEs of the new NLE error ``s_t`` with ``s_0..s_t``.
    ``D`` row ``t`` (zero-based) becomes ``zeta_l e_t + sum_i zeta_i D[window_i]``.
    """
    n = t + 1
    cov.M_nle[t, :n] = m_row
    cov.M_nle[:n, t] = m_row
    rows, _ = window_rows(t, L)
    G = np.zeros((len(rows) + 1, cov.D.shape[1]))
    G[:-1] = cov.D[rows]
    G[-1, t] = 1.0
    cov.D[t] = zeta @ G
    row = cov.D[t, :n] @ cov.M_nle[:n, :n] @ cov.D[:n, :n].T
    cov.V_phibar[t, :n] = row
    cov.V_phibar[:n, t] = row
    cov.t = t


def window_covariance(cov: CovarianceState, t, L):
    """Error covariance of ``{f_(t-l+2), ..., f_t, s_t}`` from the expansion table."""
    rows, l = window_rows(t, L)
    n = t + 1
    G = np.zeros((l, n))
    G[:-1] = cov.D[rows, :n]
    G[-1, t] = 1.0
    return G @ cov.M_nle[:n, :n] @ G.T


@dataclass
class MampSERecord:
    t: int
    theta: float
    xi: float
    eps: float
    v_phibar_tt: float
    v_gamma_tt: float
    mmse: float
    eps_phi: float
    zeta: np.ndarray
    v_phibar_next: float


@dataclass
class MampPlan:
    """Deterministic MAMP schedule and predicted covariances for one configuration."""

    sigma2: float
    L: int
    schedule: MampSchedule
    cov: CovarianceState
    records: List[MampSERecord] = field(default_factory=list)

    @property
    def t_max(self):
        return len(self.records)

    def mse_trajectory(self):
        return np.array([r.mmse for r in self.records])

    def v_phibar_diag(self):
        return np.array([r.v_phibar_tt for r in self.records])


def mamp_state_evolution(table, prior, sigma2, t_max, L=3, samples=DEFAULT_BANK_SAMPLES, seed=0, ridge=RIDGE) -> MampPlan:
    """Run the covariance SE for ``t_max`` iterations and return the plan.

    The plan carries every quantity the vector recursion needs in
    ``analytic_se`` mode (theta, xi, p, eps, v^gamma_tt, eps^phi, zeta).
    """
    if L < 1:
        raise ValueError("damping length L must be >= 1")
    table.check_order(t_max - 1)
    schedule = MampSchedule(t_max)
    cov = CovarianceState(t_max)
    bank = ScalarChannelBank(prior, samples, capacity=t_max, seed=seed)
    plan = MampPlan(sigma2, L, schedule, cov)
    for t in range(1, t_max + 1):
        plan.records.append(_se_iteration(table, prior, sigma2, plan, bank, t, ridge))
    return plan


def _se_iteration(table, prior, sigma2, plan, bank, t, ridge=RIDGE):
    schedule, cov, L = plan.schedule, plan.cov, plan.L
    k = t - 1
    theta, xi, eps = mamp_step_schedule(table, cov.V_phibar, schedule, t, sigma2)
    row = np.array([mamp_se_gamma(table, schedule, cov.V_phibar, t, tp, sigma2) for tp in range(1, t + 1)])
    cov.V_gamma[k, :t] = row
    cov.V_gamma[:t, k] = row
    v = row[-1]
    mmse = mmse_eval(prior, v)
    eps_phi = 1.0 - mmse / v
    eta = bank.add_channel(row)
    r = bank.x + eta
    err = (denoise(prior, r, v) + (eps_phi - 1.0) * r) / eps_phi - bank.x
    m_row = bank.add_error(err)
    zeta = optimal_damping(window_covariance_with(cov, m_row, t, L), ridge)
    mamp_se_phi(cov, m_row, zeta, t, L)
    return MampSERecord(
        t=t, theta=theta, xi=xi, eps=eps, v_phibar_tt=float(cov.V_phibar[k, k]),
        v_gamma_tt=float(v), mmse=mmse, eps_phi=eps_phi, zeta=zeta,
        v_phibar_next=float(cov.V_phibar[t, t]),
    )


def window_covariance_with(cov, m_row, t, L):
    cov.M_nle[t, : t + 1] = m_row
    cov.M_nle[: t + 1, t] = m_row
    return window_covariance(cov, t, L)
