"""AMP, OAMP/VAMP and MAMP for y = A x + n."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional

import numpy as np

from .operators import apply_B, spectral_radius_theta_B
from .prior import denoise, mmse_eval, posterior
from .schedule import (
    DampingError,
    MampSchedule,
    ScheduleError,
    mamp_step_schedule,
    optimal_damping,
)
from .state_evolution import (
    DEFAULT_BANK_SAMPLES,
    MampPlan,
    mamp_se_gamma,
    mamp_state_evolution,
    oamp_se_trajectory,
    window_covariance,
    window_rows,
)

VARIANCE_MODES = ("analytic_se", "empirical_residual")
# 20 dB above the all-zero estimate of a unit-power signal
DIVERGENCE_MSE = 1e2


class CovarianceError(ArithmeticError):
    pass


@dataclass
class IterationRecord:
    t: int
    mse_posterior: float
    mse_se_predicted: float
    v_gamma_tt: float = float("nan")
    v_phi_tt: float = float("nan")
    theta_t: float = float("nan")
    xi_t: float = float("nan")
    zeta_t: Optional[np.ndarray] = None
    wall_time: float = 0.0


@dataclass
class RunReport:
    algorithm: str
    records: List[IterationRecord] = field(default_factory=list)
    status: str = "max_iters"
    x_hat: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    def mse(self):
        return np.array([r.mse_posterior for r in self.records])

    def mse_se(self):
        return np.array([r.mse_se_predicted for r in self.records])

    @property
    def final_mse(self):
        return self.records[-1].mse_posterior if self.records else float("nan")


def _mse(est, x_true):
    if x_true is None:
        return float("nan")
    e = est - x_true
    return float(np.vdot(e, e).real / e.size)


def _finish(report, converged_tol=0.05, window=5):
    """Label a finished run: converged when the last few MSEs agree within tol."""
    if report.status == "diverged":
        return report
    mse = report.mse()
    tail = mse[-window:]
    if np.all(np.isnan(tail)):
        tail = report.mse_se()[-window:]
    if len(tail) >= min(window, len(mse)) and np.all(np.isfinite(tail)) and tail.min() > 0:
        if (tail.max() - tail.min()) / tail.min() < converged_tol:
            report.status = "converged"
            return report
    report.status = "max_iters"
    return report


def _bad(v, mse):
    return not np.all(np.isfinite(v)) or (np.isfinite(mse) and mse > DIVERGENCE_MSE)


# ------------------------------------------------------------------ OAMP/VAMP


@lru_cache(maxsize=8)
def _gram_eigh(op):
    A = op.matrix
    return np.linalg.eigh(A @ A.conj().T)


def lmmse_residual_filter(op, table, v, rho):
    """``(rho I + A A^H)^-1 v``."""
    if op.matrix is None:
        return v / (rho + table.eigenvalues)
    lam, U = _gram_eigh(op)
    return U @ ((U.conj().T @ v) / (rho + np.clip(lam, 0.0, None)))


def run_oamp_vamp(op, table, prior, y, sigma2, t_max, mode="simulate", x_true=None, trajectory=None):
    """OAMP/VAMP with the LMMSE linear estimator applied through the known spectrum.

    Variances follow the scalar SE, so ``mode="track_se_only"`` allocates no
    vectors and only reports the predicted MSE.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if mode not in ("simulate", "track_se_only"):
        raise ValueError(f"unknown mode {mode!r}")
    traj = trajectory if trajectory is not None else oamp_se_trajectory(table, prior, sigma2, t_max)
    report = RunReport("oamp")
    if mode == "track_se_only":
        for t, rec in enumerate(traj[:t_max], 1):
            report.records.append(IterationRecord(
                t, float("nan"), rec.mmse, v_gamma_tt=rec.v_gamma, v_phi_tt=rec.v_phi))
        return _finish(report)
    y = np.asarray(y)
    if y.shape != (op.m,):
        raise ValueError(f"y must have length {op.m}")
    x = np.zeros(op.n, dtype=np.complex128)
    for t, rec in enumerate(traj[:t_max], 1):
        start = time.perf_counter()
        resid = y - op.forward(x)
        r = x + op.adjoint(lmmse_residual_filter(op, table, resid, rec.rho)) / rec.eps_gamma
        phi_hat = denoise(prior, r, rec.v_gamma)
        x = (phi_hat + (rec.eps_phi - 1.0) * r) / rec.eps_phi
        mse = _mse(phi_hat, x_true)
        report.records.append(IterationRecord(
            t, mse, rec.mmse, v_gamma_tt=rec.v_gamma, v_phi_tt=rec.v_phi,
            wall_time=time.perf_counter() - start))
        report.x_hat = phi_hat
        if _bad(r, mse):
            report.status = "diverged"
            break
    return _finish(report)


# ------------------------------------------------------------------------ AMP


def amp_state_evolution(prior, delta, sigma2, t_max):
    """Scalar AMP SE: ``tau_1 = sigma2 + 1/delta``, ``tau_{t+1} = sigma2 + mmse(tau_t)/delta``."""
    taus, mses = [], []
    tau = sigma2 + 1.0 / delta
    for _ in range(t_max):
        m = mmse_eval(prior, tau)
        taus.append(tau)
        mses.append(m)
        tau = sigma2 + m / delta
    return np.array(taus), np.array(mses)


def run_amp(op, prior, y, sigma2, t_max, damping=1.0, x_true=None):
    """Bayes-AMP with Onsager correction and optional damping of the estimate.

    The noise level of the effective channel is tracked empirically as
    ``||z_t||^2 / M``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping factor must lie in (0, 1]")
    y = np.asarray(y)
    delta = op.m / op.n
    _, se = amp_state_evolution(prior, delta, sigma2, t_max) if damping == 1.0 else (None, None)
    report = RunReport("amp")
    x = np.zeros(op.n, dtype=np.complex128)
    z = np.zeros(op.m, dtype=np.complex128)
    onsager = 0.0
    for t in range(1, t_max + 1):
        start = time.perf_counter()
        z = y - op.forward(x) + (onsager / delta) * z
        tau = float(np.vdot(z, z).real / op.m)
        r = x + op.adjoint(z)
        if not (np.isfinite(tau) and tau > 0):
            report.status = "diverged"
            break
        mean, var = posterior(prior, r, tau)
        onsager = damping * float(np.mean(var)) / tau
        x = (1.0 - damping) * x + damping * mean
        mse = _mse(mean, x_true)
        report.records.append(IterationRecord(
            t, mse, float(se[t - 1]) if se is not None else float("nan"),
            v_gamma_tt=tau, wall_time=time.perf_counter() - start))
        report.x_hat = mean
        if _bad(r, mse):
            report.status = "diverged"
            break
    return _finish(report)


# ----------------------------------------------------------------------- MAMP


def residual_covariance(residuals, sigma2, delta, lambda_1, ridge=1e-9):
    """Error covariance from residuals ``y - A u_i``.

    ``delta [(1/M) R_i^H R_j - sigma2] / lambda_1``, Hermitian-symmetrized;
    negative diagonals are clipped.
    """
    R = np.asarray(residuals)
    M = R.shape[1]
    G = (R.conj() @ R.T) / M
    G = 0.5 * (G + G.conj().T)
    V = delta * (G - sigma2) / lambda_1
    if np.any(np.abs(V.imag) > 1e-6 * np.abs(np.diag(V.real)).max()):
        warnings.warn("residual covariance has a sizeable imaginary part; discarded", RuntimeWarning)
    V = V.real
    d = np.diag(V).copy()
    if np.any(d <= 0):
        warnings.warn("non-positive error variance from residuals; clipped to 1e-15", RuntimeWarning)
        np.fill_diagonal(V, np.maximum(d, 1e-15))
    return V


def estimate_error_covariance(op, y, sigma2, table, window, mode="empirical_residual", cov=None, t=None, L=None):
    """Covariance of the errors of the candidate vectors in a damping window.

    ``empirical_residual`` uses the residuals of ``window`` against ``y``;
    ``analytic_se`` reads the SE expansion table ``cov`` at iteration ``t``.
    """
    if mode == "analytic_se":
        if cov is None or t is None or L is None:
            raise ValueError("analytic_se needs the covariance state, t and L")
        return window_covariance(cov, t, L)
    if mode != "empirical_residual":
        raise ValueError(f"unknown variance mode {mode!r}")
    window = [np.asarray(u) for u in window]
    if not window or all(not np.any(u) for u in window):
        raise CovarianceError("window is empty or all-zero")
    R = np.stack([y - op.forward(u) for u in window])
    return residual_covariance(R, sigma2, op.m / op.n, table.lambda_moments[1])


def mamp_linear_step(op, table, y, r_hat, x_hist, t, theta, xi, p_row, eps):
    """Long-memory matched filter of iteration ``t``.

    Returns ``(r_hat_t, r_t)`` where ``r_hat_t = theta B r_hat + xi (y - A x_t)``
    and ``r_t = (A^H r_hat_t + sum_i p_ti x_i) / eps_t``.
    """
    k = t - 1
    resid = y - op.forward(x_hist[k])
    r_hat = theta * apply_B(op, table, r_hat) + xi * resid if k else xi * resid
    r = (op.adjoint(r_hat) + p_row[: k + 1] @ x_hist[: k + 1]) / eps
    return r_hat, r


def run_mamp(
    op,
    table,
    prior,
    y,
    sigma2,
    t_max,
    L=3,
    variance_mode="analytic_se",
    x_true=None,
    plan: Optional[MampPlan] = None,
    se_samples=DEFAULT_BANK_SAMPLES,
    se_seed=0,
    keep_vectors=False,
):
    """Memory AMP.

    Parameters
    ----------
    variance_mode : {"analytic_se", "empirical_residual"}
        ``analytic_se`` drives the schedule, denoiser variance and damping from
        the covariance SE (``plan``, built here if not given; it does not
        depend on the realization). ``empirical_residual`` estimates the
        NLE-output covariances from residuals ``y - A x_i`` on the fly.
    keep_vectors : bool
        Keep every ``r_t`` and ``x_t`` in ``report.extras`` (diagnostics).
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if L < 1:
        raise ValueError("damping length L must be >= 1")
    if variance_mode not in VARIANCE_MODES:
        raise ValueError(f"unknown variance mode {variance_mode!r}")
    y = np.asarray(y)
    if y.shape != (op.m,):
        raise ValueError(f"y must have length {op.m}")
    if variance_mode == "analytic_se":
        if plan is None:
            start = time.perf_counter()
            plan = mamp_state_evolution(table, prior, sigma2, t_max, L, se_samples, se_seed)
            se_time = time.perf_counter() - start
        else:
            se_time = 0.0
        if plan.t_max < t_max or plan.L != L:
            raise ValueError("plan does not cover this run")
        report = _mamp_analytic(op, table, prior, y, t_max, L, plan, x_true, keep_vectors)
        report.extras["se_time"] = se_time
        report.extras["plan"] = plan
    else:
        report = _mamp_empirical(op, table, prior, y, sigma2, t_max, L, x_true, keep_vectors)
    return _finish(report)


def _mamp_analytic(op, table, prior, y, t_max, L, plan, x_true, keep_vectors):
    sched = plan.schedule
    report = RunReport("mamp")
    x_hist = np.zeros((t_max + 1, op.n), dtype=np.complex128)
    r_hat = np.zeros(op.m, dtype=np.complex128)
    rs = []
    for t in range(1, t_max + 1):
        start = time.perf_counter()
        k = t - 1
        rec = plan.records[k]
        r_hat, r = mamp_linear_step(op, table, y, r_hat, x_hist, t, rec.theta, rec.xi, sched.p[k], rec.eps)
        # realized divergence keeps z_t orthogonal to this trial's g_t
        phi_hat, pvar = posterior(prior, r, rec.v_gamma_tt)
        eps_phi = 1.0 - float(np.mean(pvar)) / rec.v_gamma_tt
        z = (phi_hat + (eps_phi - 1.0) * r) / eps_phi
        rows, _ = window_rows(t, L)
        x_hist[t] = rec.zeta[:-1] @ x_hist[rows] + rec.zeta[-1] * z if rows else z
        mse = _mse(phi_hat, x_true)
        report.records.append(IterationRecord(
            t, mse, rec.mmse, v_gamma_tt=rec.v_gamma_tt, v_phi_tt=rec.v_phibar_tt,
            theta_t=rec.theta, xi_t=rec.xi, zeta_t=rec.zeta, wall_time=time.perf_counter() - start))
        report.x_hat = phi_hat
        if keep_vectors:
            rs.append(r)
        if _bad(r, mse):
            report.status = "diverged"
            break
    report.extras["spectral_radius"] = [spectral_radius_theta_B(table, r.theta_t) for r in report.records]
    if keep_vectors:
        report.extras["r"] = rs
        report.extras["x"] = x_hist[: len(rs) + 1]
    return report


def _mamp_empirical(op, table, prior, y, sigma2, t_max, L, x_true, keep_vectors):
    report = RunReport("mamp")
    delta = op.m / op.n
    lam1 = table.lambda_moments[1]
    sched = MampSchedule(t_max)
    x_hist = np.zeros((t_max + 1, op.n), dtype=np.complex128)
    R_hist = np.zeros((t_max + 1, op.m), dtype=np.complex128)
    R_hist[0] = y
    V = np.zeros((t_max + 1, t_max + 1))
    V[0, 0] = residual_covariance(R_hist[:1], sigma2, delta, lam1)[0, 0]
    r_hat = np.zeros(op.m, dtype=np.complex128)
    rs = []
    for t in range(1, t_max + 1):
        start = time.perf_counter()
        k = t - 1
        try:
            theta, xi, eps = mamp_step_schedule(table, V, sched, t, sigma2)
        except ScheduleError:
            report.status = "diverged"
            break
        r_hat = theta * apply_B(op, table, r_hat) + xi * R_hist[k] if k else xi * R_hist[k]
        r = (op.adjoint(r_hat) + sched.p[k, : k + 1] @ x_hist[: k + 1]) / eps
        v_gamma = mamp_se_gamma(table, sched, V, t, t, sigma2)
        if not v_gamma > 0 or _bad(r, 0.0):
            report.status = "diverged"
            break
        mmse = mmse_eval(prior, v_gamma)
        phi_hat, pvar = posterior(prior, r, v_gamma)
        eps_phi = 1.0 - float(np.mean(pvar)) / v_gamma
        z = (phi_hat + (eps_phi - 1.0) * r) / eps_phi
        Rz = y - op.forward(z)
        rows, _ = window_rows(t, L)
        Rw = np.concatenate([R_hist[rows], Rz[None, :]])
        try:
            zeta = optimal_damping(residual_covariance(Rw, sigma2, delta, lam1))
        except DampingError:
            report.status = "diverged"
            break
        if rows:
            x_hist[t] = zeta[:-1] @ x_hist[rows] + zeta[-1] * z
            R_hist[t] = zeta[:-1] @ R_hist[rows] + zeta[-1] * Rz
        else:
            x_hist[t], R_hist[t] = z, Rz
        row = delta * (np.real(R_hist[: t + 1].conj() @ R_hist[t]) / op.m - sigma2) / lam1
        V[t, : t + 1] = row
        V[: t + 1, t] = row
        mse = _mse(phi_hat, x_true)
        report.records.append(IterationRecord(
            t, mse, mmse, v_gamma_tt=v_gamma, v_phi_tt=float(V[k, k]), theta_t=theta,
            xi_t=xi, zeta_t=zeta, wall_time=time.perf_counter() - start))
        report.x_hat = phi_hat
        if keep_vectors:
            rs.append(r)
        if _bad(r, mse):
            report.status = "diverged"
            break
    report.extras["spectral_radius"] = [spectral_radius_theta_B(table, r.theta_t) for r in report.records]
    if keep_vectors:
        report.extras["r"] = rs
        report.extras["x"] = x_hist[: len(rs) + 1]
    return report
