import warnings

import numpy as np
import pytest

from mamp.algorithms import (
    CovarianceError, DIVERGENCE_MSE, amp_state_evolution, estimate_error_covariance, residual_covariance,
    run_amp, run_mamp, run_oamp_vamp,
)
from mamp.operators import build_operator, compute_spectral_table
from mamp.prior import BernoulliGaussianPrior, matched_signal, sample_signal
from mamp.state_evolution import mamp_state_evolution, se_fixed_point

from conftest import cn

GAUSS = BernoulliGaussianPrior(1.0)


def _problem(m, n, kappa, mu, sigma2, seed, t_max=10, kind="svd_dft"):
    op = build_operator(m, n, kappa, seed, kind)
    tab = compute_spectral_table(op, t_max)
    prior = BernoulliGaussianPrior(mu)
    rng = np.random.default_rng([seed, 1])
    x = sample_signal(prior, n, rng)
    y = op.forward(x) + cn(rng, m, sigma2)
    return op, tab, prior, x, y


def test_first_iterate_is_matched_filter():
    op, tab, prior, x, y = _problem(256, 512, 10.0, 0.1, 1e-3, 0, t_max=2)
    rep = run_mamp(op, tab, prior, y, 1e-3, 1, keep_vectors=True, se_samples=2**12)
    assert np.allclose(rep.extras["r"][0], op.adjoint(y), rtol=1e-12, atol=1e-14)
    rep = run_mamp(op, tab, prior, y, 1e-3, 1, variance_mode="empirical_residual", keep_vectors=True)
    assert np.allclose(rep.extras["r"][0], op.adjoint(y), rtol=1e-12, atol=1e-14)


@pytest.mark.slow
def test_amp_matches_scalar_se_on_iid():
    # exact-power signals remove the support-count fluctuation the SE does not model
    sigma2, m, n, t_max = 1e-3, 2000, 4000, 15
    prior = BernoulliGaussianPrior(0.1)
    runs = []
    for seed in range(6):
        op = build_operator(m, n, 1.0, seed, "iid_gaussian_dense")
        rng = np.random.default_rng([seed, 1])
        x = matched_signal(prior, n, rng)
        y = op.forward(x) + cn(rng, m, sigma2)
        runs.append(run_amp(op, prior, y, sigma2, t_max, x_true=x).mse())
    _, se = amp_state_evolution(prior, m / n, sigma2, t_max)
    gap = np.abs(10 * np.log10(np.mean(runs, axis=0) / se))
    assert gap.max() < 0.5, gap


def test_amp_noiseless_orthogonal_gaussian():
    # undamped AMP cycles on a unitary operator; damping lets it close in on x
    op, tab, prior, x, y = _problem(256, 256, 1.0, 1.0, 0.0, 1)
    rep = run_amp(op, prior, y, 0.0, 120, damping=0.5, x_true=x)
    assert rep.final_mse < 1e-28
    undamped = run_amp(op, prior, y, 0.0, 120, x_true=x)
    assert undamped.final_mse > 1e-6


def test_amp_bad_damping():
    op, tab, prior, x, y = _problem(64, 128, 1.0, 0.1, 1e-3, 0)
    with pytest.raises(ValueError):
        run_amp(op, prior, y, 1e-3, 3, damping=0.0)


def test_amp_damped_runs():
    op, tab, prior, x, y = _problem(512, 1024, 1.0, 0.1, 1e-3, 0, kind="iid_gaussian_dense")
    rep = run_amp(op, prior, y, 1e-3, 30, damping=0.7, x_true=x)
    assert rep.final_mse < 1e-2


def test_oamp_gaussian_reaches_lmmse_estimate():
    sigma2 = 1e-2
    op, tab, prior, x, y = _problem(48, 64, 10.0, 1.0, sigma2, 2)
    A = op.to_dense()
    x_lmmse = np.linalg.solve(A.conj().T @ A + sigma2 * np.eye(64), A.conj().T @ y)
    rep = run_oamp_vamp(op, tab, GAUSS, y, sigma2, 3, x_true=x)
    assert np.allclose(rep.x_hat, x_lmmse, rtol=1e-9, atol=1e-12)
    dense = type(op)(op.m, op.n, op.singular_values, None, "dense", A)
    rep2 = run_oamp_vamp(dense, tab, GAUSS, y, sigma2, 3)
    assert np.allclose(rep2.x_hat, x_lmmse, rtol=1e-9, atol=1e-12)


def test_oamp_se_only_mode(kappa10_table, bg):
    rep = run_oamp_vamp(None, kappa10_table, bg, None, 1e-3, 30, mode="track_se_only")
    assert np.all(np.isnan(rep.mse()))
    assert np.all(np.diff(rep.mse_se()) <= 0)
    assert rep.status == "converged"
    with pytest.raises(ValueError):
        run_oamp_vamp(None, kappa10_table, bg, None, 1e-3, 3, mode="bogus")


def test_oamp_tracks_se_at_scale(kappa10_table, bg):
    op = build_operator(4096, 8192, 10.0, 0)
    rng = np.random.default_rng([0, 1])
    x = sample_signal(bg, 8192, rng)
    y = op.forward(x) + cn(rng, 4096, 1e-3)
    rep = run_oamp_vamp(op, kappa10_table, bg, y, 1e-3, 20, x_true=x)
    fp = se_fixed_point(kappa10_table, bg, 1e-3)
    assert abs(10 * np.log10(rep.final_mse / fp.mse)) < 0.5


SEEDS = range(6)


@pytest.fixture(scope="module")
def kappa10_runs():
    op = build_operator(4096, 8192, 10.0, 0)
    tab = compute_spectral_table(op, 40)
    prior = BernoulliGaussianPrior(0.1)
    plan = mamp_state_evolution(tab, prior, 1e-3, 40, L=3)
    ana, emp = [], []
    for seed in SEEDS:
        op = build_operator(4096, 8192, 10.0, seed)
        rng = np.random.default_rng([seed, 1])
        x = sample_signal(prior, 8192, rng)
        y = op.forward(x) + cn(rng, 4096, 1e-3)
        ana.append(run_mamp(op, tab, prior, y, 1e-3, 40, x_true=x, plan=plan))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            emp.append(run_mamp(op, tab, prior, y, 1e-3, 40, variance_mode="empirical_residual", x_true=x))
    fp = se_fixed_point(tab, prior, 1e-3)
    return ana, emp, fp, tab


def test_mamp_reaches_oamp_fixed_point(kappa10_runs):
    ana, emp, fp, _ = kappa10_runs
    # residual-driven variances close the loop on every realization
    for rep in emp:
        assert rep.status == "converged"
        assert abs(10 * np.log10(rep.final_mse / fp.mse)) < 0.5
    # the open-loop SE plan loses a minority of realizations; those must be flagged
    ok = [rep for rep in ana if rep.status != "diverged"]
    assert len(ok) > len(ana) // 2
    for rep in ok:
        assert rep.status == "converged"
        assert abs(10 * np.log10(rep.final_mse / fp.mse)) < 0.5
    for rep in ana:
        if rep.status == "diverged":
            assert rep.final_mse > DIVERGENCE_MSE or not np.isfinite(rep.final_mse)


def test_variance_modes_agree(kappa10_runs):
    ana, emp, _, _ = kappa10_runs
    for a, e in zip(ana, emp):
        if a.status != "diverged":
            assert abs(10 * np.log10(a.final_mse / e.final_mse)) < 0.5


def test_schedule_invariants_in_run(kappa10_runs):
    ana, emp, _, tab = kappa10_runs
    for rep in ana + emp:
        assert all(r < 1 for r in rep.extras["spectral_radius"])
        for rec in rep.records:
            assert rec.zeta_t.sum() == pytest.approx(1.0, abs=1e-12)
            assert rec.zeta_t.size == min(3, rec.t + 1)
            assert rec.mse_posterior >= 0
            assert rec.wall_time > 0
        assert rep.records[0].xi_t == 1.0
        v11 = rep.records[0].v_phi_tt
        assert rep.records[0].theta_t == pytest.approx(1 / (tab.lambda_dagger + 1e-3 / v11), rel=1e-12)
    assert ana[0].records[0].v_phi_tt == 1.0


def test_no_damping_window():
    op, tab, prior, x, y = _problem(1024, 2048, 10.0, 0.1, 1e-3, 0, t_max=15)
    for mode in ("analytic_se", "empirical_residual"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = run_mamp(op, tab, prior, y, 1e-3, 15, L=1, variance_mode=mode, x_true=x, se_samples=2**14)
        assert all(r.zeta_t.tolist() == [1.0] for r in rep.records)
        assert rep.status in ("converged", "diverged", "max_iters")


def test_genie_residual_covariance():
    """Residual-based covariance against the true error Gram of synthetic windows."""
    m, n, sigma2 = 4096, 8192, 1e-3
    errs, trues = [], []
    for seed in range(10):
        op, tab, prior, x, y = _problem(m, n, 10.0, 0.1, sigma2, seed, t_max=2)
        rng = np.random.default_rng(50 + seed)
        base = cn(rng, (3, n))
        mix = np.array([[1.0, 0, 0], [0.6, 0.8, 0], [0.3, 0.3, 0.9]]) * np.array([[0.3], [0.1], [0.05]])
        F = mix @ base
        window = [x + f for f in F]
        V = estimate_error_covariance(op, y, sigma2, tab, window)
        errs.append(V)
        trues.append((F.conj() @ F.T).real / n)
    V, T = np.mean(errs, 0), np.mean(trues, 0)
    assert np.all(np.abs(V - T) <= 0.05 * np.abs(T) + 3 / np.sqrt(n))


def test_genie_exact_window_is_near_zero():
    op, tab, prior, x, y = _problem(4096, 8192, 10.0, 0.1, 1e-3, 0, t_max=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        V = estimate_error_covariance(op, y, 1e-3, tab, [x, x])
    assert np.all(np.abs(V) < 3e-3 / np.sqrt(4096) * 10)


def test_residual_covariance_clips():
    R = np.zeros((2, 10), dtype=complex)
    with pytest.warns(RuntimeWarning):
        V = residual_covariance(R, 1.0, 0.5, 1.0)
    assert np.all(np.diag(V) == 1e-15)


def test_covariance_errors(kappa10_table):
    op = build_operator(8, 16, 2.0, 0)
    with pytest.raises(CovarianceError):
        estimate_error_covariance(op, np.zeros(8), 1e-3, kappa10_table, [np.zeros(16)])
    with pytest.raises(ValueError):
        estimate_error_covariance(op, np.zeros(8), 1e-3, kappa10_table, [np.zeros(16)], mode="analytic_se")
    with pytest.raises(ValueError):
        estimate_error_covariance(op, np.zeros(8), 1e-3, kappa10_table, [np.ones(16)], mode="bogus")


def test_invalid_arguments():
    op, tab, prior, x, y = _problem(64, 128, 10.0, 0.1, 1e-3, 0, t_max=4)
    with pytest.raises(ValueError):
        run_mamp(op, tab, prior, y, 0.0, 3)
    with pytest.raises(ValueError):
        run_mamp(op, tab, prior, y, 1e-3, 3, L=0)
    with pytest.raises(ValueError):
        run_mamp(op, tab, prior, y, 1e-3, 3, variance_mode="guess")
    with pytest.raises(ValueError):
        run_mamp(op, tab, prior, y[:10], 1e-3, 3)
    plan = mamp_state_evolution(tab, prior, 1e-3, 2, L=3, samples=2**10)
    with pytest.raises(ValueError):
        run_mamp(op, tab, prior, y, 1e-3, 3, plan=plan)
    with pytest.raises(ValueError):
        run_oamp_vamp(op, tab, prior, y, -1.0, 3)
    with pytest.raises(ValueError):
        run_oamp_vamp(op, tab, prior, y[:5], 1e-3, 3)


def test_divergence_detected():
    op, tab, prior, x, y = _problem(64, 128, 10.0, 0.1, 1e-3, 0)
    y = y.copy()
    y[3] = np.nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        reps = [
            run_amp(op, prior, y, 1e-3, 5, x_true=x),
            run_oamp_vamp(op, tab, prior, y, 1e-3, 5, x_true=x),
            run_mamp(op, tab, prior, y, 1e-3, 5, x_true=x, se_samples=2**10),
            run_mamp(op, tab, prior, y, 1e-3, 5, variance_mode="empirical_residual", x_true=x),
        ]
    for rep in reps:
        assert rep.status == "diverged", rep.algorithm
        assert len(rep.records) <= 5


def test_analytic_run_is_deterministic():
    op, tab, prior, x, y = _problem(256, 512, 10.0, 0.1, 1e-3, 0)
    a = run_mamp(op, tab, prior, y, 1e-3, 8, x_true=x, se_samples=2**12)
    b = run_mamp(op, tab, prior, y, 1e-3, 8, x_true=x, se_samples=2**12)
    assert np.array_equal(a.mse(), b.mse())
