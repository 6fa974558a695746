import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mamp.operators import (
    SpectralOverflowError, apply_B, apply_adjoint, apply_forward, binomial_b, build_operator,
    compute_spectral_table, geometric_singular_values, spectral_radius_theta_B,
    spectral_table_from_eigenvalues,
)
from mamp.schedule import theta_opt

from conftest import cn


def test_kappa_one_square_is_unitary(rng):
    op = build_operator(32, 32, 1.0, 3)
    assert np.allclose(op.singular_values, 1.0, atol=0, rtol=1e-15)
    A = op.to_dense()
    assert np.allclose(A.conj().T @ A, np.eye(32), atol=1e-12)
    x = cn(rng, 32)
    assert np.allclose(op.adjoint(op.forward(x)), x, atol=1e-12)


def test_kappa10_spectrum():
    d = geometric_singular_values(4096, 8192, 10.0)
    J = 4096
    assert np.isclose(np.sum(d**2), 8192, rtol=1e-12)
    assert np.isclose(d[0] / d[-1], 10.0 ** ((J - 1) / J), rtol=1e-12)
    assert np.allclose(d[:-1] / d[1:], 10.0 ** (1 / J), rtol=1e-12)


def test_scalar_case():
    op = build_operator(1, 1, 1.0, 0)
    assert op.singular_values.tolist() == [1.0]
    y = op.forward(np.array([2.0 - 1.0j]))
    assert np.isclose(abs(y[0]), abs(2.0 - 1.0j))


@pytest.mark.parametrize("bad", [dict(m=0, n=4), dict(m=4, n=0), dict(m=4, n=4, kappa=0.5)])
def test_build_rejects(bad):
    with pytest.raises(ValueError):
        build_operator(**{"kappa": 1.0, **bad})


def test_zero_maps_to_zero():
    op = build_operator(8, 16, 5.0, 1)
    assert not np.any(op.forward(np.zeros(16)))
    assert not np.any(op.adjoint(np.zeros(8)))


def test_length_mismatch():
    op = build_operator(8, 16, 5.0, 1)
    with pytest.raises(ValueError):
        apply_forward(op, np.zeros(8))
    with pytest.raises(ValueError):
        apply_adjoint(op, np.zeros(16))
    with pytest.raises(ValueError):
        apply_B(op, compute_spectral_table(op, 2), np.zeros(16))


def _dense_oracle(op):
    # A = Sigma P F built entry by entry from the definition
    n = op.n
    k = np.arange(n)
    F = np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)
    PF = F[op.permutation]
    A = np.zeros((op.m, n), dtype=complex)
    J = op.singular_values.size
    A[:J] = op.singular_values[:, None] * PF[:J]
    return A


@pytest.mark.parametrize("m,n,kappa", [(16, 32, 10.0), (48, 64, 3.0), (64, 64, 100.0), (7, 13, 2.0)])
def test_dense_oracle_forward_adjoint(rng, m, n, kappa):
    op = build_operator(m, n, kappa, 7)
    A = _dense_oracle(op)
    x, y = cn(rng, n), cn(rng, m)
    fx = op.forward(x)
    assert np.linalg.norm(fx - A @ x) / np.linalg.norm(A @ x) < 1e-12
    ay = op.adjoint(y)
    assert np.linalg.norm(ay - A.conj().T @ y) / np.linalg.norm(A.conj().T @ y) < 1e-12
    # ||Ax||^2 = sum d_i^2 |(PFx)_i|^2
    u = np.fft.fft(x, norm="ortho")[op.permutation][: op.singular_values.size]
    assert np.isclose(np.vdot(fx, fx).real, np.sum(op.singular_values**2 * np.abs(u) ** 2), rtol=1e-12)


@pytest.mark.parametrize("m,n", [(1024, 1024), (512, 1024), (100, 300)])
def test_adjoint_identity(rng, m, n):
    op = build_operator(m, n, 10.0, 2)
    x, y = cn(rng, n), cn(rng, m)
    lhs = np.vdot(y, op.forward(x))
    rhs = np.vdot(op.adjoint(y), x)
    assert abs(lhs - rhs) / abs(lhs) < 1e-12


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 40), extra=st.integers(0, 40), kappa=st.floats(1.0, 1e3), seed=st.integers(0, 2**31))
def test_adjoint_property(m, extra, kappa, seed):
    n = m + extra
    op = build_operator(m, n, kappa, seed)
    r = np.random.default_rng(seed)
    x, y = cn(r, n), cn(r, m)
    lhs = np.vdot(y, op.forward(x))
    rhs = np.vdot(op.adjoint(y), x)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.linalg.norm(x) * np.linalg.norm(y) * op.singular_values[0])


def test_B_vanishes_for_unitary(rng):
    op = build_operator(16, 16, 1.0, 0)
    tab = compute_spectral_table(op, 3)
    assert tab.lambda_dagger == pytest.approx(1.0)
    assert np.allclose(apply_B(op, tab, cn(rng, 16)), 0, atol=1e-14)


def test_B_eigenvectors():
    op = build_operator(24, 40, 10.0, 5)
    tab = compute_spectral_table(op, 3)
    for i in (0, 7, 23):
        e = np.zeros(24, dtype=complex)
        e[i] = 1.0
        # A A^H through the transforms, not the diagonal shortcut
        Be = tab.lambda_dagger * e - op.forward(op.adjoint(e))
        assert np.allclose(Be, (tab.lambda_dagger - op.singular_values[i] ** 2) * e, atol=1e-12)
        assert np.allclose(apply_B(op, tab, e), Be, atol=1e-12)


def test_B_dense_path_matches(rng):
    op = build_operator(12, 20, 4.0, 1)
    dense = type(op)(op.m, op.n, op.singular_values, None, "dense", op.to_dense())
    tab = compute_spectral_table(op, 2)
    v = cn(rng, 12)
    assert np.allclose(apply_B(dense, tab, v), apply_B(op, tab, v), atol=1e-12)


@pytest.mark.parametrize("sigma2,v", [(1e-3, 1.0), (0.1, 0.01), (1e-6, 1e-4)])
def test_spectral_radius_formula(kappa10_table, sigma2, v):
    tab = kappa10_table
    theta = theta_opt(tab, sigma2, v)
    rho = sigma2 / v
    expect = (tab.lambda_max - tab.lambda_min) / (tab.lambda_max + tab.lambda_min + 2 * rho)
    assert spectral_radius_theta_B(tab, theta) == pytest.approx(expect, rel=1e-12)
    assert spectral_radius_theta_B(tab, theta) < 1


def test_unitary_table():
    tab = compute_spectral_table(build_operator(32, 32, 1.0, 0), 5)
    assert tab.b[0] == pytest.approx(1.0)
    assert np.allclose(tab.b[1:], 0, atol=1e-14)
    assert tab.w[0] == pytest.approx(1.0)
    assert np.allclose(tab.w[1:], 0, atol=1e-14)
    assert abs(tab.wbar[0, 0]) < 1e-14


def test_table_invariants(kappa10_table):
    tab = kappa10_table
    assert tab.b[0] == pytest.approx(0.5, abs=1e-15)
    assert tab.lambda_moments[0] == pytest.approx(0.5, abs=1e-15)
    assert tab.lambda_moments[1] == pytest.approx(1.0, abs=1e-12)
    t = np.arange(tab.w.size)
    assert np.allclose(tab.w, tab.lambda_dagger * tab.b[t] - tab.b[t + 1], rtol=1e-10, atol=1e-12)
    assert np.allclose(tab.wbar, tab.wbar.T, rtol=1e-12)
    assert tab.wbar[0, 0] >= 0
    assert tab.b.size == 2 * 60 + 3 and tab.w.size == 2 * 60 + 2


def _dense_traces(A, lam_dag, order):
    m, n = A.shape
    B = lam_dag * np.eye(m) - A @ A.conj().T
    b, w, Ws = [], [], []
    Bk = np.eye(m)
    for _ in range(order):
        b.append(np.trace(Bk).real / n)
        W = A.conj().T @ Bk @ A
        Ws.append(W)
        w.append(np.trace(W).real / n)
        Bk = Bk @ B
    return np.array(b), np.array(w), Ws


@pytest.mark.parametrize("m,n,kappa", [(32, 64, 10.0), (64, 64, 3.0), (20, 50, 30.0)])
def test_trace_oracles(m, n, kappa):
    op = build_operator(m, n, kappa, 11)
    tmax = 4
    tab = compute_spectral_table(op, tmax)
    A = op.to_dense()
    b, w, Ws = _dense_traces(A, tab.lambda_dagger, 2 * tmax + 2)
    assert np.allclose(tab.b[: b.size], b, rtol=1e-10, atol=0)
    assert np.allclose(tab.w[: w.size], w, rtol=1e-10, atol=0)
    I = np.eye(n)
    for i in range(tmax + 1):
        for j in range(tmax + 1):
            oracle = np.trace((w[i] * I - Ws[i]).conj().T @ (w[j] * I - Ws[j])).real / n
            assert tab.wbar[i, j] == pytest.approx(oracle, rel=1e-10)


def test_binomial_cross_check():
    op = build_operator(48, 64, 10.0, 4)
    tab = compute_spectral_table(op, 4)
    for t in range(9):
        assert binomial_b(tab, t) == pytest.approx(tab.b[t], rel=1e-10, abs=1e-13)


def test_tall_operator_includes_zero_eigenvalues():
    op = build_operator(40, 30, 5.0, 0)
    tab = compute_spectral_table(op, 2)
    assert tab.lambda_min == 0.0
    assert tab.eigenvalues.size == 40
    A = op.to_dense()
    b, w, _ = _dense_traces(A, tab.lambda_dagger, 4)
    assert np.allclose(tab.b[:4], b, rtol=1e-10)


def test_overflow_guard():
    eig = np.array([1e3, 1e-3, 1.0])
    with pytest.raises(SpectralOverflowError):
        spectral_table_from_eigenvalues(eig, 3, 60)


def test_check_order(kappa10_table):
    with pytest.raises(IndexError):
        kappa10_table.check_order(61)
