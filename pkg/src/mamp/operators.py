"""Sensing-matrix ensembles and their spectral statistics.

The default ensemble is ``A = Sigma @ Pi @ F`` (left singular basis taken as
the identity), with ``F`` the unitary DFT and ``Pi`` a random row permutation,
so every product with ``A`` or ``A^H`` costs one FFT.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

OVERFLOW_LIMIT = 1e280

ENSEMBLES = ("svd_dft", "iid_gaussian_dense")


class SpectralOverflowError(OverflowError):
    """Moment tables left double range; lower the iteration cap."""


def geometric_singular_values(m: int, n: int, kappa: float) -> np.ndarray:
    """Singular values with constant ratio ``kappa**(1/J)`` and ``sum d^2 = n``."""
    J = min(m, n)
    d = kappa ** (-np.arange(J) / J)
    return d * np.sqrt(n / np.sum(d**2))


@dataclass(frozen=True, eq=False)
class LinearOperator:
    m: int
    n: int
    singular_values: np.ndarray
    permutation: Optional[np.ndarray]
    ensemble_kind: str = "svd_dft"
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def delta(self) -> float:
        return self.m / self.n

    @property
    def gram_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``A A^H`` (length m, zeros included when m > n).

        For ``svd_dft`` these sit on the diagonal in the standard basis.
        """
        eig = np.zeros(self.m)
        J = self.singular_values.size
        eig[:J] = self.singular_values**2
        return eig

    def forward(self, x):
        x = np.asarray(x)
        if x.shape != (self.n,):
            raise ValueError(f"expected a length-{self.n} vector, got shape {x.shape}")
        if self.matrix is not None:
            return self.matrix @ x
        u = np.fft.fft(x, norm="ortho")[self.permutation]
        J = self.singular_values.size
        if self.m == J:
            return self.singular_values * u[:J]
        out = np.zeros(self.m, dtype=np.complex128)
        out[:J] = self.singular_values * u[:J]
        return out

    def adjoint(self, y):
        y = np.asarray(y)
        if y.shape != (self.m,):
            raise ValueError(f"expected a length-{self.m} vector, got shape {y.shape}")
        if self.matrix is not None:
            return self.matrix.conj().T @ y
        J = self.singular_values.size
        w = np.zeros(self.n, dtype=np.complex128)
        w[self.permutation[:J]] = self.singular_values * y[:J]
        return np.fft.ifft(w, norm="ortho")

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix.copy()
        return np.stack([self.forward(e) for e in np.eye(self.n, dtype=np.complex128)], axis=1)


def build_operator(m, n, kappa=1.0, seed=0, kind="svd_dft") -> LinearOperator:
    """Draw a sensing operator.

    Parameters
    ----------
    m, n : int
        Rows and columns.
    kappa : float
        Condition control (``d_1 / d_J = kappa**((J-1)/J)``), at least 1.
    seed : int
        Seed for the permutation (``svd_dft``) or the matrix entries.
    kind : {"svd_dft", "iid_gaussian_dense"}
        ``iid_gaussian_dense`` draws CN(0, 1/m) entries and ignores kappa.
    """
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be positive, got m={m}, n={n}")
    if not kappa >= 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    if kind not in ENSEMBLES:
        raise ValueError(f"unknown ensemble kind {kind!r}")
    rng = np.random.default_rng(seed)
    if kind == "svd_dft":
        return LinearOperator(m, n, geometric_singular_values(m, n, kappa), rng.permutation(n), kind)
    A = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2 * m)
    d = np.linalg.svd(A, compute_uv=False)
    return LinearOperator(m, n, d, None, kind, A)


def apply_forward(op: LinearOperator, x):
    return op.forward(x)


def apply_adjoint(op: LinearOperator, y):
    return op.adjoint(y)


def apply_B(op: LinearOperator, table: "SpectralTable", v):
    """``(lambda_dagger I - A A^H) v``."""
    v = np.asarray(v)
    if v.shape != (op.m,):
        raise ValueError(f"expected a length-{op.m} vector, got shape {v.shape}")
    if op.matrix is None:
        return (table.lambda_dagger - op.gram_eigenvalues) * v
    return table.lambda_dagger * v - op.forward(op.adjoint(v))


@dataclass(frozen=True, eq=False)
class SpectralTable:
    """Normalized trace moments of ``A A^H``, ``B`` and ``W_t = A^H B^t A``.

    ``wbar[i, j] = lambda_dagger * w[i+j] - w[i+j+1] - w[i] * w[j]``, which is
    ``(1/N) tr{(w_i I - W_i)^H (w_j I - W_j)}``.
    """

    n: int
    m: int
    eigenvalues: np.ndarray
    lambda_moments: np.ndarray
    lambda_dagger: float
    lambda_min: float
    lambda_max: float
    b: np.ndarray
    w: np.ndarray
    wbar: np.ndarray
    t_max: int

    @property
    def delta(self) -> float:
        return self.m / self.n

    def check_order(self, order: int) -> None:
        if order >= self.wbar.shape[0]:
            raise IndexError(f"spectral table covers lags < {self.wbar.shape[0]}, need {order}")


def compute_spectral_table(op: LinearOperator, t_max: int) -> SpectralTable:
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    return spectral_table_from_eigenvalues(op.gram_eigenvalues, op.n, t_max)


def spectral_table_from_eigenvalues(eig, n, t_max) -> SpectralTable:
    eig = np.asarray(eig, dtype=float)
    m = eig.size
    lam_max, lam_min = float(eig.max()), float(eig.min())
    lam_dag = 0.5 * (lam_max + lam_min)
    order = 2 * t_max + 2
    ks = np.arange(order + 1)
    # Direct spectral sums; the binomial expansion loses digits at large t.
    powers = (lam_dag - eig)[None, :] ** ks[:, None]
    b = powers.sum(axis=1) / n
    if not np.all(np.isfinite(b)) or np.max(np.abs(b)) > OVERFLOW_LIMIT:
        raise SpectralOverflowError(
            f"|b_t| exceeds {OVERFLOW_LIMIT:g} below order {order}; reduce t_max ({t_max})"
        )
    lam = (eig[None, :] ** ks[:, None]).sum(axis=1) / n
    w = (powers[:-1] * eig[None, :]).sum(axis=1) / n
    q = (powers[:-1] * (eig**2)[None, :]).sum(axis=1) / n
    size = t_max + 1
    i = np.arange(size)
    wbar = q[i[:, None] + i[None, :]] - np.outer(w[:size], w[:size])
    for arr in (b, lam, w, wbar):
        arr.setflags(write=False)
    return SpectralTable(
        n=n, m=m, eigenvalues=eig, lambda_moments=lam, lambda_dagger=lam_dag,
        lambda_min=lam_min, lambda_max=lam_max, b=b, w=w, wbar=wbar, t_max=t_max,
    )


def binomial_b(table: SpectralTable, t: int) -> float:
    """``b_t`` through the binomial expansion in the ``lambda`` moments."""
    from math import comb

    ld = table.lambda_dagger
    lam = table.lambda_moments
    return sum(comb(t, i) * (-1) ** i * ld ** (t - i) * lam[i] for i in range(t + 1))


def spectral_radius_theta_B(table: SpectralTable, theta: float) -> float:
    return float(np.max(np.abs(theta * (table.lambda_dagger - table.eigenvalues))))
