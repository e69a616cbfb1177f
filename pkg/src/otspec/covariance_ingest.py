"""From a finite data record to a feasible moment target.

A target ``Sigma`` is feasible for the bank ``G`` when it is positive
definite and lies in ``Range Gamma``. Rather than solving a constrained
covariance-fitting problem, :func:`feasible_sigma` pushes a strictly
positive preliminary spectrum (a Bartlett-tapered correlogram) through the
bank, which produces an admissible target by construction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filter_bank import CovarianceTarget, FilterBank, gamma_apply, project_range_gamma
from .spectral_core import MatrixGrid


class FeasibilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class DataRecord:
    """``N`` samples of an ``m``-channel real time series, shape ``(N, m)``."""

    samples: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.samples, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2:
            raise ValueError(f"samples must be 2-D (N, m), got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("samples contain non-finite entries")
        if y.shape[0] < 10 * y.shape[1]:
            raise ValueError(f"need N >= 10 m samples, got N={y.shape[0]}, m={y.shape[1]}")
        y.setflags(write=False)
        object.__setattr__(self, "samples", y)

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]


def read_data_csv(path) -> DataRecord:
    """Read one row per time index; a non-numeric first row is taken as a header."""
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    return DataRecord(np.array([[float(v) for v in r] for r in rows]))


def write_data_csv(record: DataRecord, path, header: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"y{i + 1}" for i in range(record.m)])
        for row in record.samples:
            w.writerow([repr(float(v)) for v in row])


def burn_in_length(bank: FilterBank) -> int:
    return math.ceil(bank.n / bank.m) + 50


def sample_state_covariance(data: DataRecord, bank: FilterBank) -> np.ndarray:
    """Empirical second moment of ``x_{t+1} = A x_t + B y_t`` after a burn-in."""
    if data.m != bank.m:
        raise ValueError(f"data has {data.m} channels, bank expects {bank.m}")
    burn = burn_in_length(bank)
    if data.N - burn < 10 * bank.n:
        raise ValueError(
            f"record too short: {data.N} samples leave {data.N - burn} states after "
            f"burn-in, need {10 * bank.n}"
        )
    A, B = bank.A, bank.B
    X = np.empty((data.N, bank.n))
    x = np.zeros(bank.n)
    for t, y in enumerate(data.samples):
        x = A @ x + B @ y
        X[t] = x
    X = X[burn:]
    S = X.T @ X / X.shape[0]
    return 0.5 * (S + S.T)


def sample_lags(y: np.ndarray, n_lags: int) -> np.ndarray:
    """Biased estimates ``R_k = (1/N) sum_t y_{t+k} y_t^T`` for ``k = 0..n_lags``."""
    N = y.shape[0]
    return np.array([y[k:].T @ y[: N - k] / N for k in range(n_lags + 1)])


def correlogram(data: DataRecord, grid, n_lags: int) -> np.ndarray:
    """Bartlett-tapered correlogram ``sum_k w_k R_k e^{-j k theta}`` on the grid."""
    R = sample_lags(data.samples, n_lags)
    w = 1.0 - np.arange(n_lags + 1) / (n_lags + 1)
    E = np.exp(-1j * np.outer(grid.thetas, np.arange(1, n_lags + 1)))
    Rw = R[1:] * w[1:, None, None]
    vals = np.einsum("tk,kij->tij", E, Rw)
    vals = vals + np.swapaxes(vals.conj(), -1, -2) + R[0]
    return 0.5 * (vals + np.swapaxes(vals.conj(), -1, -2))


def feasible_sigma(
    data: DataRecord,
    bank: FilterBank,
    n_lags: int | None = None,
    eps_reg: float = 1e-6,
) -> CovarianceTarget:
    """Feasible moment target ``Gamma(Phi_prelim)`` built from data.

    Parameters
    ----------
    data : DataRecord
    bank : FilterBank
    n_lags : int, optional
        Correlogram lags; defaults to twice the number of bank blocks
        ``2 n / m``.
    eps_reg : float
        Minimal diagonal loading of the preliminary spectrum.
    """
    if data.m != bank.m:
        raise ValueError(f"data has {data.m} channels, bank expects {bank.m}")
    if n_lags is None:
        n_lags = 2 * math.ceil(bank.n / bank.m)
    n_lags = min(n_lags, data.N - 1)
    vals = correlogram(data, bank.grid, n_lags)
    min_eig = float(np.min(np.linalg.eigvalsh(vals)))
    reg = max(eps_reg, -1.1 * min_eig)
    vals = vals + reg * np.eye(data.m)
    try:
        phi = MatrixGrid(bank.grid, vals, "psd", real_process=True)
    except ValueError as exc:
        raise FeasibilityError(f"preliminary spectrum not coercive after regularization: {exc}") from exc
    return target_from_spectrum(phi, bank)


def target_from_spectrum(phi: MatrixGrid, bank: FilterBank) -> CovarianceTarget:
    """``Gamma(phi)`` packaged as a target, e.g. for a known true spectrum."""
    sigma = gamma_apply(bank, phi)
    _, resid = project_range_gamma(sigma, bank)
    min_eig = float(np.linalg.eigvalsh(sigma)[0])
    if min_eig <= 0:
        raise FeasibilityError(f"target not positive definite (min eigenvalue {min_eig:.3g})")
    return CovarianceTarget(sigma, resid, min_eig)
