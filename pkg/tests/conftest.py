import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from otspec.filter_bank import make_covariance_lag_bank
from otspec.spectral_core import FrequencyGrid, MatrixGrid, StateSpaceFilter, eval_transfer, psd_from_factor


def random_filter(rng, m=2, order=3, radius=0.7, min_sv=0.3):
    """Stable real filter with a well-conditioned feedthrough."""
    A = rng.standard_normal((order, order))
    if order:
        A *= radius / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    B = rng.standard_normal((order, m))
    C = 0.5 * rng.standard_normal((m, order))
    D = rng.standard_normal((m, m))
    s = np.linalg.svd(D, compute_uv=False)[-1]
    if s < min_sv:
        D = D + (min_sv - s + 0.5) * np.eye(m)
    return StateSpaceFilter(A, B, C, D)


def random_psd_grid(rng, grid, m=2, order=3, radius=0.7):
    """Coercive real-process spectrum ``W W^*`` (plus a small floor)."""
    W = eval_transfer(random_filter(rng, m, order, radius), grid)
    vals = W.values @ np.conj(np.swapaxes(W.values, -1, -2)) + 0.05 * np.eye(m)
    return MatrixGrid(grid, vals, "psd", real_process=True)


def random_spd(rng, m, floor=0.1):
    X = rng.standard_normal((m, m))
    return X @ X.T + floor * np.eye(m)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid256():
    return FrequencyGrid(256)


@pytest.fixture(scope="session")
def lag_bank_small():
    return make_covariance_lag_bank(2, 3, FrequencyGrid(256))


@pytest.fixture(scope="session")
def lag_bank_l12():
    return make_covariance_lag_bank(2, 12, FrequencyGrid(2048))


def random_transport_problem(rng, bank, order=2):
    """Feasible problem: target from one random spectrum, prior and weight from others."""
    from otspec.covariance_ingest import target_from_spectrum
    from otspec.transport_estimator import TransportProblem

    g = bank.grid
    truth = random_psd_grid(rng, g, bank.m, order)
    psi = random_psd_grid(rng, g, bank.m, order)
    om = random_psd_grid(rng, g, bank.m, 1, radius=0.3)
    omega = om.with_values(om.values, "weight")
    return TransportProblem(target_from_spectrum(truth, bank), psi, omega, bank), truth


def random_is_problem(rng, bank, order=2, weighted=False):
    from otspec.covariance_ingest import target_from_spectrum
    from otspec.itakura_saito import ISProblem

    g = bank.grid
    truth = random_psd_grid(rng, g, bank.m, order)
    psi = random_psd_grid(rng, g, bank.m, order)
    w = 1.5 + np.cos(g.thetas) * 0.5 if weighted else None
    return ISProblem(target_from_spectrum(truth, bank), psi, bank, w), truth


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
