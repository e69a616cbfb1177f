"""Monte Carlo comparison of the transport and Itakura-Saito estimators.

Each experiment draws a random source model ``W_xi``, a causally
invertible sensor characteristic ``H^{-1}`` and a perturbed prior ``W_p``,
simulates a short record through ``H^{-1} W_xi``, builds a feasible moment
target for the covariance-lag bank and estimates the source spectrum with
both methods. Errors are entrywise absolute deviations on the grid.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.signal import place_poles

from .covariance_ingest import DataRecord, feasible_sigma, target_from_spectrum
from .dual_solver import SolverOptions
from .filter_bank import FilterBank, make_covariance_lag_bank
from .itakura_saito import ISProblem, estimate_is
from .spectral_core import (
    FrequencyGrid,
    MatrixGrid,
    StateSpaceFilter,
    congruence,
    eval_transfer,
    psd_from_factor,
)
from .transport_estimator import TransportProblem, estimate

log = logging.getLogger(__name__)

REFERENCE_MEAN_L2 = {"transport": 30.58, "is": 37.35}
METHODS = ("transport", "is")


class GenerationError(RuntimeError):
    """A random model could not be drawn within the resampling budget."""


@dataclass(frozen=True)
class ExperimentConfig:
    n_experiments: int = 50
    m: int = 2
    state_order: int = 4
    eig_bound_model: float = 0.8
    eig_bound_h: float = 0.7
    perturbation_norm: float = 0.08
    n_samples: int = 100
    l: int = 12
    grid_points: int = 2048
    rng_seed: int = 0
    inject_prior_sigma: bool = False
    n_workers: int = 1
    tol_grad: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        for name in ("n_experiments", "m", "n_samples", "l", "grid_points", "n_workers", "max_iter"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.state_order < 0:
            raise ValueError("state_order must be >= 0")
        for name in ("eig_bound_model", "eig_bound_h"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.perturbation_norm < 0:
            raise ValueError("perturbation_norm must be >= 0")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(obj) - set(known)
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for key, val in obj.items():
            typ = type(getattr(cls(), key))
            try:
                kwargs[key] = typ(val) if typ is not bool else bool(val)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"config field {key!r}: {exc}") from exc
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


# random models ---------------------------------------------------------


def _disk_spectrum(order: int, bound: float, rng: np.random.Generator) -> list:
    """Random self-conjugate set of ``order`` points in the disk of radius ``bound``."""
    n_pairs = int(rng.integers(0, order // 2 + 1))
    pts = []
    for _ in range(n_pairs):
        r = bound * math.sqrt(rng.uniform())
        a = rng.uniform(0.0, math.pi)
        pts += [r * np.exp(1j * a), r * np.exp(-1j * a)]
    pts += list(rng.uniform(-bound, bound, order - 2 * n_pairs))
    return pts


def _random_dynamics(order: int, bound: float, rng: np.random.Generator) -> np.ndarray:
    """Real ``order x order`` matrix with eigenvalues drawn in the disk."""
    if order == 0:
        return np.zeros((0, 0))
    pts = _disk_spectrum(order, bound, rng)
    blocks, i = [], 0
    while i < len(pts):
        p = pts[i]
        if np.iscomplexobj(p) and abs(np.imag(p)) > 0:
            blocks.append(np.array([[p.real, p.imag], [-p.imag, p.real]]))
            i += 2
        else:
            blocks.append(np.array([[float(np.real(p))]]))
            i += 1
    J = np.zeros((order, order))
    k = 0
    for b in blocks:
        s = b.shape[0]
        J[k : k + s, k : k + s] = b
        k += s
    while True:
        T = rng.standard_normal((order, order))
        if np.linalg.cond(T) < 1e3:
            return T @ J @ np.linalg.inv(T)


def regularize_feedthrough(D: np.ndarray, min_sv: float = 0.1, step: float = 0.01) -> np.ndarray:
    """``D + c I`` with the smallest ``c >= 0`` giving ``sigma_min >= min_sv``."""
    smin = lambda c: np.linalg.svd(D + c * np.eye(D.shape[0]), compute_uv=False)[-1]
    if smin(0.0) >= min_sv:
        return D
    c = step
    while smin(c) < min_sv:
        c += step
    lo, hi = c - step, c
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if smin(mid) >= min_sv else (mid, hi)
    return D + hi * np.eye(D.shape[0])


def _is_coercive(filt: StateSpaceFilter, grid: FrequencyGrid) -> bool:
    try:
        psd_from_factor(eval_transfer(filt, grid))
    except ValueError:
        return False
    return True


def random_stable_factor(
    m: int,
    order: int,
    eig_bound: float,
    rng: np.random.Generator,
    grid: Optional[FrequencyGrid] = None,
    max_attempts: int = 20,
) -> StateSpaceFilter:
    """Random square filter with poles inside ``|z| <= eig_bound`` and a coercive spectrum."""
    grid = grid or FrequencyGrid()
    for _ in range(max_attempts):
        A = _random_dynamics(order, eig_bound, rng)
        B = rng.standard_normal((order, m))
        C = rng.standard_normal((m, order))
        D = regularize_feedthrough(rng.standard_normal((m, m)))
        filt = StateSpaceFilter(A, B, C, D)
        if _is_coercive(filt, grid):
            return filt
    raise GenerationError(f"no coercive factor in {max_attempts} attempts")


def random_characteristic(
    m: int,
    order: int,
    eig_bound: float,
    rng: np.random.Generator,
    grid: Optional[FrequencyGrid] = None,
    max_attempts: int = 20,
) -> StateSpaceFilter:
    """Random causally invertible ``H^{-1}``.

    Poles and zeros both lie in ``|z| <= eig_bound``: the zeros (poles of the
    inverse, ``eig(A - B D^{-1} C)``) are placed by state feedback,
    ``C = D K`` with ``eig(A - B K)`` prescribed.
    """
    grid = grid or FrequencyGrid()
    for _ in range(max_attempts):
        A = _random_dynamics(order, eig_bound, rng)
        B = rng.standard_normal((order, m))
        D = regularize_feedthrough(rng.standard_normal((m, m)))
        if order:
            zeros = np.array(_disk_spectrum(order, eig_bound, rng))
            try:
                K = place_poles(A, B, zeros).gain_matrix
            except (ValueError, np.linalg.LinAlgError):
                continue
            C = D @ K
        else:
            C = np.zeros((m, 0))
        filt = StateSpaceFilter(A, B, C, D)
        try:
            inv = filt.inverse()
        except (ValueError, np.linalg.LinAlgError):
            continue
        if inv.spectral_radius() < 1.0 and _is_coercive(filt, grid):
            return filt
    raise GenerationError(f"no causally invertible characteristic in {max_attempts} attempts")


def _scaled(X: np.ndarray, norm: float, rng: np.random.Generator) -> np.ndarray:
    if X.size == 0 or norm == 0.0:
        return np.zeros_like(X)
    d = rng.standard_normal(X.shape)
    return d * (norm / np.linalg.norm(d, np.inf))


def perturb_prior(
    model: StateSpaceFilter,
    perturbation_norm: float,
    rng: np.random.Generator,
    grid: Optional[FrequencyGrid] = None,
    max_attempts: int = 50,
) -> StateSpaceFilter:
    """Add random perturbations of infinity-norm ``perturbation_norm`` to every matrix."""
    grid = grid or FrequencyGrid()
    for _ in range(max_attempts):
        mats = [X + _scaled(X, perturbation_norm, rng) for X in (model.A, model.B, model.C, model.D)]
        try:
            filt = StateSpaceFilter(*mats)
        except ValueError:
            continue
        if _is_coercive(filt, grid):
            return filt
    raise GenerationError(f"no admissible prior perturbation in {max_attempts} attempts")


def simulate_process(shaping: StateSpaceFilter, n_samples: int, rng: np.random.Generator) -> DataRecord:
    """Drive ``shaping`` with unit white noise; drop ``ceil(10 / (1 - rho))`` steps of transient."""
    rho = shaping.spectral_radius()
    burn = math.ceil(10.0 / (1.0 - rho)) if shaping.n_states else 0
    p, m = shaping.shape
    e = rng.standard_normal((burn + n_samples, m))
    A, B, C, D = shaping.A, shaping.B, shaping.C, shaping.D
    if shaping.n_states == 0:
        y = e @ D.T
    else:
        x = np.zeros(shaping.n_states)
        y = np.empty((burn + n_samples, p))
        for t in range(burn + n_samples):
            y[t] = C @ x + D @ e[t]
            x = A @ x + B @ e[t]
    return DataRecord(y[burn:])


# study ---------------------------------------------------------------


@dataclass
class RunRecord:
    index: int
    converged: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    moment_residual: dict = field(default_factory=dict)
    l2: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict, repr=False)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and all(self.converged.get(k, False) for k in METHODS)

    def summary(self) -> dict:
        return {
            "index": self.index,
            "converged": self.converged,
            "iterations": self.iterations,
            "moment_residual": self.moment_residual,
            "l2": self.l2,
            "error": self.error,
        }


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    runs: list
    thetas: np.ndarray
    mean_curves: dict
    mean_l2: dict

    @property
    def included(self) -> list:
        return [r for r in self.runs if r.ok]

    @property
    def excluded(self) -> list:
        return [r for r in self.runs if not r.ok]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "n_runs": len(self.runs),
            "n_included": len(self.included),
            "n_excluded": len(self.excluded),
            "mean_l2": self.mean_l2,
            "reference_mean_l2": REFERENCE_MEAN_L2,
            "runs": [r.summary() for r in self.runs],
        }

    def write_curves_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "method", "i", "k", "mean_abs_error"])
            for method in METHODS:
                curve = self.mean_curves.get(method)
                if curve is None:
                    continue
                _, m, _ = curve.shape
                for i in range(m):
                    for k in range(m):
                        for th, v in zip(self.thetas, curve[:, i, k]):
                            w.writerow([repr(float(th)), method, i, k, repr(float(v))])


def error_curves(phi_true: MatrixGrid, phi_est: MatrixGrid) -> np.ndarray:
    """Entrywise ``|Phi_true - Phi_est|`` on the grid."""
    return np.abs(phi_true.values - phi_est.values)


def l2_error(phi_true: MatrixGrid, phi_est: MatrixGrid) -> float:
    """``sqrt(int ||Phi_true - Phi_est||_F^2)`` on the grid."""
    diff = phi_true.values - phi_est.values
    return float(np.sqrt(np.mean(np.sum(np.abs(diff) ** 2, axis=(-2, -1)))))


def run_experiment(index: int, config: ExperimentConfig, bank: FilterBank) -> RunRecord:
    grid = bank.grid
    rng = np.random.default_rng([config.rng_seed, index])
    rec = RunRecord(index)
    try:
        w_xi = random_stable_factor(config.m, config.state_order, config.eig_bound_model, rng, grid)
        h_inv = random_characteristic(config.m, config.state_order, config.eig_bound_h, rng, grid)
        w_p = perturb_prior(w_xi, config.perturbation_norm, rng, grid)
        phi_xi = psd_from_factor(eval_transfer(w_xi, grid))
        psi_xi = psd_from_factor(eval_transfer(w_p, grid))
        if config.inject_prior_sigma:
            psi = congruence(eval_transfer(h_inv, grid), psi_xi)
            sigma = target_from_spectrum(psi, bank)
        else:
            data = simulate_process(w_xi.series(h_inv), config.n_samples, rng)
            sigma = feasible_sigma(data, bank)
        opts = SolverOptions(tol_grad=config.tol_grad, max_iter=config.max_iter)
        t_prob = TransportProblem.indirect(sigma, psi_xi, h_inv, bank)
        results = {
            "transport": estimate(t_prob, opts),
            "is": estimate_is(ISProblem(sigma, t_prob.psi, bank, h_inv=h_inv), opts),
        }
    except Exception as exc:  # recorded, study continues
        log.warning("experiment %d failed: %s", index, exc)
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    for name, res in results.items():
        rec.converged[name] = bool(res.converged)
        rec.iterations[name] = int(res.iterations)
        rec.moment_residual[name] = float(res.moment_residual)
        rec.l2[name] = l2_error(phi_xi, res.phi_xi_hat)
        rec.curves[name] = error_curves(phi_xi, res.phi_xi_hat)
    return rec


def run_study(config: ExperimentConfig, bank: Optional[FilterBank] = None) -> ExperimentReport:
    """Run every experiment and average the converged ones.

    A run enters the aggregates only if both estimators converged, so the two
    mean curves are always computed over the same set of experiments.
    """
    grid = FrequencyGrid(config.grid_points)
    bank = bank or make_covariance_lag_bank(config.m, config.l, grid)
    idx = range(config.n_experiments)
    if config.n_workers > 1:
        with ThreadPoolExecutor(config.n_workers) as pool:
            runs = list(pool.map(lambda i: run_experiment(i, config, bank), idx))
    else:
        runs = [run_experiment(i, config, bank) for i in idx]
    runs.sort(key=lambda r: r.index)
    good = [r for r in runs if r.ok]
    mean_curves, mean_l2 = {}, {}
    for method in METHODS:
        if good:
            mean_curves[method] = np.mean([r.curves[method] for r in good], axis=0)
            mean_l2[method] = float(np.mean([r.l2[method] for r in good]))
        else:
            mean_curves[method] = None
            mean_l2[method] = float("nan")
    return ExperimentReport(config, runs, grid.thetas, mean_curves, mean_l2)
