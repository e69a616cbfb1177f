"""Itakura-Saito competitor estimator.

With a scalar weight ``omega`` (``omega = 1`` gives the plain IS estimator)
the estimate is ``Phi = (Psi^{-1} + omega^{-1} G^* L G)^{-1}`` with ``L``
minimizing

    J(L) = -int omega log det(Psi^{-1} + omega^{-1} G^* L G) + tr(Sigma L).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dual_solver import SolverOptions, gram, pencil_step_limit, solve_moment_dual, whitened_forms
from .filter_bank import CovarianceTarget, FilterBank
from .spectral_core import MatrixGrid, StateSpaceFilter, ct, hermitian_sqrt
from .transport_estimator import (
    BoundaryError,
    EstimationResult,
    Multiplier,
    _check_target,
    indirect_spectrum,
    moment_residual,
)


def _logdet(M: np.ndarray, what: str) -> np.ndarray:
    sign, ld = np.linalg.slogdet(M)
    if np.any(sign.real <= 0):
        raise ValueError(f"{what} is not positive definite on the grid")
    return ld


def _check_pair(*grids: MatrixGrid) -> None:
    for g in grids[1:]:
        if g.n_points != grids[0].n_points or g.shape != grids[0].shape:
            raise ValueError("grids disagree on size or dimension")
    for g in grids:
        if g.min_eigenvalue() <= 0:
            raise ValueError("divergence needs coercive spectra")


def is_divergence(psi: MatrixGrid, phi: MatrixGrid) -> float:
    """``tr int log|Psi| - log|Phi| + Phi Psi^{-1} - I``."""
    _check_pair(psi, phi)
    P, F = psi.values, phi.values
    tr = np.trace(np.linalg.solve(P, F), axis1=-2, axis2=-1).real
    val = (_logdet(P, "psi") - _logdet(F, "phi") + tr - psi.m).mean()
    if val < -1e-9:
        raise ArithmeticError(f"negative divergence {val:.3g}")
    return float(max(val, 0.0))


def _logm(P: np.ndarray) -> np.ndarray:
    """Pointwise principal logarithm of a Hermitian positive definite stack."""
    w, V = np.linalg.eigh(P)
    return (V * np.log(w)[..., None, :]) @ ct(V)


def weighted_is_divergence(psi: MatrixGrid, phi: MatrixGrid, omega: MatrixGrid) -> float:
    """``tr int Omega (log Psi - log Phi + W_psi^{-1} Phi W_psi^{-*} - I)``.

    ``log`` is the matrix logarithm and ``W_psi`` the pointwise principal
    square root of ``psi``. For ``Omega = I`` this is :func:`is_divergence`.

    The value is a divergence (nonnegative, zero only at ``phi = psi``) when
    ``Omega`` commutes with ``psi`` at every frequency, e.g. a scalar weight
    ``omega I``. For other weights ``phi = psi`` is not a stationary point
    and negative values occur; they are returned unclamped with a warning.
    """
    _check_pair(psi, phi, omega)
    P, F, W = psi.values, phi.values, omega.values
    Ri = hermitian_sqrt(P, mode="inv_sqrt")
    inner = _logm(P) - _logm(F) + Ri @ F @ Ri - np.eye(psi.m)
    val = float(np.trace(W @ inner, axis1=-2, axis2=-1).real.mean())
    if val < -1e-9:
        warnings.warn(
            f"weighted IS value {val:.3g} is negative; the weight does not commute with psi",
            RuntimeWarning,
            stacklevel=2,
        )
        return val
    return max(val, 0.0)


@dataclass(frozen=True, eq=False)
class ISProblem:
    """Moment target, prior and optional scalar weight (samples on the grid)."""

    sigma_hat: CovarianceTarget
    psi: MatrixGrid
    bank: FilterBank
    weight_scalar: Optional[np.ndarray] = None
    h_inv: Optional[StateSpaceFilter] = None

    def __post_init__(self):
        _check_target(self.sigma_hat, self.bank)
        if self.psi.n_points != self.bank.grid.n_points or self.psi.m != self.bank.m:
            raise ValueError("psi grid does not match the filter bank")
        w = self.weight_scalar
        if w is not None:
            w = np.broadcast_to(np.asarray(w, dtype=float).ravel(), (self.bank.grid.n_points,))
            if np.min(w) < 1e-10:
                raise ValueError("scalar weight must be coercive")
            object.__setattr__(self, "weight_scalar", np.array(w))
        psi_inv = np.linalg.inv(self.psi.values)
        object.__setattr__(self, "_psi_inv", 0.5 * (psi_inv + ct(psi_inv)))
        object.__setattr__(self, "_sigma_coords", self.bank.coords(self.sigma_hat.sigma))

    @property
    def method(self) -> str:
        return "is" if self.weight_scalar is None else "is_weighted"

    def _omega(self):
        return 1.0 if self.weight_scalar is None else self.weight_scalar

    def pencil(self, coeffs) -> np.ndarray:
        Q = self.bank.quad_form_coords(coeffs)
        if self.weight_scalar is not None:
            Q = Q / self.weight_scalar[:, None, None]
        return self._psi_inv + Q

    def evaluate(self, coeffs, eps_barrier: float = 1e-12):
        M = self.pencil(coeffs)
        if np.min(np.linalg.eigvalsh(M)) < eps_barrier:
            return None
        _, ld = np.linalg.slogdet(M)
        J = -np.mean(self._omega() * ld) + self._sigma_coords @ coeffs
        phi = np.linalg.inv(M)
        grad = self._sigma_coords - self.bank.adjoint_coords(phi)
        return float(J), grad

    def max_step(self, coeffs, direction) -> float:
        D = self.bank.quad_form_coords(direction)
        if self.weight_scalar is not None:
            D = D / self.weight_scalar[:, None, None]
        return pencil_step_limit(self.pencil(coeffs), D)

    def hessian(self, coeffs) -> np.ndarray:
        """``d^2 J / dc_i dc_j = int omega^{-1} tr(M^{-1} Q_i M^{-1} Q_j)``."""
        Q = self.bank.quad_forms
        if self.weight_scalar is not None:
            Q = Q / np.sqrt(self.weight_scalar)[:, None, None]
        return gram(whitened_forms(self.pencil(coeffs), Q), self.bank.grid.n_points)

    def phi_of(self, coeffs) -> np.ndarray:
        phi = np.linalg.inv(self.pencil(coeffs))
        return 0.5 * (phi + ct(phi))


def is_dual_objective(lam: Multiplier, prob: ISProblem, eps_barrier: float = 1e-12) -> float:
    ev = prob.evaluate(lam.coeffs, eps_barrier)
    if ev is None:
        raise BoundaryError("Psi^{-1} + G* Lambda G / omega is not positive definite on the grid")
    return ev[0]


def is_dual_gradient(lam: Multiplier, prob: ISProblem, eps_barrier: float = 1e-12) -> np.ndarray:
    ev = prob.evaluate(lam.coeffs, eps_barrier)
    if ev is None:
        raise BoundaryError("Psi^{-1} + G* Lambda G / omega is not positive definite on the grid")
    return prob.bank.assemble(ev[1])


def solve_is_dual(
    prob: ISProblem,
    opts: SolverOptions = SolverOptions(),
    start: Optional[Multiplier] = None,
) -> Multiplier:
    x0 = np.zeros(prob.bank.dim_range) if start is None else start.coeffs
    info = solve_moment_dual(prob, opts, x0)
    return Multiplier.from_coeffs(info.coeffs, prob.bank, True, info)


def reconstruct_phi_is(lam: Multiplier, prob: ISProblem) -> MatrixGrid:
    M = prob.pencil(lam.coeffs)
    if np.min(np.linalg.eigvalsh(M)) <= 0:
        raise BoundaryError("multiplier outside the admissible set")
    return MatrixGrid(prob.bank.grid, prob.phi_of(lam.coeffs), "psd", prob.psi.real_process, eps_coercive=0.0)


def estimate_is(
    prob: ISProblem,
    opts: SolverOptions = SolverOptions(),
    start: Optional[Multiplier] = None,
) -> EstimationResult:
    lam = solve_is_dual(prob, opts, start)
    phi = reconstruct_phi_is(lam, prob)
    phi_xi = indirect_spectrum(phi, prob.h_inv) if prob.h_inv is not None else None
    info = lam.info
    return EstimationResult(
        lam,
        phi,
        phi_xi,
        moment_residual(phi, prob.bank, prob.sigma_hat.sigma),
        info.value,
        info.iterations,
        info.converged,
        prob.method,
        info.message,
    )
