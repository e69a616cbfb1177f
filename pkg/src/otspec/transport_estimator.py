"""Spectral estimation closest to a prior in the weighted transport distance.

Given a feasible moment target ``Sigma``, a prior ``Psi`` and a weight
``Omega = H^* H``, the estimate is

    Phi_hat = (Omega + G^* L G)^{-1} Omega Psi Omega (Omega + G^* L G)^{-1}

where ``L`` minimizes the strictly convex dual

    J(L) = tr int Omega Psi Omega (Omega + G^* L G)^{-1} + tr(Sigma L)

over symmetric ``L`` in ``Range Gamma`` with ``Omega + G^* L G > 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .dual_solver import SolveInfo, SolverOptions, gram, pencil_step_limit, solve_moment_dual, whitened_forms
from .filter_bank import CovarianceTarget, FilterBank, gamma_apply
from .spectral_core import (
    MatrixGrid,
    StateSpaceFilter,
    congruence,
    ct,
    eval_transfer,
    pointwise_inverse,
)


class BoundaryError(ValueError):
    """Multiplier outside the open set where the dual is finite."""


@dataclass(frozen=True, eq=False)
class Multiplier:
    """Symmetric multiplier ``lambda = sum_i coeffs_i E_i`` in ``Range Gamma``."""

    coeffs: np.ndarray
    lam: np.ndarray
    admissible: bool = True
    info: Optional[SolveInfo] = field(default=None, repr=False)

    @classmethod
    def from_coeffs(cls, coeffs, bank: FilterBank, admissible: bool = True, info=None) -> "Multiplier":
        coeffs = np.asarray(coeffs, dtype=float)
        return cls(coeffs, bank.assemble(coeffs), admissible, info)

    @classmethod
    def zero(cls, bank: FilterBank) -> "Multiplier":
        return cls.from_coeffs(np.zeros(bank.dim_range), bank)

    def to_dict(self) -> dict:
        return {"coeffs": self.coeffs.tolist(), "lambda": self.lam.tolist()}


def _check_target(sigma_hat: CovarianceTarget, bank: FilterBank) -> None:
    if sigma_hat.sigma.shape != (bank.n, bank.n):
        raise ValueError(f"target is {sigma_hat.sigma.shape}, bank state dimension is {bank.n}")
    if not sigma_hat.is_admissible():
        raise ValueError(
            f"moment target not feasible: min eigenvalue {sigma_hat.min_eig:.3g}, "
            f"Range Gamma residual {sigma_hat.feasibility_residual:.3g}"
        )


@dataclass(frozen=True, eq=False)
class TransportProblem:
    """Moment target, measurement-side prior ``psi`` and weight ``omega``.

    ``h_inv`` (the sensor characteristic ``H^{-1}``) is only needed to map the
    estimate back to the source side.
    """

    sigma_hat: CovarianceTarget
    psi: MatrixGrid
    omega: MatrixGrid
    bank: FilterBank
    h_inv: Optional[StateSpaceFilter] = None

    def __post_init__(self):
        _check_target(self.sigma_hat, self.bank)
        for name, g in (("psi", self.psi), ("omega", self.omega)):
            if g.n_points != self.bank.grid.n_points or g.m != self.bank.m:
                raise ValueError(f"{name} grid does not match the filter bank")
        W = self.omega.values
        K = W @ self.psi.values @ W
        object.__setattr__(self, "_K", 0.5 * (K + ct(K)))
        object.__setattr__(self, "_K_factor", np.linalg.cholesky(self._K))
        object.__setattr__(self, "_sigma_coords", self.bank.coords(self.sigma_hat.sigma))

    @classmethod
    def indirect(
        cls,
        sigma_hat: CovarianceTarget,
        psi_source: MatrixGrid,
        h_inv: StateSpaceFilter,
        bank: FilterBank,
    ) -> "TransportProblem":
        """Problem for data measured through ``H^{-1}`` with a source-side prior."""
        Hinv = eval_transfer(h_inv, bank.grid)
        H = pointwise_inverse(Hinv)
        psi = congruence(Hinv, psi_source)
        omega = MatrixGrid(bank.grid, ct(H.values) @ H.values, "weight", real_process=True)
        return cls(sigma_hat, psi, omega, bank, h_inv)

    # evaluations in Range Gamma coordinates ----------------------------
    def pencil(self, coeffs) -> np.ndarray:
        return self.omega.values + self.bank.quad_form_coords(coeffs)

    def evaluate(self, coeffs, eps_barrier: float = 1e-12):
        """``(J, grad)`` at ``coeffs``, or ``None`` outside the domain."""
        M = self.pencil(coeffs)
        if np.min(np.linalg.eigvalsh(M)) < eps_barrier:
            return None
        Minv = np.linalg.inv(M)
        J = np.trace(self._K @ Minv, axis1=-2, axis2=-1).real.mean() + self._sigma_coords @ coeffs
        phi = Minv @ self._K @ Minv
        grad = self._sigma_coords - self.bank.adjoint_coords(phi)
        return float(J), grad

    def max_step(self, coeffs, direction) -> float:
        return pencil_step_limit(self.pencil(coeffs), self.bank.quad_form_coords(direction))

    def hessian(self, coeffs) -> np.ndarray:
        """``d^2 J / dc_i dc_j = 2 Re tr int Phi Q_i M^{-1} Q_j``."""
        M = self.pencil(coeffs)
        Bq = whitened_forms(M, self.bank.quad_forms)
        C = np.linalg.solve(np.linalg.cholesky(M), self._K_factor)
        return 2.0 * gram(Bq @ C, self.bank.grid.n_points)

    def phi_of(self, coeffs) -> np.ndarray:
        Minv = np.linalg.inv(self.pencil(coeffs))
        phi = Minv @ self._K @ Minv
        return 0.5 * (phi + ct(phi))


@dataclass(frozen=True, eq=False)
class EstimationResult:
    multiplier: Multiplier
    phi_hat: MatrixGrid
    phi_xi_hat: Optional[MatrixGrid]
    moment_residual: float
    dual_value: float
    iterations: int
    converged: bool
    method: str = "transport"
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "converged": bool(self.converged),
            "message": self.message,
            "iterations": int(self.iterations),
            "moment_residual": float(self.moment_residual),
            "dual_value": float(self.dual_value),
            "multiplier": self.multiplier.to_dict(),
            "phi_hat": self.phi_hat.to_dict(),
            "phi_xi_hat": None if self.phi_xi_hat is None else self.phi_xi_hat.to_dict(),
        }


def dual_objective(lam: Multiplier, prob: TransportProblem, eps_barrier: float = 1e-12) -> float:
    ev = prob.evaluate(lam.coeffs, eps_barrier)
    if ev is None:
        raise BoundaryError("Omega + G* Lambda G is not positive definite on the grid")
    return ev[0]


def dual_gradient(lam: Multiplier, prob: TransportProblem, eps_barrier: float = 1e-12) -> np.ndarray:
    """Projection of ``Sigma - Gamma(Phi(Lambda))`` onto ``Range Gamma``."""
    ev = prob.evaluate(lam.coeffs, eps_barrier)
    if ev is None:
        raise BoundaryError("Omega + G* Lambda G is not positive definite on the grid")
    return prob.bank.assemble(ev[1])


def solve_dual(
    prob: TransportProblem,
    opts: SolverOptions = SolverOptions(),
    start: Optional[Multiplier] = None,
) -> Multiplier:
    """Minimize the dual; the returned multiplier carries the solver ``info``."""
    x0 = np.zeros(prob.bank.dim_range) if start is None else start.coeffs
    info = solve_moment_dual(prob, opts, x0)
    return Multiplier.from_coeffs(info.coeffs, prob.bank, True, info)


def reconstruct_phi(lam: Multiplier, prob: TransportProblem) -> MatrixGrid:
    M = prob.pencil(lam.coeffs)
    if np.min(np.linalg.eigvalsh(M)) <= 0:
        raise BoundaryError("multiplier outside the admissible set")
    return MatrixGrid(
        prob.bank.grid,
        prob.phi_of(lam.coeffs),
        "psd",
        prob.psi.real_process and prob.omega.real_process,
        eps_coercive=0.0,
    )


def indirect_spectrum(
    phi: MatrixGrid,
    h_inv: StateSpaceFilter,
    direction: Literal["to_source", "to_measurement"] = "to_source",
) -> MatrixGrid:
    """Map between measurement side ``Phi`` and source side ``H Phi H^*``."""
    Hinv = eval_transfer(h_inv, phi.grid)
    if direction == "to_source":
        T = pointwise_inverse(Hinv)
    elif direction == "to_measurement":
        T = Hinv
    else:
        raise ValueError(f"unknown direction {direction!r}")
    vals = T.values @ phi.values @ ct(T.values)
    if phi.kind != "transfer":
        vals = 0.5 * (vals + ct(vals))
    return MatrixGrid(phi.grid, vals, phi.kind, phi.real_process, eps_coercive=0.0)


def moment_residual(phi: MatrixGrid, prob_bank: FilterBank, sigma: np.ndarray) -> float:
    return float(np.linalg.norm(gamma_apply(prob_bank, phi) - sigma) / np.linalg.norm(sigma))


def estimate(
    prob: TransportProblem,
    opts: SolverOptions = SolverOptions(),
    start: Optional[Multiplier] = None,
) -> EstimationResult:
    """Solve the dual, rebuild the spectrum and, if ``h_inv`` is set, the source spectrum."""
    lam = solve_dual(prob, opts, start)
    phi = reconstruct_phi(lam, prob)
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
        "transport",
        info.message,
    )
