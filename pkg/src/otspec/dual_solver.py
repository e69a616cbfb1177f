"""Quasi-Newton minimization of a convex dual over ``Range Gamma`` coordinates.

The dual functions handled here are finite only on an open set (pointwise
positivity of a matrix pencil on the grid) and blow up at its boundary. The
line search therefore treats an infeasible trial point exactly like an
insufficient decrease: the step is halved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

Evaluation = Optional[tuple[float, np.ndarray]]


def pencil_step_limit(M: np.ndarray, D: np.ndarray) -> float:
    """Largest ``t`` with ``M + t D`` positive definite at every grid point.

    ``M`` is a positive definite stack; the bound is ``1 / max lambda`` over
    the pointwise generalized eigenvalues of ``(D, M)``.
    """
    L = np.linalg.cholesky(M)
    X = np.linalg.solve(L, D)
    S = np.linalg.solve(L, np.conj(np.swapaxes(X, -1, -2)))
    low = float(np.min(np.linalg.eigvalsh(0.5 * (S + np.conj(np.swapaxes(S, -1, -2))))))
    return np.inf if low >= 0 else -1.0 / low


def whitened_forms(M: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """``L^{-1} Q_i L^{-*}`` for the pointwise Cholesky factor ``M = L L^*``.

    Hessians written as Gram matrices of these stay positive semidefinite in
    floating point even when ``M`` is nearly singular.
    """
    L = np.linalg.cholesky(M)
    X = np.linalg.solve(L, Q)
    return np.linalg.solve(L, np.conj(np.swapaxes(X, -1, -2)))


def gram(F: np.ndarray, n_points: int) -> np.ndarray:
    """``Re <F_i, F_j>`` averaged over the grid; ``F`` has shape ``(r, N, p, q)``."""
    flat = F.reshape(F.shape[0], -1)
    H = (flat.conj() @ flat.T).real / n_points
    return 0.5 * (H + H.T)


@dataclass(frozen=True)
class SolverOptions:
    tol_grad: float = 1e-8
    max_iter: int = 500
    eps_barrier: float = 1e-12
    armijo: float = 1e-4
    max_backtrack: int = 60
    blowup_norm: float = 1e10
    reseed_every: int = 10
    flat_rtol: float = 1e-10
    boundary_fraction: float = 0.95
    hessian_floor: float = 1e-16
    continuation: bool = True
    stage_iter: int = 50
    continuation_budget: int = 3000


@dataclass
class SolveInfo:
    coeffs: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str
    n_evals: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


def minimize_barrier_bfgs(
    evaluate: Callable[[np.ndarray], Evaluation],
    x0: np.ndarray,
    tol: float,
    opts: SolverOptions = SolverOptions(),
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    max_step: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
) -> SolveInfo:
    """BFGS with Armijo backtracking on a function with an open domain.

    ``evaluate(x)`` returns ``(f, grad)`` or ``None`` when ``x`` is outside
    the domain. Iteration stops once ``||grad|| <= tol``. When ``hessian`` is
    given, the inverse-Hessian approximation is seeded with the exact
    curvature at the start, after a failed line search and every
    ``opts.reseed_every`` iterations (if positive). ``max_step(x, p)``, if
    given, returns the largest ``t`` keeping ``x + t p`` in the domain; trial
    steps then start at a fixed fraction of it.
    """
    x = np.array(x0, dtype=float)
    first = evaluate(x)
    n_evals = 1
    if first is None:
        raise ValueError("starting point is outside the feasible set")
    f, g = first
    dim = x.size

    def seed(at):
        if hessian is None:
            return np.eye(dim), False
        try:
            w, V = np.linalg.eigh(hessian(at))
        except np.linalg.LinAlgError:
            return np.eye(dim), False
        if not np.all(np.isfinite(w)) or w[-1] <= 0:
            return np.eye(dim), False
        # curvature spans many decades near the boundary; floor it so the
        # seeded direction stays a descent direction
        w = np.maximum(w, opts.hessian_floor * w[-1])
        return (V / w) @ V.T, True

    H, scaled = seed(x)
    last_seed = 0
    history = [f]
    eps = np.finfo(float).eps

    for it in range(opts.max_iter + 1):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            return SolveInfo(x, f, g, it, True, "converged", n_evals, history)
        if it == opts.max_iter:
            break
        if np.linalg.norm(x) > opts.blowup_norm:
            return SolveInfo(
                x, f, g, it, False,
                "multiplier norm diverging while approaching the boundary; "
                "the moment target is likely infeasible",
                n_evals, history,
            )

        if hessian is not None and opts.reseed_every and it - last_seed >= opts.reseed_every:
            H, scaled = seed(x)
            last_seed = it
        p = -H @ g
        slope = g @ p
        if not slope < 0:
            H = np.eye(dim)
            scaled = False
            p, slope = -g, -gnorm**2

        # first steps along the raw gradient can be far too long
        t = 1.0 if scaled else min(1.0, 1.0 / gnorm)
        if max_step is not None:
            try:
                t = min(t, opts.boundary_fraction * max_step(x, p))
            except np.linalg.LinAlgError:
                pass  # pencil too close to singular to factor; backtracking still guards
        accepted = None
        for _ in range(opts.max_backtrack):
            trial = x + t * p
            ev = evaluate(trial)
            n_evals += 1
            if ev is not None:
                f_new, g_new = ev
                noise = 8 * eps * (abs(f) + abs(f_new))
                if f_new <= f + opts.armijo * t * slope + noise:
                    accepted = (trial, f_new, g_new)
                    break
                # near the optimum the decrease drowns in quadrature rounding;
                # fall back to progress in the gradient norm
                flat = opts.flat_rtol * (1.0 + abs(f))
                if f_new <= f + flat and np.linalg.norm(g_new) < gnorm:
                    accepted = (trial, f_new, g_new)
                    break
            t *= 0.5
        if accepted is None:
            if scaled or not np.allclose(H, np.eye(dim)):
                log.debug("line search failed at iteration %d, resetting curvature", it)
                H, scaled = seed(x) if hessian is not None and last_seed != it else (np.eye(dim), False)
                last_seed = it
                continue
            return SolveInfo(x, f, g, it, False, "line search failed", n_evals, history)

        x_new, f_new, g_new = accepted
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = (sy / (y @ y)) * np.eye(dim)
                scaled = True
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho**2 * (y @ Hy) + rho) * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
        history.append(f)

    return SolveInfo(x, f, g, opts.max_iter, False, "maximum iterations exceeded", n_evals, history)


def solve_moment_dual(prob, opts: SolverOptions, x0: np.ndarray) -> SolveInfo:
    """Minimize a moment-matching dual, falling back to target continuation.

    ``prob`` provides ``evaluate``, ``hessian``, ``max_step``, ``phi_of``,
    ``bank`` and the target coordinates ``_sigma_coords``. The direct solve is
    tried first. If it fails, the target is moved from the moments of the
    spectrum at ``x0`` (for which ``x0`` is optimal) to the requested one,
    warm starting each stage. Every intermediate target is a convex
    combination of feasible targets, so each stage is well posed.
    """
    tol = opts.tol_grad * (1.0 + np.linalg.norm(prob.sigma_hat.sigma))

    def ev(c):
        return prob.evaluate(c, opts.eps_barrier)

    info = minimize_barrier_bfgs(ev, x0, tol, opts, prob.hessian, prob.max_step)
    if info.converged or not opts.continuation:
        return info
    log.debug("direct solve failed (%s); switching to continuation", info.message)

    target = prob._sigma_coords
    start = prob.bank.adjoint_coords(prob.phi_of(x0))
    stage_opts = SolverOptions(
        tol_grad=opts.tol_grad, max_iter=opts.stage_iter, eps_barrier=opts.eps_barrier,
        armijo=opts.armijo, max_backtrack=opts.max_backtrack, blowup_norm=opts.blowup_norm,
        reseed_every=1, flat_rtol=opts.flat_rtol, boundary_fraction=opts.boundary_fraction,
        hessian_floor=opts.hessian_floor, continuation=False,
    )
    x = np.array(x0, dtype=float)
    tau, dtau = 0.0, 0.25
    used = info.iterations
    n_evals = info.n_evals
    stage = None
    while tau < 1.0 and used < opts.continuation_budget and dtau > 1e-8:
        nxt = min(1.0, tau + dtau)
        shift = (1.0 - nxt) * (start - target)

        def ev_stage(c, shift=shift):
            out = ev(c)
            return None if out is None else (out[0] + shift @ c, out[1] + shift)

        stage = minimize_barrier_bfgs(ev_stage, x, tol, stage_opts, prob.hessian, prob.max_step)
        used += stage.iterations
        n_evals += stage.n_evals
        if stage.converged:
            x, tau = stage.coeffs, nxt
            dtau = min(2.0 * dtau, 1.0)
        else:
            dtau *= 0.5
    if tau >= 1.0:
        return SolveInfo(x, stage.value, stage.grad, used, True,
                         "converged after target continuation", n_evals, stage.history)
    return SolveInfo(info.coeffs, info.value, info.grad, used, False,
                     f"{info.message}; continuation stopped at tau={tau:.3g}", n_evals, info.history)
