"""Weighted transportation (weighted Hellinger) distance between spectra.

For zero-mean Gaussian stationary processes with spectra ``Phi_x`` and
``Phi_y``, the cheapest Gaussian coupling under the cost
``E ||h * (x - y)||^2`` has squared value

    d^2 = tr int  Omega Phi_x + Omega Phi_y
                  - 2 (Phi_y^{1/2} Omega Phi_x Omega Phi_y^{1/2})^{1/2}

with ``Omega = H^* H``. For ``Omega = I`` this is the Hellinger distance
between spectral densities, and on constant spectra it is the
Bures-Wasserstein distance between Gaussian vectors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .spectral_core import MatrixGrid, ct, hermitian_sqrt, integrate_grid


@dataclass(frozen=True)
class DistanceReport:
    d_squared: float
    d: float
    term_x: float
    term_y: float
    term_cross: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def _check_compatible(*grids: MatrixGrid) -> None:
    first = grids[0]
    for g in grids[1:]:
        if g.n_points != first.n_points:
            raise ValueError(f"grid mismatch: {first.n_points} vs {g.n_points} points")
        if g.shape != first.shape:
            raise ValueError(f"dimension mismatch: {first.shape} vs {g.shape}")


# cross matrices with relative smallest eigenvalue below this use the trace form
CROSS_RCOND = 1e-12


def _distance_terms(X: np.ndarray, Y: np.ndarray, W: np.ndarray):
    """Pointwise terms on stacks of matrices (shared by grid and static versions).

    Returns ``tr(W X)``, ``tr(W Y)``, the cross trace and the pointwise squared
    distance. The latter is evaluated as the weighted gap between ``X^{1/2}``
    and the optimally coupled factor of ``Y``, a sum of squares that stays
    accurate near ``X = Y`` where ``tx + ty - 2 tc`` cancels; points whose cross
    matrix is too ill-conditioned to invert fall back to the trace form.
    """
    Ysq = hermitian_sqrt(Y)
    cross = Ysq @ W @ X @ W @ Ysq
    cross = 0.5 * (cross + ct(cross))
    tx = np.trace(W @ X, axis1=-2, axis2=-1).real
    ty = np.trace(W @ Y, axis1=-2, axis2=-1).real
    w, V = np.linalg.eigh(cross)
    norm = np.abs(w).max(axis=-1)
    if np.any(w < -1e-10 * norm[..., None]):
        raise ValueError(f"cross term is indefinite: eigenvalue {np.min(w):.3g}")
    w = np.clip(w, 0.0, None)
    tc = np.sqrt(w).sum(axis=-1)
    d2 = tx + ty - 2.0 * tc
    ok = w[..., 0] > CROSS_RCOND * norm
    if np.any(ok):
        Xsq = hermitian_sqrt(X[ok])
        Ci = (V[ok] / np.sqrt(w[ok])[..., None, :]) @ ct(V[ok])
        E = Xsq - Ysq[ok] @ Ci @ Ysq[ok] @ W[ok] @ Xsq
        d2[ok] = np.trace(ct(E) @ W[ok] @ E, axis1=-2, axis2=-1).real
    return tx, ty, tc, d2


def _report(tx: float, ty: float, tc: float, d2: float, n_points: int) -> DistanceReport:
    if d2 < -1e-9 * max(1.0, tx + ty):
        raise ArithmeticError(f"negative squared distance {d2:.3g}")
    d2 = max(d2, 0.0)
    return DistanceReport(d2, float(np.sqrt(d2)), tx, ty, tc, n_points)


def transport_distance(phi_x: MatrixGrid, phi_y: MatrixGrid, omega: MatrixGrid) -> DistanceReport:
    """Weighted transportation distance ``d_Omega(phi_x, phi_y)``."""
    _check_compatible(phi_x, phi_y, omega)
    tx, ty, tc, d2 = _distance_terms(phi_x.values, phi_y.values, omega.values)
    return _report(float(tx.mean()), float(ty.mean()), float(tc.mean()), float(d2.mean()), phi_x.n_points)


def hellinger_distance(phi_x: MatrixGrid, phi_y: MatrixGrid) -> DistanceReport:
    """Hellinger distance between multivariate spectra (unit weight)."""
    return transport_distance(phi_x, phi_y, MatrixGrid.identity(phi_x.grid, phi_x.m))


def optimal_coupling_factor(
    phi_x: MatrixGrid,
    phi_y: MatrixGrid,
    omega: MatrixGrid,
    w_x: MatrixGrid,
    tol: float = 1e-8,
) -> MatrixGrid:
    """Spectral factor of ``phi_y`` closest to ``w_x`` in the ``Omega``-weighted L2 sense.

    Returns ``W_y = Y^{1/2} (Y^{1/2} Omega X Omega Y^{1/2})^{-1/2} Y^{1/2} Omega W_x``,
    the minimizer of ``int ||W_x - W_y||_Omega^2`` over square factors of ``phi_y``.
    """
    _check_compatible(phi_x, phi_y, omega, w_x)
    X, Y, W, F = phi_x.values, phi_y.values, omega.values, w_x.values
    resid = np.max(np.abs(F @ ct(F) - X))
    if resid > tol * max(1.0, float(np.max(np.abs(X)))):
        raise ValueError(f"w_x is not a spectral factor of phi_x (residual {resid:.3g})")
    Ysq = hermitian_sqrt(Y)
    inner = hermitian_sqrt(Ysq @ W @ X @ W @ Ysq, mode="inv_sqrt", eps_coercive=0.0)
    Wy = Ysq @ inner @ Ysq @ W @ F
    return MatrixGrid(phi_x.grid, Wy, "transfer", real_process=False)


def weighted_factor_gap(w_x: MatrixGrid, w_y: MatrixGrid, omega: MatrixGrid) -> float:
    """``int ||W_x - W_y||_Omega^2 = tr int (W_x - W_y)^* Omega (W_x - W_y)``."""
    E = w_x.values - w_y.values
    return float(np.trace(ct(E) @ omega.values @ E, axis1=-2, axis2=-1).real.mean())


def static_gaussian_w2(sigma_x, sigma_y, weight=None) -> float:
    """Squared transport distance between ``N(0, sigma_x)`` and ``N(0, sigma_y)``.

    With ``weight = I`` this is the squared Bures-Wasserstein distance
    ``tr(Sx + Sy - 2 (Sy^{1/2} Sx Sy^{1/2})^{1/2})``.
    """
    Sx = np.atleast_2d(np.asarray(sigma_x, dtype=float))
    Sy = np.atleast_2d(np.asarray(sigma_y, dtype=float))
    Wt = np.eye(Sx.shape[0]) if weight is None else np.atleast_2d(np.asarray(weight, dtype=float))
    for name, S in (("sigma_x", Sx), ("sigma_y", Sy)):
        if np.linalg.eigvalsh(0.5 * (S + S.T))[0] < -1e-10 * max(1.0, np.linalg.norm(S)):
            raise ValueError(f"{name} is indefinite")
    if np.linalg.eigvalsh(0.5 * (Wt + Wt.T))[0] <= 0:
        raise ValueError("weight must be positive definite")
    tx, ty, tc, d2 = _distance_terms(*(np.asarray(S, complex)[None] for S in (Sx, Sy, Wt)))
    return _report(float(tx[0]), float(ty[0]), float(tc[0]), float(d2[0]), 1).d_squared
