"""Filter banks ``G(z) = (zI - A)^{-1} B`` and the moment operator.

``Gamma(Phi) = int G Phi G^*`` maps a spectrum to the steady-state covariance
of the bank output. The dual estimators search for multipliers in
``Range Gamma``; here that subspace is computed numerically as the
orthogonal complement (trace inner product) of the kernel of the adjoint
map ``Lambda -> G^* Lambda G``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral_core import (
    DEFAULT_N_POINTS,
    FrequencyGrid,
    MatrixGrid,
    StateSpaceFilter,
    ct,
    eval_transfer,
)

RANK_RTOL = 1e-9
RANK_GAP = 1e3


class RangeRankError(RuntimeError):
    """Numerical rank of the adjoint map is ambiguous on this grid."""


def sym_basis(n: int) -> np.ndarray:
    """Trace-orthonormal basis of real symmetric ``n x n`` matrices.

    Returns an array of shape ``(n (n + 1) / 2, n, n)``.
    """
    out = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            if i == j:
                E[i, i] = 1.0
            else:
                E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
            out.append(E)
    return np.array(out)


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Reachable bank ``(A, B)`` with its grid evaluation and ``Range Gamma`` basis.

    Attributes
    ----------
    grid_eval : MatrixGrid
        ``G(e^{j theta_k})``, ``n x m`` per angle.
    range_basis : ndarray, shape (r, n, n)
        Trace-orthonormal real symmetric matrices spanning ``Range Gamma``.
    kernel_basis : ndarray, shape (q, n, n)
        Orthonormal basis of the complement ``[Range Gamma]^perp``.
    quad_forms : ndarray, shape (r, n_points, m, m)
        ``G^* E_i G`` on the grid, for each range basis element.
    """

    A: np.ndarray
    B: np.ndarray
    grid: FrequencyGrid = field(default_factory=lambda: FrequencyGrid(DEFAULT_N_POINTS))
    grid_eval: MatrixGrid = field(init=False, repr=False)
    range_basis: np.ndarray = field(init=False, repr=False)
    kernel_basis: np.ndarray = field(init=False, repr=False)
    quad_forms: np.ndarray = field(init=False, repr=False)
    singular_gap: float = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        n, m = B.shape
        if A.shape != (n, n):
            raise ValueError(f"A must be {n}x{n}, got {A.shape}")
        if n <= m:
            raise ValueError(f"bank needs n > m, got n={n}, m={m}")
        if np.linalg.matrix_rank(B) != m:
            raise ValueError("B must have full column rank")
        if np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
            raise ValueError("A must be a stability matrix")
        reach = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
        if np.linalg.matrix_rank(reach) != n:
            raise ValueError("(A, B) is not reachable")
        if self.grid.n_points < 2 * n:
            # coarser grids alias the harmonics of G^* Lambda G and shrink the range
            raise ValueError(f"grid of {self.grid.n_points} points too coarse for n={n}; need at least {2 * n}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        filt = StateSpaceFilter(A, B, np.eye(n), np.zeros((n, m)))
        object.__setattr__(self, "grid_eval", eval_transfer(filt, self.grid))
        self._compute_range()

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def dim_range(self) -> int:
        return self.range_basis.shape[0]

    def quad_form(self, lam: np.ndarray) -> np.ndarray:
        """``G^* Lambda G`` on the grid, shape ``(n_points, m, m)``."""
        G = self.grid_eval.values
        return ct(G) @ lam @ G

    def _compute_range(self):
        n = self.n
        basis = sym_basis(n)
        G = self.grid_eval.values
        # samples of G^* E G for every coordinate matrix E, in sym_basis order
        P = np.einsum("kai,kbj->abkij", G.conj(), G)
        iu = np.triu_indices(n)
        diag = iu[0] == iu[1]
        Q = P[iu] + np.swapaxes(P, 0, 1)[iu]
        Q[diag] *= 0.5
        Q[~diag] /= np.sqrt(2.0)
        del P
        M = np.concatenate([Q.real.reshape(len(basis), -1), Q.imag.reshape(len(basis), -1)], axis=1).T
        if M.shape[0] < M.shape[1]:
            M = np.vstack([M, np.zeros((M.shape[1] - M.shape[0], M.shape[1]))])
        _, s_full, Vt = np.linalg.svd(M, full_matrices=False)
        keep = s_full > RANK_RTOL * s_full[0]
        r = int(np.count_nonzero(keep))
        if r < len(basis):
            gap = s_full[r - 1] / max(s_full[r], np.finfo(float).tiny)
            if gap < RANK_GAP:
                raise RangeRankError(
                    f"singular-value gap {gap:.3g} < {RANK_GAP:g}; use a larger grid"
                )
        else:
            gap = np.inf
        rng_coords = Vt[:r]
        ker_coords = Vt[r:]
        object.__setattr__(self, "range_basis", np.einsum("rs,sij->rij", rng_coords, basis))
        object.__setattr__(self, "kernel_basis", np.einsum("rs,sij->rij", ker_coords, basis))
        object.__setattr__(self, "quad_forms", np.einsum("rs,skij->rkij", rng_coords, Q))
        object.__setattr__(self, "singular_gap", float(gap))

    # coordinates -------------------------------------------------------
    def coords(self, sigma: np.ndarray) -> np.ndarray:
        """Coordinates of the projection of ``sigma`` onto ``Range Gamma``."""
        return np.einsum("rij,ij->r", self.range_basis, np.asarray(sigma, dtype=float))

    def assemble(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("r,rij->ij", np.asarray(coeffs, dtype=float), self.range_basis)

    def quad_form_coords(self, coeffs: np.ndarray) -> np.ndarray:
        """``G^* Lambda G`` for ``Lambda = assemble(coeffs)``, without forming ``Lambda``."""
        return np.einsum("r,rkij->kij", coeffs, self.quad_forms)

    def adjoint_coords(self, phi_values: np.ndarray) -> np.ndarray:
        """``<E_i, Gamma(Phi)>`` for every range basis element ``E_i``."""
        return np.einsum("rkij,kji->r", self.quad_forms, phi_values).real / self.grid.n_points

    # serialization -----------------------------------------------------
    @classmethod
    def from_config(cls, spec: dict, grid: FrequencyGrid | None = None) -> "FilterBank":
        grid = grid or FrequencyGrid(DEFAULT_N_POINTS)
        kind = spec.get("type")
        if kind == "covariance_lags":
            return make_covariance_lag_bank(int(spec["m"]), int(spec["l"]), grid)
        if kind == "state_space":
            return cls(np.asarray(spec["A"], dtype=float), np.asarray(spec["B"], dtype=float), grid)
        raise ValueError(f"bank.type must be 'covariance_lags' or 'state_space', got {kind!r}")


def make_covariance_lag_bank(m: int, l: int, grid: FrequencyGrid | None = None) -> FilterBank:
    """Bank ``G(z) = [z^{-l} I, ..., z^{-1} I]^T`` (``n = l m``).

    The input enters the last block and is shifted upward one block per step,
    so block ``i`` (from the top) holds ``y_{t-l+i-1}``.
    """
    if m < 1 or l < 2:
        raise ValueError(f"need m >= 1 and l >= 2, got m={m}, l={l}")
    n = l * m
    A = np.eye(n, k=m)
    B = np.zeros((n, m))
    B[-m:, :] = np.eye(m)
    return FilterBank(A, B, grid or FrequencyGrid(DEFAULT_N_POINTS))


def gamma_apply(bank: FilterBank, phi: MatrixGrid, rtol: float = 1e-10) -> np.ndarray:
    """``int G Phi G^*`` as a real symmetric ``n x n`` matrix."""
    if phi.n_points != bank.grid.n_points or phi.m != bank.m:
        raise ValueError("spectrum and filter bank disagree on grid or dimension")
    G = bank.grid_eval.values
    S = (G @ phi.values @ ct(G)).mean(axis=0)
    scale = max(np.linalg.norm(S), np.finfo(float).tiny)
    if np.linalg.norm(S.imag) > rtol * scale:
        raise ValueError(
            f"imaginary part {np.linalg.norm(S.imag):.3g} too large: input is not a real-process spectrum"
        )
    S = S.real
    return 0.5 * (S + S.T)


def compute_range_basis(bank: FilterBank) -> np.ndarray:
    return bank.range_basis


def project_range_gamma(sigma: np.ndarray, bank: FilterBank) -> tuple[np.ndarray, float]:
    """Orthogonal projection onto ``Range Gamma`` and the residual norm."""
    sigma = np.asarray(sigma, dtype=float)
    proj = bank.assemble(bank.coords(sigma))
    return proj, float(np.linalg.norm(sigma - proj))


@dataclass(frozen=True)
class CovarianceTarget:
    sigma: np.ndarray
    feasibility_residual: float
    min_eig: float

    @classmethod
    def from_matrix(cls, sigma, bank: FilterBank) -> "CovarianceTarget":
        sigma = np.asarray(sigma, dtype=float)
        sigma = 0.5 * (sigma + sigma.T)
        _, resid = project_range_gamma(sigma, bank)
        return cls(sigma, resid, float(np.linalg.eigvalsh(sigma)[0]))

    def is_admissible(self, rtol: float = 1e-8) -> bool:
        return self.min_eig > 0 and self.feasibility_residual <= rtol * np.linalg.norm(self.sigma)
