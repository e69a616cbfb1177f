"""Matrix-valued functions sampled on the unit circle.

A spectrum, a weight or a transfer matrix is stored as a stack of
``(n_points, p, m)`` complex matrices evaluated at the uniform angles
``theta_k = 2 pi k / n_points``. Integrals over the circle are taken with
respect to the normalized Lebesgue measure, i.e. they are plain averages
over the grid (periodic trapezoidal rule).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

EPS_COERCIVE = 1e-10
COND_LIMIT = 1e12
DEFAULT_N_POINTS = 2048
REAL_SYM_RTOL = 1e-7

Kind = Literal["transfer", "psd", "weight"]


class CoercivityError(ValueError):
    """A spectrum or weight is not uniformly positive definite on the grid."""


class IllConditionedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform grid of ``n_points`` angles on ``[0, 2 pi)``."""

    n_points: int = DEFAULT_N_POINTS

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 4:
            raise ValueError(f"n_points must be an integer >= 4, got {self.n_points}")

    @property
    def thetas(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_points) / self.n_points

    @property
    def z(self) -> np.ndarray:
        """Points ``e^{j theta_k}`` on the unit circle."""
        return np.exp(1j * self.thetas)

    def mirror_index(self) -> np.ndarray:
        """Index of ``2 pi - theta_k`` for every ``k``."""
        return (-np.arange(self.n_points)) % self.n_points


@dataclass(frozen=True)
class StateSpaceFilter:
    """Rational transfer matrix ``C (zI - A)^{-1} B + D``.

    ``A`` may be empty (``n_s = 0``) in which case the filter is the constant
    matrix ``D``. The output dimension may differ from the input dimension
    (filter banks are tall).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        p, m = D.shape
        A = np.asarray(self.A, dtype=float)
        ns = A.shape[0] if A.size else 0
        A = A.reshape(ns, ns)
        B = np.asarray(self.B, dtype=float).reshape(ns, m)
        C = np.asarray(self.C, dtype=float).reshape(p, ns)
        for name, arr in (("A", A), ("B", B), ("C", C), ("D", D)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if ns and self.spectral_radius() >= 1.0:
            raise ValueError(f"filter is not stable: spectral radius {self.spectral_radius():.6g} >= 1")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.D.shape

    def spectral_radius(self) -> float:
        if self.n_states == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def inverse(self) -> "StateSpaceFilter":
        """Realization of the inverse transfer matrix (square, invertible ``D``).

        Raises ``ValueError`` when the inverse is not stable, i.e. the filter is
        not causally invertible.
        """
        if self.D.shape[0] != self.D.shape[1]:
            raise ValueError("only square filters can be inverted")
        Dinv = np.linalg.inv(self.D)
        return StateSpaceFilter(
            self.A - self.B @ Dinv @ self.C,
            self.B @ Dinv,
            -Dinv @ self.C,
            Dinv,
        )

    def series(self, after: "StateSpaceFilter") -> "StateSpaceFilter":
        """Series connection ``after(z) @ self(z)``: ``self`` acts first."""
        A1, B1, C1, D1 = self.A, self.B, self.C, self.D
        A2, B2, C2, D2 = after.A, after.B, after.C, after.D
        n1, n2 = A1.shape[0], A2.shape[0]
        A = np.block([[A1, np.zeros((n1, n2))], [B2 @ C1, A2]])
        B = np.vstack([B1, B2 @ D1])
        C = np.hstack([D2 @ C1, C2])
        return StateSpaceFilter(A, B, C, D2 @ D1)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in "ABCD"}

    @classmethod
    def from_dict(cls, spec: dict) -> "StateSpaceFilter":
        if "D" not in spec:
            raise KeyError("filter spec missing field 'D'")
        D = np.atleast_2d(np.asarray(spec["D"], dtype=float))
        p, m = D.shape
        A = np.asarray(spec.get("A", np.zeros((0, 0))), dtype=float)
        ns = A.shape[0] if A.size else 0
        return cls(
            A.reshape(ns, ns),
            np.asarray(spec.get("B", np.zeros((ns, m))), dtype=float).reshape(ns, m),
            np.asarray(spec.get("C", np.zeros((p, ns))), dtype=float).reshape(p, ns),
            D,
        )

    @classmethod
    def constant(cls, D) -> "StateSpaceFilter":
        D = np.atleast_2d(np.asarray(D, dtype=float))
        p, m = D.shape
        return cls(np.zeros((0, 0)), np.zeros((0, m)), np.zeros((p, 0)), D)


@dataclass(frozen=True, eq=False)
class MatrixGrid:
    """Samples of a matrix function on a :class:`FrequencyGrid`.

    Parameters
    ----------
    grid : FrequencyGrid
    values : array, shape (n_points, p, m)
        One complex matrix per angle.
    kind : {"transfer", "psd", "weight"}
        ``psd`` and ``weight`` values must be Hermitian and coercive.
    real_process : bool
        Assert ``F(e^{-j theta}) = conj(F(e^{j theta}))``, which holds for
        real-coefficient filters and, equivalently ``F(e^{-j theta}) =
        F(e^{j theta})^T``, for spectra of real-valued processes.
    eps_coercive : float
        Smallest admissible eigenvalue for ``psd``/``weight`` grids.
    """

    grid: FrequencyGrid
    values: np.ndarray
    kind: Kind = "psd"
    real_process: bool = False
    eps_coercive: float = field(default=EPS_COERCIVE, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.ndim == 1:
            vals = vals[:, None, None]
        if vals.ndim != 3 or vals.shape[0] != self.grid.n_points:
            raise ValueError(
                f"values must have shape ({self.grid.n_points}, p, m), got {vals.shape}"
            )
        if self.kind not in ("transfer", "psd", "weight"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind != "transfer":
            if vals.shape[1] != vals.shape[2]:
                raise ValueError(f"{self.kind} grid must be square, got {vals.shape[1:]}")
            scale = max(1.0, float(np.max(np.abs(vals))))
            asym = np.max(np.abs(vals - _ct(vals)))
            if asym > 1e-10 * scale:
                raise ValueError(f"{self.kind} grid is not Hermitian (deviation {asym:.3g})")
            vals = 0.5 * (vals + _ct(vals))
            min_eigs = np.linalg.eigvalsh(vals)[:, 0]
            k = int(np.argmin(min_eigs))
            if min_eigs[k] < self.eps_coercive:
                raise CoercivityError(
                    f"{self.kind} grid not coercive: min eigenvalue {min_eigs[k]:.3g} "
                    f"at theta_{k} = {self.grid.thetas[k]:.6f}"
                )
        if self.real_process:
            idx = self.grid.mirror_index()
            mirror = vals[idx]
            dev = np.max(np.abs(mirror - vals.conj()))
            scale = max(1.0, float(np.max(np.abs(vals))))
            # derived grids pass through pointwise inverses, which amplify rounding
            if dev > REAL_SYM_RTOL * scale:
                raise ValueError(f"grid violates real-process symmetry (deviation {dev:.3g})")
            vals = 0.5 * (vals + mirror.conj())
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_points(self) -> int:
        return self.grid.n_points

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    def with_values(self, values, kind: Kind | None = None) -> "MatrixGrid":
        return MatrixGrid(self.grid, values, kind or self.kind, self.real_process, self.eps_coercive)

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(0.5 * (self.values + _ct(self.values)))))

    @classmethod
    def constant(cls, grid: FrequencyGrid, M, kind: Kind = "psd") -> "MatrixGrid":
        M = np.atleast_2d(np.asarray(M, dtype=complex))
        vals = np.broadcast_to(M, (grid.n_points,) + M.shape)
        return cls(grid, vals, kind, real_process=bool(np.all(M.imag == 0)))

    @classmethod
    def identity(cls, grid: FrequencyGrid, m: int, kind: Kind = "weight") -> "MatrixGrid":
        return cls.constant(grid, np.eye(m), kind)

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        stacked = np.stack([self.values.real, self.values.imag], axis=-1)
        return {
            "n_points": self.n_points,
            "m": self.m,
            "kind": self.kind,
            "real_process": bool(self.real_process),
            "values": stacked.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MatrixGrid":
        for key in ("n_points", "kind", "values"):
            if key not in obj:
                raise KeyError(f"MatrixGrid JSON missing field {key!r}")
        arr = np.asarray(obj["values"], dtype=float)
        if arr.shape[-1] != 2:
            raise ValueError("MatrixGrid values must be [re, im] pairs")
        vals = arr[..., 0] + 1j * arr[..., 1]
        grid = FrequencyGrid(int(obj["n_points"]))
        if "m" in obj and vals.shape[-1] != int(obj["m"]):
            raise ValueError(f"declared m={obj['m']} but values have {vals.shape[-1]} columns")
        return cls(grid, vals, obj["kind"], bool(obj.get("real_process", False)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MatrixGrid":
        return cls.from_dict(json.loads(text))


def _ct(X: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(X, -1, -2))


def ct(X: np.ndarray) -> np.ndarray:
    return _ct(X)


def eval_transfer(filt: StateSpaceFilter, grid: FrequencyGrid) -> MatrixGrid:
    """Evaluate ``C (e^{j theta} I - A)^{-1} B + D`` at every grid angle."""
    z = grid.z
    p, m = filt.shape
    ns = filt.n_states
    vals = np.broadcast_to(filt.D.astype(complex), (grid.n_points, p, m)).copy()
    if ns:
        M = z[:, None, None] * np.eye(ns) - filt.A
        cond = np.linalg.cond(M)
        if np.max(cond) > COND_LIMIT:
            k = int(np.argmax(cond))
            warnings.warn(
                f"(zI - A) ill-conditioned at theta_{k} (cond {cond[k]:.3g})",
                IllConditionedWarning,
                stacklevel=2,
            )
        X = np.linalg.solve(M, np.broadcast_to(filt.B, (grid.n_points, ns, m)))
        vals += filt.C @ X
    return MatrixGrid(grid, vals, "transfer", real_process=True)


def psd_from_factor(W: MatrixGrid, eps_coercive: float = EPS_COERCIVE) -> MatrixGrid:
    """Spectrum ``W W^*`` of a square spectral factor."""
    if W.shape[0] != W.shape[1]:
        raise ValueError(f"spectral factor must be square, got {W.shape}")
    vals = W.values @ _ct(W.values)
    return MatrixGrid(W.grid, vals, "psd", W.real_process, eps_coercive)


def hermitian_sqrt(M, mode: Literal["sqrt", "inv_sqrt"] = "sqrt", eps_coercive: float = EPS_COERCIVE):
    """Principal (Hermitian positive) square root or inverse square root.

    Works on a single matrix or on a stack ``(..., m, m)``. In ``sqrt`` mode
    eigenvalues in ``[-1e-10 ||M||, 0)`` are treated as rounding noise and set
    to zero; anything more negative raises ``ValueError``. ``inv_sqrt``
    requires every eigenvalue to be at least ``eps_coercive``.
    """
    M = np.asarray(M)
    if M.shape[-1] != M.shape[-2]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    norm = np.linalg.norm(M, axis=(-2, -1))
    scale = np.maximum(norm, 1.0)
    asym = np.linalg.norm(M - _ct(M), axis=(-2, -1))
    if np.any(asym > 1e-12 * scale):
        raise ValueError(f"matrix is not Hermitian (deviation {np.max(asym):.3g})")
    w, V = np.linalg.eigh(0.5 * (M + _ct(M)))
    if mode == "sqrt":
        floor = -1e-10 * norm[..., None]
        if np.any(w < floor):
            raise ValueError(f"matrix is indefinite: eigenvalue {np.min(w):.3g}")
        f = np.sqrt(np.clip(w, 0.0, None))
    elif mode == "inv_sqrt":
        if np.any(w < eps_coercive):
            raise CoercivityError(f"eigenvalue {np.min(w):.3g} below {eps_coercive:g}")
        f = 1.0 / np.sqrt(w)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    R = (V * f[..., None, :]) @ _ct(V)
    return 0.5 * (R + _ct(R))


def integrate_grid(F: MatrixGrid | np.ndarray) -> np.ndarray:
    """Normalized integral over the circle: the mean of the samples."""
    vals = F.values if isinstance(F, MatrixGrid) else np.asarray(F)
    return vals.mean(axis=0)


def pointwise_inverse(F: MatrixGrid, kind: Kind | None = None, min_singular: float = 1e-10) -> MatrixGrid:
    """Invert a square grid frequency by frequency."""
    s = np.linalg.svd(F.values, compute_uv=False)
    if np.min(s) < min_singular:
        k = int(np.argmin(s[:, -1]))
        raise np.linalg.LinAlgError(
            f"grid nearly singular at theta_{k} = {F.grid.thetas[k]:.6f} (sigma_min {s[k, -1]:.3g})"
        )
    return F.with_values(np.linalg.inv(F.values), kind)


def congruence(T: MatrixGrid, F: MatrixGrid, kind: Kind = "psd") -> MatrixGrid:
    """Pointwise ``T F T^*``."""
    vals = T.values @ F.values @ _ct(T.values)
    vals = 0.5 * (vals + _ct(vals))
    return MatrixGrid(F.grid, vals, kind, F.real_process and T.real_process, F.eps_coercive)
