"""Eigen-decomposition of the elliptic operator and its semigroup.

The operator is represented entirely through its eigenpairs sampled on a
spatial quadrature grid.  Everything downstream works mode-wise, so a
different domain only needs a different constructor that fills the same
:class:`SpectralOperator` fields.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HyperbolicityViolation, NonFiniteResult

HYPERBOLICITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """Self-adjoint operator with no zero eigenvalue, stored in its eigenbasis.

    Parameters
    ----------
    eigenvalues : ndarray, shape (n_modes,)
        Sorted descending, so the first ``unstable_count`` modes are the
        unstable ones.
    eigenfunctions : ndarray, shape (n_modes, n_grid)
        Eigenfunctions sampled on ``grid``; orthonormal under ``weights``.
    weights : ndarray, shape (n_grid,)
        Quadrature weights for spatial inner products.
    grid : ndarray, shape (n_grid,)
    domain_length : float
        Volume of the spatial domain.
    gradient_gram : ndarray, shape (n_modes, n_modes)
        ``<grad phi_i, grad phi_j>`` in L2(D).
    c : float, optional
        Zeroth-order coefficient, kept for the serialized record.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    weights: np.ndarray
    grid: np.ndarray
    domain_length: float
    gradient_gram: np.ndarray
    c: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        mu = np.asarray(self.eigenvalues, dtype=float)
        if np.any(np.diff(mu) > 0):
            raise ValueError("eigenvalues must be sorted descending")
        small = np.abs(mu) <= HYPERBOLICITY_TOL
        if np.any(small):
            k = int(np.flatnonzero(small)[0]) + 1
            raise HyperbolicityViolation(
                f"eigenvalue {k} is {mu[k - 1]:.3e}; the stable/unstable "
                "splitting needs every |mu_k| > 1e-9"
            )
        for name in ("eigenvalues", "eigenfunctions", "weights", "grid", "gradient_gram"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n_grid(self) -> int:
        return self.grid.shape[0]

    @property
    def unstable_count(self) -> int:
        """Number of strictly positive eigenvalues (``m``)."""
        return int(np.count_nonzero(self.eigenvalues > 0))

    @property
    def unstable_mask(self) -> np.ndarray:
        return self.eigenvalues > 0

    @property
    def mu_unstable_min(self) -> float | None:
        """Smallest positive eigenvalue, or None when there is none."""
        m = self.unstable_count
        return float(self.eigenvalues[m - 1]) if m > 0 else None

    @property
    def mu_stable_max(self) -> float | None:
        """Largest negative eigenvalue, or None when there is none."""
        m = self.unstable_count
        return float(self.eigenvalues[m]) if m < self.n_modes else None

    @property
    def spectral_gap(self) -> float:
        gaps = [abs(v) for v in (self.mu_unstable_min, self.mu_stable_max) if v is not None]
        return min(gaps)

    def inverse_gaps(self) -> tuple[float, float]:
        """``(1/|mu_{m+1}|, 1/mu_m)`` with a missing side contributing 0."""
        s, u = self.mu_stable_max, self.mu_unstable_min
        return (0.0 if s is None else -1.0 / s, 0.0 if u is None else 1.0 / u)

    def synthesize(self, coefficients) -> np.ndarray:
        """Grid values ``sum_i c_i phi_i(x_j)`` for coefficient arrays (..., n_modes)."""
        c = np.asarray(coefficients, dtype=float)
        return (c.reshape(-1, c.shape[-1]) @ self.eigenfunctions).reshape(c.shape[:-1] + (self.n_grid,))

    def project(self, values) -> np.ndarray:
        """Quadrature projections ``<f, phi_i>`` for grid arrays (..., n_grid)."""
        v = np.asarray(values, dtype=float)
        flat = v.reshape(-1, v.shape[-1]) @ self._projector
        return flat.reshape(v.shape[:-1] + (self.n_modes,))

    @property
    def _projector(self) -> np.ndarray:
        p = self.__dict__.get("_proj")
        if p is None:
            p = np.ascontiguousarray((self.eigenfunctions * self.weights).T)
            object.__setattr__(self, "_proj", p)
        return p

    def inner(self, f, g) -> np.ndarray:
        return np.sum(np.asarray(f) * np.asarray(g) * self.weights, axis=-1)

    def gram(self) -> np.ndarray:
        return (self.eigenfunctions * self.weights) @ self.eigenfunctions.T

    def to_record(self) -> dict:
        return {
            "c": self.c,
            "n_modes": self.n_modes,
            "n_grid": self.n_grid,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "m": self.unstable_count,
            "beta": self.spectral_gap,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


@dataclass
class Field:
    """An element of L2(D) given by its eigen-coefficients.

    ``grid_values`` is optional; use :meth:`with_grid` to fill it in.
    """

    coefficients: np.ndarray
    grid_values: np.ndarray | None = None

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.grid_values is not None:
            self.grid_values = np.asarray(self.grid_values, dtype=float)

    @classmethod
    def from_grid(cls, op: SpectralOperator, values) -> "Field":
        values = np.asarray(values, dtype=float)
        return cls(op.project(values), values)

    @classmethod
    def mode(cls, op: SpectralOperator, k: int) -> "Field":
        """The k-th eigenfunction (1-based, as in the mode numbering)."""
        coef = np.zeros(op.n_modes)
        coef[k - 1] = 1.0
        return cls(coef)

    def with_grid(self, op: SpectralOperator) -> "Field":
        if self.grid_values is None:
            return Field(self.coefficients, op.synthesize(self.coefficients))
        return self

    def __add__(self, other: "Field") -> "Field":
        return Field(self.coefficients + other.coefficients)

    def norm(self) -> float:
        """L2(D) norm, exact in the orthonormal basis."""
        return float(np.linalg.norm(self.coefficients))


def build_interval_operator(c: float, n_modes: int, n_grid: int) -> SpectralOperator:
    """``L = 1/2 d^2/dx^2 + c`` on (0, pi) with Dirichlet boundary conditions.

    The eigenpairs are ``mu_k = c - k^2/2`` and ``phi_k = sqrt(2/pi) sin(k x)``,
    sampled on ``n_grid`` uniform interior points.  With the boundary values
    pinned to zero the composite trapezoid rule reduces to ``dx * sum`` and
    is exact for products of the retained sine modes.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if n_grid < 4 * n_modes:
        raise ValueError(f"n_grid must be >= 4*n_modes = {4 * n_modes}, got {n_grid}")
    k = np.arange(1, n_modes + 1, dtype=float)
    mu = c - 0.5 * k**2
    bad = np.abs(mu) <= HYPERBOLICITY_TOL
    if np.any(bad):
        kk = int(k[bad][0])
        raise HyperbolicityViolation(
            f"c={c} gives mu_{kk} = {mu[bad][0]:.3e}: zero eigenvalue, operator not hyperbolic"
        )
    length = math.pi
    dx = length / (n_grid + 1)
    x = dx * np.arange(1, n_grid + 1)
    amp = math.sqrt(2.0 / length)
    phi = amp * np.sin(np.outer(k, x))

    # gradients on the closed grid; trapezoid is exact for these trig products
    xc = dx * np.arange(n_grid + 2)
    wc = np.full(n_grid + 2, dx)
    wc[[0, -1]] = 0.5 * dx
    dphi = amp * k[:, None] * np.cos(np.outer(k, xc))
    grad_gram = (dphi * wc) @ dphi.T

    return SpectralOperator(
        eigenvalues=mu,
        eigenfunctions=phi,
        weights=np.full(n_grid, dx),
        grid=x,
        domain_length=length,
        gradient_gram=grad_gram,
        c=float(c),
        meta={"kind": "interval", "dx": dx},
    )


def _as_coefficients(f) -> np.ndarray:
    return f.coefficients if isinstance(f, Field) else np.asarray(f, dtype=float)


def semigroup_apply(op: SpectralOperator, t: float, f):
    """Apply ``T_t = exp(L t)`` mode-wise.

    Accepts a :class:`Field` (returns a Field) or a raw coefficient array.
    """
    coef = _as_coefficients(f)
    with np.errstate(over="ignore", invalid="ignore"):
        growth = np.exp(op.eigenvalues * t)
        out = coef * growth
    if not np.all(np.isfinite(out)):
        raise NonFiniteResult(f"exp(mu t) overflowed at t={t}")
    return Field(out) if isinstance(f, Field) else out


def split(op: SpectralOperator, f):
    """Return ``(stable, unstable)`` parts, i.e. ``(P^- f, P^+ f)``."""
    coef = _as_coefficients(f)
    unstable_mask = op.unstable_mask
    unstable = np.where(unstable_mask, coef, 0.0)
    stable = np.where(unstable_mask, 0.0, coef)
    if isinstance(f, Field):
        return Field(stable), Field(unstable)
    return stable, unstable


def _grid_index(op: SpectralOperator, x: float) -> int:
    j = int(np.argmin(np.abs(op.grid - x)))
    if abs(op.grid[j] - x) > 1e-9 * max(1.0, op.domain_length):
        raise ValueError(f"x={x} is not a grid point")
    return j


def mercer_kernel_eval(op: SpectralOperator, t: float, x: float, y: float,
                       n_terms: int | None = None) -> float:
    """Truncated heat kernel ``sum_i exp(mu_i t) phi_i(x) phi_i(y)``."""
    if t <= 0:
        raise ValueError("kernel is evaluated for t > 0")
    n = op.n_modes if n_terms is None else n_terms
    jx, jy = _grid_index(op, x), _grid_index(op, y)
    mu = op.eigenvalues[:n]
    phi = op.eigenfunctions[:n]
    return float(np.sum(np.exp(mu * t) * phi[:, jx] * phi[:, jy]))


def mercer_kernel_matrix(op: SpectralOperator, t: float) -> np.ndarray:
    """The kernel on the full grid, shape (n_grid, n_grid)."""
    if t <= 0:
        raise ValueError("kernel is evaluated for t > 0")
    return (op.eigenfunctions.T * np.exp(op.eigenvalues * t)) @ op.eigenfunctions


def gradient_bound_report(op: SpectralOperator) -> dict:
    """Per-mode ratio ``||grad phi_k|| / sqrt(|mu_k|)`` and the fitted constant."""
    grad = np.sqrt(np.diag(op.gradient_gram))
    root_mu = np.sqrt(np.abs(op.eigenvalues))
    ratio = grad / root_mu
    rows = [
        {"k": k + 1, "grad_norm": float(g), "sqrt_abs_mu": float(r), "ratio": float(q)}
        for k, (g, r, q) in enumerate(zip(grad, root_mu, ratio))
    ]
    return {"modes": rows, "C": float(np.max(ratio))}
