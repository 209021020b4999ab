"""The noise-driven part of the solution.

``Y1(t)`` integrates stable modes forward from the far past and unstable
modes backward from the far future::

    Y1_i(t) =  sum_{t - T <= s_j < t}  exp(mu_i (t - s_j)) sigma_i(s_j) dW_j   (mu_i < 0)
    Y1_i(t) = -sum_{t <= s_j < t + T}  exp(mu_i (t - s_j)) sigma_i(s_j) dW_j   (mu_i > 0)

Left-point weights make the shift identity ``Y1(t + tau, w) = Y1(t, theta_tau w)``
an exact re-indexing on the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import TruncationTooShort
from .grid import TimeGrid, cut_steps, steps_in
from .noise import NoisePath
from .spectral import Field, SpectralOperator


@dataclass(frozen=True, eq=False)
class Modulation:
    """Periodic noise amplitudes ``sigma_k(t) = sigma_hat_k (1 + eps sin(2 pi t / tau))``."""

    sigma_hat: np.ndarray
    tau: float
    epsilon: float = 0.0

    def __post_init__(self):
        s = np.array(self.sigma_hat, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "sigma_hat", s)
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @classmethod
    def power_law(cls, n_modes: int, scale: float, decay: float, tau: float,
                  epsilon: float = 0.0) -> "Modulation":
        k = np.arange(1, n_modes + 1, dtype=float)
        return cls(scale * k**-decay, tau, epsilon)

    @classmethod
    def zero(cls, n_modes: int, tau: float = 1.0) -> "Modulation":
        return cls(np.zeros(n_modes), tau, 0.0)

    @property
    def n_modes(self) -> int:
        return self.sigma_hat.shape[0]

    def profile(self, t) -> np.ndarray:
        """The scalar factor ``1 + eps sin(2 pi t / tau)``."""
        t = np.mod(np.asarray(t, dtype=float), self.tau)
        return 1.0 + self.epsilon * np.sin(2.0 * math.pi * t / self.tau)

    def sigma(self, t) -> np.ndarray:
        """Amplitudes at times ``t``; shape ``t.shape + (n_modes,)``."""
        return np.multiply.outer(self.profile(t), self.sigma_hat)

    def sup_sq_sum(self) -> float:
        """``sup_t sum_k sigma_k(t)^2``."""
        if self.epsilon == 0:
            return float(np.sum(self.sigma_hat**2))
        return float(np.sum(self.sigma_hat**2)) * (1.0 + self.epsilon) ** 2

    def lipschitz_l1(self) -> float:
        """A valid ``L1`` with ``sum_k |sigma_k(s1) - sigma_k(s2)|^2 <= L1 |s1 - s2|``.

        Uses ``min(4, x^2) <= 2x`` for ``x = 2 pi |s1 - s2| / tau``.
        """
        return float(np.sum(self.sigma_hat**2)) * self.epsilon**2 * 4.0 * math.pi / self.tau

    def is_zero(self) -> bool:
        return not np.any(self.sigma_hat)


@dataclass
class PeriodicProcess:
    """Mode coefficients over one period window ``[t0, t0 + tau)``.

    ``values`` has shape ``(n_tau, n_modes)`` for a single noise sample or
    ``(n_samples, n_tau, n_modes)`` for an ensemble.  Values past the window
    follow the cocycle rule ``Z(t + tau, w) = Z(t, theta_tau w)``.
    """

    values: np.ndarray
    dt: float
    tau: float
    t0: float = 0.0
    seeds: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n_tau = steps_in(self.tau, self.dt, "tau")
        if self.values.shape[-2] != n_tau:
            raise ValueError(f"expected {n_tau} time points, got {self.values.shape[-2]}")

    @property
    def n_tau(self) -> int:
        return self.values.shape[-2]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_tau)

    def field_at(self, k: int, sample: int | None = None) -> Field:
        v = self.values[k] if self.values.ndim == 2 else self.values[sample, k]
        return Field(v)

    def norm_sq(self) -> np.ndarray:
        """``||Z(t)||^2_{L2(D)}`` per time (and sample)."""
        return np.sum(self.values**2, axis=-1)

    def __add__(self, other: "PeriodicProcess") -> "PeriodicProcess":
        return PeriodicProcess(self.values + other.values, self.dt, self.tau, self.t0, self.seeds)


def default_t_cut(op: SpectralOperator, dt: float, eps_trunc: float = 1e-6) -> float:
    """``ceil((1/beta) ln(1/eps) / dt) * dt``."""
    return cut_steps(op.spectral_gap, dt, eps_trunc) * dt


def check_truncation(op: SpectralOperator, t_cut: float, eps_trunc: float | None) -> None:
    if eps_trunc is None:
        return
    achieved = math.exp(-op.spectral_gap * t_cut)
    if achieved > eps_trunc * (1 + 1e-9):
        raise TruncationTooShort(
            f"exp(-beta*T_cut) = {achieved:.3e} exceeds eps_trunc = {eps_trunc:.1e}; "
            f"need T_cut >= {math.log(1 / eps_trunc) / op.spectral_gap:.4g}"
        )


def compute_y1(op: SpectralOperator, path, mod: Modulation, t: float, t_cut: float,
               eps_trunc: float | None = None) -> Field:
    """``Y1(t)`` for one noise path by direct left-point summation."""
    check_truncation(op, t_cut, eps_trunc)
    grid = TimeGrid.from_period(path.dt, mod.tau)
    i_t = grid.index(t)
    n_cut = steps_in(t_cut, path.dt, "T_cut")
    return Field(_y1_direct(op, path.window(i_t - n_cut, i_t + n_cut), mod, grid, i_t, n_cut))


def _y1_direct(op, incr, mod, grid, i_t, n_cut):
    j = np.arange(i_t - n_cut, i_t + n_cut)
    lag = ((i_t - j) * grid.dt)[:, None]
    unstable = op.unstable_mask
    # each mode only sees its own side; masking the exponent avoids overflow
    own_side = np.where(unstable, lag <= 0, lag > 0)
    expo = np.where(own_side, op.eigenvalues * lag, -np.inf)
    terms = np.exp(expo) * mod.sigma(grid.reduced(j)) * incr
    past = terms[:n_cut].sum(axis=0)
    future = terms[n_cut:].sum(axis=0)
    return np.where(unstable, -future, past)


def y1_recursive(op: SpectralOperator, mod: Modulation, incr: np.ndarray, j0: int,
                 grid: TimeGrid) -> np.ndarray:
    """``Y1`` at every grid point of a noise block, by exponential recursion.

    ``incr`` holds increments for steps ``j0 .. j0 + n - 1`` with shape
    ``(..., n, n_modes)``.  Returns shape ``(..., n + 1, n_modes)`` for points
    ``j0 .. j0 + n``; stable modes see only history inside the block and
    unstable modes only its future, so callers trim the margins they need.
    """
    n = incr.shape[-2]
    sig = mod.sigma(grid.reduced(np.arange(j0, j0 + n)))
    x = sig * incr
    out = np.zeros(incr.shape[:-2] + (n + 1, op.n_modes))
    for i, mu in enumerate(op.eigenvalues):
        xi = x[..., i]
        if mu < 0:
            a = math.exp(mu * grid.dt)
            out[..., 1:, i] = lfilter([a], [1.0, -a], xi, axis=-1)
        else:
            b = math.exp(-mu * grid.dt)
            rev = lfilter([1.0], [1.0, -b], xi[..., ::-1], axis=-1)[..., ::-1]
            out[..., :-1, i] = -rev
    return out


def y1_periodic_window(op: SpectralOperator, path, mod: Modulation, t0: float,
                       t_cut: float, eps_trunc: float | None = None) -> PeriodicProcess:
    """``Y1`` over ``[t0, t0 + tau)`` for one path."""
    check_truncation(op, t_cut, eps_trunc)
    grid = TimeGrid.from_period(path.dt, mod.tau)
    i0 = grid.index(t0)
    n_cut = steps_in(t_cut, path.dt, "T_cut")
    j0 = i0 - n_cut
    incr = path.window(j0, i0 + grid.n_tau + n_cut)
    y = y1_recursive(op, mod, incr, j0, grid)
    return PeriodicProcess(y[n_cut: n_cut + grid.n_tau], grid.dt, grid.tau, t0,
                           seeds=[getattr(path, "seed", None)])


def y1_ensemble_window(op: SpectralOperator, mod: Modulation, seeds, dt: float, t0: float,
                       t_cut: float, chunk: int = 64) -> PeriodicProcess:
    """``Y1`` windows for a list of seeds, shape ``(n_samples, n_tau, n_modes)``."""
    grid = TimeGrid.from_period(dt, mod.tau)
    i0 = grid.index(t0)
    n_cut = steps_in(t_cut, dt, "T_cut")
    j0, j1 = i0 - n_cut, i0 + grid.n_tau + n_cut
    seeds = list(seeds)
    out = np.empty((len(seeds), grid.n_tau, op.n_modes))
    for c in range(0, len(seeds), chunk):
        block = seeds[c:c + chunk]
        incr = np.stack([NoisePath(s, op.n_modes, dt, j0, j1).increments for s in block])
        out[c:c + len(block)] = y1_recursive(op, mod, incr, j0, grid)[:, n_cut:n_cut + grid.n_tau]
    return PeriodicProcess(out, dt, grid.tau, t0, seeds=seeds)


def y1_sup_bound(op: SpectralOperator, mod: Modulation) -> float:
    """``(-1/mu_{m+1} + 1/mu_m) sup_s sum_i sigma_i(s)^2``."""
    inv_s, inv_u = op.inverse_gaps()
    return (inv_s + inv_u) * mod.sup_sq_sum()


def y1_bound_report(op: SpectralOperator, mod: Modulation, n_samples: int, dt: float,
                    eps_trunc: float = 1e-6, seed_base: int = 0, t0: float = 0.0) -> dict:
    """Empirical ``sup_t E ||Y1(t)||^2`` next to its closed-form bound."""
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    t_cut = default_t_cut(op, dt, eps_trunc)
    seeds = range(seed_base, seed_base + n_samples)
    win = y1_ensemble_window(op, mod, seeds, dt, t0, t_cut)
    sq = win.norm_sq()  # (n_samples, n_tau)
    mean = sq.mean(axis=0)
    k = int(np.argmax(mean))
    stderr = float(sq[:, k].std(ddof=1) / math.sqrt(n_samples))
    bound = y1_sup_bound(op, mod)
    empirical = float(mean[k])
    return {
        "empirical_sup": empirical,
        "stderr": stderr,
        "argmax_t": float(win.times[k]),
        "bound": bound,
        "bound_factor": sum(op.inverse_gaps()),
        "sup_sigma_sq": mod.sup_sq_sum(),
        "satisfied": bool(empirical <= bound),
        "n_samples": n_samples,
        "t_cut": t_cut,
    }
