"""Malliavin derivatives of ``Y1`` and of one application of ``M``.

``D_r Y1(t)`` is deterministic: stable modes carry ``e^{mu (t - r)} sigma(r)``
for ``r <= t`` and unstable modes ``-e^{mu (t - r)} sigma(r)`` for ``r > t``.
On the grid the increment at ``s_j = t`` feeds the unstable modes (the
left-point rule), so the discrete kernel takes the unstable branch on the
diagonal; :func:`dr_y1` exposes both conventions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .convolution import Modulation, compute_y1
from .errors import NonFiniteResult, SingularKernel
from .fixed_point import LineLayout, exponential_quadrature, line_y1
from .grid import TimeGrid, steps_in
from .noise import DriftPath
from .nonlinearity import Nonlinearity
from .spectral import Field, SpectralOperator

_COND_MAX = 1e12


def dr_y1(op: SpectralOperator, mod: Modulation, r, t, diagonal: str = "stable") -> Field:
    """Coefficients of ``D_r Y1(t)``.

    ``diagonal`` picks the branch used when ``r == t``: ``"stable"`` follows
    the continuous formula, ``"unstable"`` the grid convention.
    """
    return Field(_dr_y1_coef(op, mod, np.asarray(r, float), np.asarray(t, float), diagonal))


def _dr_y1_coef(op, mod, r, t, diagonal="stable"):
    """Vectorized kernel; ``r`` and ``t`` broadcast, result has a trailing mode axis."""
    if diagonal not in ("stable", "unstable"):
        raise ValueError("diagonal must be 'stable' or 'unstable'")
    r, t = np.broadcast_arrays(r, t)
    lag = (t - r)[..., None]
    past = (lag >= 0) if diagonal == "stable" else (lag > 0)
    unstable = op.unstable_mask
    val = np.exp(op.eigenvalues * lag) * mod.sigma(r)
    keep = np.where(unstable, ~past, past)
    return np.where(keep, np.where(unstable, -val, val), 0.0)


@dataclass
class MalliavinKernel:
    """``values[i, a, b]`` is the ``phi_i`` coefficient of ``D_{r_a} z(t_b)``."""

    values: np.ndarray
    r_grid: np.ndarray
    t_grid: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteResult("kernel has non-finite entries")

    def norm_sq(self) -> np.ndarray:
        return np.sum(self.values**2, axis=0)


def kernel_y1(op, mod, r_grid, t_grid, diagonal="unstable") -> MalliavinKernel:
    r = np.asarray(r_grid, float)[:, None]
    t = np.asarray(t_grid, float)[None, :]
    vals = _dr_y1_coef(op, mod, r, t, diagonal)
    return MalliavinKernel(np.moveaxis(vals, -1, 0), np.ravel(r), np.ravel(t))


def kernel_decay_report(op, mod, r_grid, t_grid) -> dict:
    """Checks ``||D_r Y1(t)|| <= sup sigma * exp(-beta |t - r|)`` on the grid."""
    k = kernel_y1(op, mod, r_grid, t_grid)
    nrm = np.sqrt(k.norm_sq())
    lag = np.abs(k.t_grid[None, :] - k.r_grid[:, None])
    sup_sigma = math.sqrt(mod.sup_sq_sum())
    envelope = sup_sigma * np.exp(-op.spectral_gap * lag)
    pos = nrm > 0
    rate = None
    if np.count_nonzero(pos) >= 2 and np.ptp(lag[pos]) > 0:
        rate = float(-np.polyfit(lag[pos], np.log(nrm[pos]), 1)[0])
    return {"max_ratio": float(np.max(nrm / envelope)), "holds": bool(np.all(nrm <= envelope * (1 + 1e-12))),
            "fitted_rate": rate, "beta": op.spectral_gap}


def r_lipschitz_constant(op, mod, t: float, r_values) -> float:
    """Largest ``||D_{r1} Y1(t) - D_{r2} Y1(t)||^2 / |r1 - r2|`` over neighbouring ``r`` on one side of ``t``."""
    r = np.sort(np.asarray(r_values, float))
    coef = _dr_y1_coef(op, mod, r, np.full_like(r, t))
    same_side = (r[1:] <= t) == (r[:-1] <= t)
    d = np.sum((coef[1:] - coef[:-1]) ** 2, axis=-1) / np.diff(r)
    return float(np.max(d[same_side])) if np.any(same_side) else 0.0


def directional_derivative_check(op: SpectralOperator, path, mod: Modulation, t: float,
                                 bump, t_cut: float, weights=None) -> dict:
    """Compare a Cameron-Martin difference quotient of ``Y1(t)`` with the kernel integral.

    ``bump = (r0, delta, eps)`` bumps the increments on ``[r0, r0 + delta)`` by
    ``eps * dt``.  The analytic side sums ``dt * D_{s_j} Y1(t)`` over the bumped
    steps with the grid diagonal convention.
    """
    r0, delta, eps = bump
    if not eps > 0:
        raise ValueError("eps must be positive")
    grid = TimeGrid.from_period(path.dt, mod.tau)
    i0 = grid.index(r0)
    n = steps_in(delta, path.dt, "delta")
    h = DriftPath(op.n_modes, path.dt, i0, i0 + n, eps, weights)
    base = compute_y1(op, path, mod, t, t_cut).coefficients
    bumped = compute_y1(op, path + h, mod, t, t_cut).coefficients
    numeric = (bumped - base) / eps
    s = grid.dt * np.arange(i0, i0 + n)
    w = np.ones(op.n_modes) if weights is None else np.asarray(weights, float)
    # outside [t - T_cut, t + T_cut) the discrete Y1 ignores the increment
    i_t = grid.index(t)
    n_cut = steps_in(t_cut, path.dt, "T_cut")
    inside = (np.arange(i0, i0 + n) >= i_t - n_cut) & (np.arange(i0, i0 + n) < i_t + n_cut)
    ker = _dr_y1_coef(op, mod, s, np.full_like(s, t), "unstable")[inside]
    analytic = path.dt * np.sum(ker, axis=0) * w
    gap = float(np.linalg.norm(analytic - numeric))
    return {"analytic": analytic.tolist(), "numeric": numeric.tolist(), "gap": gap, "eps": eps}


# ---------------------------------------------------------------------------
# one-step propagation through M


def propagate_dr_M(op: SpectralOperator, F: Nonlinearity, mod: Modulation, seeds, r_values,
                   t_values, dt: float, eps_trunc: float = 1e-6, kappa: float = 0.0) -> dict:
    """Monte Carlo ``E||D_r M(z)(t)||^2`` for ``z = kappa * Y1`` (so ``D_r z = kappa D_r Y1``).

    ``kappa = 0`` is the ``z = 0, Dz = 0`` case.  The integrand
    ``grad F(s, z + Y1) * (D_r z + D_r Y1)`` is formed on the spatial grid,
    projected, and pushed through the same exponential quadrature as ``M``.
    Returns per-(r, t) means and standard errors.
    """
    grid = TimeGrid.from_period(dt, mod.tau)
    r_idx = [grid.index(r) for r in r_values]
    t_idx = [grid.index(t) for t in t_values]
    lo, hi = min(t_idx), max(t_idx)
    layout = LineLayout.build(op, grid, lo, hi - lo, eps_trunc)
    j = np.arange(layout.start, layout.start + layout.n_line)
    s = j * dt
    t_red = layout.reduced_times()
    pos = [k - layout.start for k in t_idx]
    seeds = list(seeds)
    acc = np.zeros((len(seeds), len(r_idx), len(t_idx)))
    dry = [op.synthesize(_dr_y1_coef(op, mod, np.full_like(s, r_i * dt), s, "unstable"))
           for r_i in r_idx]
    for n_s, seed in enumerate(seeds):
        y1 = line_y1(op, mod, layout, [seed])
        u = op.synthesize((1.0 + kappa) * y1[0])
        grad = F.gradient(t_red, u)
        for a, d in enumerate(dry):
            g = op.project(grad * ((1.0 + kappa) * d))[None]
            dm = exponential_quadrature(op, g, dt)[0, pos]
            acc[n_s, a] = np.sum(dm**2, axis=-1)
    if not np.all(np.isfinite(acc)):
        raise NonFiniteResult("D_r M(z) produced non-finite values")
    n = len(seeds)
    mean = acc.mean(axis=0)
    stderr = acc.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return {"r": list(map(float, r_values)), "t": list(map(float, t_values)),
            "mean": mean, "stderr": stderr, "n_samples": n, "kappa": kappa}


# ---------------------------------------------------------------------------
# the alpha integral equation


def alpha_constants(op: SpectralOperator, F: Nonlinearity, mod: Modulation, tau: float,
                    C: float = 1.0) -> tuple[float, float, float]:
    """``(A, B, beta)`` with the unspecified multiplicative constant set to ``C``."""
    mu_s, mu_u = op.mu_stable_max, op.mu_unstable_min
    g2 = F.sup_grad**2
    a = 0.0
    if mu_s is not None:
        a += (1.0 / abs(mu_s)) / (1.0 - math.exp(mu_s * tau))
    if mu_u is not None:
        a += (1.0 / mu_u) / (1.0 - math.exp(-mu_u * tau))
    inv_s, inv_u = op.inverse_gaps()
    A = C * g2 * a
    B = C * g2 * mod.sup_sq_sum() * (inv_s**2 + inv_u**2)
    return A, B, op.spectral_gap


@dataclass
class AlphaSolution:
    r: float
    t: np.ndarray
    alpha: np.ndarray
    A: float
    B: float
    beta: float
    tau: float
    residual: float
    quadrature_gap: float | None = None
    condition: float | None = None

    def __call__(self, t):
        """Nystrom interpolant ``B + A sum_j w_j e^{-beta |t - t_j|} alpha_j``."""
        t = np.asarray(t, float)
        w = _trapezoid_weights(self.t)
        k = np.exp(-self.beta * np.abs(t[..., None] - self.t))
        return self.B + self.A * k @ (w * self.alpha)

    def to_dict(self) -> dict:
        return {"r": self.r, "A": self.A, "B": self.B, "beta": self.beta, "tau": self.tau,
                "residual": self.residual, "quadrature_gap": self.quadrature_gap,
                "condition": self.condition, "alpha_min": float(self.alpha.min()),
                "alpha_max": float(self.alpha.max())}


def _trapezoid_weights(t):
    w = np.full(t.shape, t[1] - t[0])
    w[[0, -1]] *= 0.5
    return w


def _nystrom(A, B, beta, t):
    w = _trapezoid_weights(t)
    K = np.exp(-beta * np.abs(t[:, None] - t[None, :])) * w
    mat = np.eye(len(t)) - A * K
    cond = float(np.linalg.cond(mat))
    if not np.isfinite(cond) or cond > _COND_MAX:
        raise SingularKernel(f"I - A Q is numerically singular (cond = {cond:.3e}, A = {A})")
    alpha = lu_solve(lu_factor(mat), np.full(len(t), float(B)))
    resid = float(np.max(np.abs(alpha - A * (K @ alpha) - B)))
    return alpha, resid, cond


def solve_alpha(A: float, B: float, beta: float, tau: float, r: float, n_grid: int = 257) -> AlphaSolution:
    """Trapezoid Nystrom solve of ``alpha(t) = A int_{r-2tau}^{r+2tau} e^{-beta|t-s|} alpha(s) ds + B``.

    ``residual`` is the sup-norm residual of the discrete system at the
    nodes; ``quadrature_gap`` compares the interpolant against a solve on a
    grid with twice the resolution.
    """
    if A < 0 or B < 0:
        raise ValueError("A and B must be non-negative")
    if not beta > 0 or not tau > 0:
        raise ValueError("beta and tau must be positive")
    if n_grid < 3:
        raise ValueError("n_grid must be >= 3")
    t = np.linspace(r - 2 * tau, r + 2 * tau, n_grid)
    alpha, resid, cond = _nystrom(A, B, beta, t)
    sol = AlphaSolution(float(r), t, alpha, float(A), float(B), float(beta), float(tau), resid,
                        condition=cond)
    t2 = np.linspace(r - 2 * tau, r + 2 * tau, 2 * n_grid - 1)
    alpha2, _, _ = _nystrom(A, B, beta, t2)
    sol.quadrature_gap = float(np.max(np.abs(alpha2[::2] - alpha)))
    return sol


def bound_chain(op, F, mod, seeds, r_values, t_values, dt, tau, eps_trunc=1e-6, kappa=0.0,
                C: float = 1.0, n_grid: int = 257) -> dict:
    """Empirical ``E||D_r M(z)(t)||^2`` against ``alpha_r(t)`` on an (r, t) probe grid.

    Also reports the smallest ``C`` for which every probe satisfies the
    bound (``alpha`` scales linearly in ``C`` when ``A`` is rescaled too, so
    the search re-solves for each candidate).
    """
    prop = propagate_dr_M(op, F, mod, seeds, r_values, t_values, dt, eps_trunc, kappa)
    mean = prop["mean"]

    def alpha_grid(c):
        A, B, beta = alpha_constants(op, F, mod, tau, c)
        out = np.empty_like(mean)
        for a, r in enumerate(r_values):
            sol = solve_alpha(A, B, beta, tau, r, n_grid)
            out[a] = sol(np.asarray(t_values, float))
        return out, A, B, beta, sol

    alpha, A, B, beta, sol = alpha_grid(C)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mean == 0, 0.0, mean / alpha)
    holds = bool(np.all(mean <= alpha))
    fitted = None
    if not holds:
        lo, hi = C, C
        while True:
            hi *= 2
            try:
                if np.all(mean <= alpha_grid(hi)[0]):
                    break
            except SingularKernel:
                hi = None
                break
        if hi is not None:
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                try:
                    ok = np.all(mean <= alpha_grid(mid)[0])
                except SingularKernel:
                    ok = False
                lo, hi = (lo, mid) if ok else (mid, hi)
            fitted = hi
    return {"holds": holds, "C": C, "fitted_C": fitted, "A": A, "B": B, "beta": beta,
            "max_ratio": float(np.max(ratio)), "empirical": mean.tolist(),
            "stderr": prop["stderr"].tolist(), "alpha": alpha.tolist(),
            "alpha_residual": sol.residual, "r": prop["r"], "t": prop["t"],
            "n_samples": prop["n_samples"], "kappa": kappa}
