"""Damped Picard iteration for ``Z = M(Z)``.

``M(z)(t) = int_{-inf}^t T_{t-s} P^- F(s, z + Y1) ds - int_t^inf T_{t-s} P^+ F(s, z + Y1) ds``

The equation is pathwise: for a fixed noise sample the value at ``t``
depends on ``z`` along the same sample at all other times.  Each sample is
therefore solved on a finite time line that covers the period window plus a
margin on each side (``ln(1/eps)/|mu_{m+1}|`` behind, ``ln(1/eps)/mu_m``
ahead).  On that line the two integrals are exponential filters, applied
with trapezoid weights and exact ``exp(mu dt)`` factors, so one application
of ``M`` costs O(line length).

Values at ``t + k tau`` on the line are the values of the shifted fibre
``theta_{k tau} w`` at ``t``; that is how the cocycle extension enters.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .convolution import Modulation, PeriodicProcess, y1_recursive
from .errors import NonFiniteResult, NotConverged
from .grid import TimeGrid, cut_steps, steps_in
from .noise import NoisePath
from .nonlinearity import Nonlinearity
from .spectral import Field, SpectralOperator

log = logging.getLogger(__name__)

_DEFAULT_CHUNK_BYTES = 320 * 2**20


@dataclass
class SolverConfig:
    """Discretization and iteration settings.

    ``damping=None`` picks 1 when the contraction estimate is below 1 and
    0.5 otherwise.  ``t_cut`` defaults to the smallest grid multiple with
    ``exp(-beta T_cut) <= eps_trunc``.
    """

    dt: float = 1e-3
    tau: float = 1.0
    t_cut: float | None = None
    eps_trunc: float = 1e-6
    damping: float | None = None
    max_iters: int = 50
    residual_tol: float = 1e-7
    n_samples: int = 500
    seed_base: int = 0
    t0: float = 0.0
    chunk_bytes: int = _DEFAULT_CHUNK_BYTES

    def __post_init__(self):
        self.grid = TimeGrid.from_period(self.dt, self.tau)
        if self.t_cut is not None:
            steps_in(self.t_cut, self.dt, "T_cut")
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if self.damping is not None and not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        self.grid.index(self.t0)

    def resolved_t_cut(self, op: SpectralOperator) -> float:
        if self.t_cut is not None:
            return self.t_cut
        return cut_steps(op.spectral_gap, self.dt, self.eps_trunc) * self.dt

    def seeds(self) -> list[int]:
        return list(range(self.seed_base, self.seed_base + self.n_samples))


@dataclass
class IterationReport:
    residuals: list
    damping: float
    q_bound: float
    converged: bool = False
    residual_tol: float = 0.0
    chunk_iterations: list = field(default_factory=list)
    certificates: dict = field(default_factory=dict)

    @property
    def n_iters(self) -> int:
        return len(self.residuals)

    @property
    def ratios(self) -> list:
        r = self.residuals
        return [r[k + 1] / r[k] if r[k] > 0 else 0.0 for k in range(len(r) - 1)]

    @property
    def q_observed(self) -> float | None:
        """Largest residual ratio from the second iteration on."""
        tail = self.ratios[1:]
        return max(tail) if tail else None

    def to_dict(self) -> dict:
        return {
            "residuals": [float(r) for r in self.residuals],
            "ratios": [float(r) for r in self.ratios],
            "q_bound": self.q_bound,
            "q_observed": self.q_observed,
            "damping": self.damping,
            "converged": self.converged,
            "n_iters": self.n_iters,
            "residual_tol": self.residual_tol,
            "chunk_iterations": list(self.chunk_iterations),
            "certificates": self.certificates,
        }


@dataclass
class SolveResult:
    """Converged (or best) iterate over the period window, per noise sample."""

    z: PeriodicProcess
    y1: PeriodicProcess
    z_end: np.ndarray
    y1_end: np.ndarray
    mz: PeriodicProcess
    report: IterationReport
    t_cut: float

    @property
    def y(self) -> PeriodicProcess:
        return self.z + self.y1

    @property
    def y_end(self) -> np.ndarray:
        return self.z_end + self.y1_end


def contraction_estimate(op: SpectralOperator, F: Nonlinearity) -> float:
    """``sqrt(2 ||grad F||^2 (1/mu_{m+1}^2 + 1/mu_m^2))``; below 1 means Picard contracts."""
    inv_s, inv_u = op.inverse_gaps()
    return math.sqrt(2.0 * F.sup_grad**2 * (inv_s**2 + inv_u**2))


def m_sup_bound(op: SpectralOperator, F: Nonlinearity) -> float:
    """``2 ||F||^2 (1/mu_{m+1}^2 + 1/mu_m^2) vol(D)``, the bound on ``sup_t E||M(z)||^2``."""
    inv_s, inv_u = op.inverse_gaps()
    return 2.0 * F.sup_f**2 * (inv_s**2 + inv_u**2) * op.domain_length


# ---------------------------------------------------------------------------
# line discretization


@dataclass(frozen=True)
class LineLayout:
    """Index bookkeeping for one pathwise solve.

    The line covers steps ``start .. start + n_line - 1``; the reported window
    is ``window_start .. window_start + n_window`` (inclusive end point).
    """

    grid: TimeGrid
    window_start: int
    n_window: int
    left: int
    right: int

    @classmethod
    def build(cls, op, grid, window_start, n_window, eps_trunc):
        left = cut_steps(-op.mu_stable_max, grid.dt, eps_trunc) if op.mu_stable_max else 0
        right = cut_steps(op.mu_unstable_min, grid.dt, eps_trunc) if op.mu_unstable_min else 0
        return cls(grid, window_start, n_window, left, right)

    @property
    def start(self) -> int:
        return self.window_start - self.left

    @property
    def n_line(self) -> int:
        return self.left + self.n_window + 1 + self.right

    @property
    def noise_range(self) -> tuple[int, int]:
        # Y1 at the line ends needs its own history/future margin
        return self.start - self.left, self.start + self.n_line + self.right

    def window_slice(self) -> slice:
        return slice(self.left, self.left + self.n_window + 1)

    def reduced_times(self) -> np.ndarray:
        return self.grid.reduced(np.arange(self.start, self.start + self.n_line))


def line_y1(op, mod, layout: LineLayout, seeds, shift_steps: int = 0) -> np.ndarray:
    """``Y1`` on the line for each seed, shape ``(len(seeds), n_line, n_modes)``."""
    j0, j1 = layout.noise_range
    incr = np.stack([
        NoisePath(s, op.n_modes, layout.grid.dt, j0, j1, shift_steps).increments for s in seeds
    ])
    y = y1_recursive(op, mod, incr, j0, layout.grid)
    return y[:, layout.left: layout.left + layout.n_line]


def project_nonlinearity(op, F, t_reduced, u, block: int = 4096) -> np.ndarray:
    """``<F(t_p, u_p), phi_i>`` for coefficient arrays ``u`` of shape (C, n, N)."""
    out = np.empty_like(u)
    n = u.shape[1]
    for b0 in range(0, n, block):
        sl = slice(b0, min(b0 + block, n))
        vals = F.values(t_reduced[sl], op.synthesize(u[:, sl]))
        out[:, sl] = op.project(vals)
    return out


def exponential_quadrature(op, g: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid ``int T_{t-s} P^- g ds - int T_{t-s} P^+ g ds`` along axis 1.

    The line start acts as ``-inf`` for stable modes and the line end as
    ``+inf`` for unstable ones.
    """
    gt = np.ascontiguousarray(np.moveaxis(g, -1, 0))
    out = np.empty_like(gt)
    for i, mu in enumerate(op.eigenvalues):
        gi = gt[i]
        if mu < 0:
            a = math.exp(mu * dt)
            s = lfilter([1.0], [1.0, -a], gi, axis=-1)
            out[i] = dt * (s - 0.5 * gi)
        else:
            b = math.exp(-mu * dt)
            s = lfilter([1.0], [1.0, -b], gi[..., ::-1], axis=-1)[..., ::-1]
            out[i] = -dt * (s - 0.5 * gi)
    return np.moveaxis(out, 0, -1)


def apply_m_line(op, F, z, y1, t_reduced, dt) -> np.ndarray:
    """``M(z)`` on the line; ``z`` and ``y1`` have shape (C, n_line, N)."""
    if F.is_zero:
        return np.zeros_like(z)
    g = project_nonlinearity(op, F, t_reduced, z + y1)
    out = exponential_quadrature(op, g, dt)
    if not np.all(np.isfinite(out)):
        raise NonFiniteResult("M(z) produced non-finite coefficients")
    return out


def _chunk_size(layout: LineLayout, n_modes: int, n_samples: int, budget: int) -> int:
    per_sample = 5 * layout.n_line * n_modes * 8
    return max(1, min(n_samples, budget // per_sample))


def solve_line(op, F, mod, layout: LineLayout, seeds, damping: float, max_iters: int,
               residual_tol: float, chunk_bytes: int = _DEFAULT_CHUNK_BYTES,
               shift_steps: int = 0, z_init=None):
    """Run the damped Picard iteration sample chunk by sample chunk.

    Each chunk iterates until ``sup_t mean_chunk ||z_{n+1} - z_n||^2 <= tol^2``
    over the window; a converged chunk is frozen.  The ensemble residual of
    iteration ``n`` is ``sup_t`` of the mean over all samples of the squared
    increment, with frozen samples contributing zero.

    Returns window arrays ``(z, y1, mz)`` of shape (S, n_window + 1, N), the
    ensemble residual history and per-chunk iteration counts.
    """
    seeds = list(seeds)
    S, N = len(seeds), op.n_modes
    win = layout.window_slice()
    t_red = layout.reduced_times()
    dt = layout.grid.dt
    n_w = layout.n_window + 1
    z_win = np.empty((S, n_w, N))
    y_win = np.empty((S, n_w, N))
    m_win = np.empty((S, n_w, N))
    chunk = _chunk_size(layout, N, S, chunk_bytes)
    sq_hist: list[np.ndarray] = []
    chunk_iters = []
    all_converged = True
    for c0 in range(0, S, chunk):
        block = seeds[c0:c0 + chunk]
        y1 = line_y1(op, mod, layout, block, shift_steps)
        z = np.zeros_like(y1) if z_init is None else z_init(y1)
        mz = z
        converged = False
        it = 0
        for it in range(1, max_iters + 1):
            mz = apply_m_line(op, F, z, y1, t_red, dt)
            z_new = mz if damping == 1.0 else (1.0 - damping) * z + damping * mz
            dsq = np.sum((z_new[:, win] - z[:, win]) ** 2, axis=-1).sum(axis=0)
            if len(sq_hist) < it:
                sq_hist.append(np.zeros(n_w))
            sq_hist[it - 1] += dsq
            z = z_new
            if np.max(dsq) / len(block) <= residual_tol**2:
                converged = True
                break
        all_converged &= converged
        chunk_iters.append(it)
        z_win[c0:c0 + len(block)] = z[:, win]
        y_win[c0:c0 + len(block)] = y1[:, win]
        m_win[c0:c0 + len(block)] = mz[:, win]
        log.debug("chunk %d: %d iterations, converged=%s", c0 // chunk, it, converged)
    residuals = [math.sqrt(float(np.max(h)) / S) for h in sq_hist]
    return z_win, y_win, m_win, residuals, chunk_iters, all_converged


def resolve_damping(op, F, damping):
    q = contraction_estimate(op, F)
    if q >= 1:
        warnings.warn(f"contraction estimate q = {q:.3f} >= 1: Picard convergence is not "
                      "certified" + ("" if damping is not None else "; using damping 0.5"),
                      RuntimeWarning, stacklevel=3)
    if damping is None:
        damping = 1.0 if q < 1 else 0.5
    return q, damping


def picard_solve(op: SpectralOperator, F: Nonlinearity, mod: Modulation, cfg: SolverConfig,
                 seeds=None, shift_steps: int = 0, raise_on_failure: bool = True) -> SolveResult:
    """Solve ``Z = M(Z)`` over one period window for every noise seed.

    Starts from ``z_0 = 0`` and iterates ``z_{n+1} = (1 - lam) z_n + lam M(z_n)``.
    Raises :class:`NotConverged` (with the result attached) when the
    tolerance is not met within ``max_iters``.
    """
    q, damping = resolve_damping(op, F, cfg.damping)
    seeds = cfg.seeds() if seeds is None else list(seeds)
    grid = cfg.grid
    i0 = grid.index(cfg.t0)
    layout = LineLayout.build(op, grid, i0, grid.n_tau, cfg.eps_trunc)
    z, y1, mz, residuals, chunk_iters, converged = solve_line(
        op, F, mod, layout, seeds, damping, cfg.max_iters, cfg.residual_tol,
        cfg.chunk_bytes, shift_steps)
    n = grid.n_tau
    report = IterationReport(residuals, damping, q, converged, cfg.residual_tol, chunk_iters)
    mk = lambda v: PeriodicProcess(v[:, :n], grid.dt, grid.tau, cfg.t0, seeds)  # noqa: E731
    result = SolveResult(mk(z), mk(y1), z[:, n].copy(), y1[:, n].copy(), mk(mz), report,
                         cfg.resolved_t_cut(op))
    if not converged and raise_on_failure:
        raise NotConverged(
            f"residual {residuals[-1]:.3e} > tol {cfg.residual_tol:.1e} after "
            f"{cfg.max_iters} iterations (q = {q:.3f}, damping = {damping})", result)
    return result


def apply_M(op: SpectralOperator, F: Nonlinearity, mod: Modulation, z_line_fn, cfg: SolverConfig,
            seeds=None) -> PeriodicProcess:
    """``M(z)`` over the period window for a user-supplied periodic input.

    ``z_line_fn(y1)`` receives ``Y1`` on the solve line (shape (C, n_line, N))
    and returns ``z`` on the same line, e.g. a deterministic periodic
    profile plus a multiple of ``Y1``; such inputs satisfy the cocycle rule
    by construction.
    """
    seeds = cfg.seeds() if seeds is None else list(seeds)
    grid = cfg.grid
    layout = LineLayout.build(op, grid, grid.index(cfg.t0), grid.n_tau, cfg.eps_trunc)
    win = layout.window_slice()
    t_red = layout.reduced_times()
    out = np.empty((len(seeds), grid.n_tau, op.n_modes))
    chunk = _chunk_size(layout, op.n_modes, len(seeds), cfg.chunk_bytes)
    for c0 in range(0, len(seeds), chunk):
        block = seeds[c0:c0 + chunk]
        y1 = line_y1(op, mod, layout, block)
        mz = apply_m_line(op, F, z_line_fn(y1, layout), y1, t_red, grid.dt)
        out[c0:c0 + len(block)] = mz[:, win][:, :grid.n_tau]
    return PeriodicProcess(out, grid.dt, grid.tau, cfg.t0, seeds)


def apply_M_at(op: SpectralOperator, F: Nonlinearity, mod: Modulation, path, z_fn, t: float,
               t_cut: float) -> Field:
    """``M(z)(t)`` for one path by direct trapezoid sums over ``[t - T_cut, t + T_cut]``.

    ``z_fn(path, j)`` returns ``z`` at absolute step indices ``j`` as an
    array (len(j), N).  Every input is addressed relative to ``t``, so for a
    cocycle-respecting ``z_fn`` the identity ``M(z)(t + tau, w) = M(z)(t, theta_tau w)``
    holds bit-for-bit.
    """
    grid = TimeGrid.from_period(path.dt, mod.tau)
    i_t = grid.index(t)
    n = steps_in(t_cut, path.dt, "T_cut")
    j = np.arange(i_t - n, i_t + n + 1)
    jn0 = i_t - 2 * n
    y1 = y1_recursive(op, mod, path.window(jn0, i_t + 2 * n + 1), jn0, grid)[n: 3 * n + 1]
    u = np.asarray(z_fn(path, j), dtype=float) + y1
    g = op.project(F.values(grid.reduced(j), op.synthesize(u)))
    lag = ((i_t - j) * grid.dt)[:, None]
    w = np.full((2 * n + 1, 1), grid.dt)
    w[[0, n, 2 * n]] = 0.5 * grid.dt
    own_side = np.where(op.unstable_mask, lag <= 0, lag >= 0)
    terms = w * np.exp(np.where(own_side, op.eigenvalues * lag, -np.inf)) * g
    past = terms[: n + 1].sum(axis=0)
    future = terms[n:].sum(axis=0)
    out = np.where(op.unstable_mask, -future, past)
    if not np.all(np.isfinite(out)):
        raise NonFiniteResult("M(z)(t) is not finite")
    return Field(out)


# ---------------------------------------------------------------------------
# certificates


def holder_lags(n_tau: int, dt: float, n_levels: int = 6) -> list[int]:
    lags = []
    for k in range(1, n_levels + 1):
        h = n_tau // 2**k
        if h >= 1 and h not in lags:
            lags.append(h)
    return lags


def holder_constant(values: np.ndarray, dt: float, lags) -> dict:
    """Fit ``E||M(t1) - M(t2)||^2 <= C |t1 - t2|`` over the given step lags.

    ``values`` has shape (S, n, N).  Returns the per-lag ratios and their max.
    """
    per_lag = {}
    for h in lags:
        d = np.sum((values[:, h:] - values[:, :-h]) ** 2, axis=-1).mean(axis=0)
        per_lag[float(h * dt)] = float(np.max(d) / (h * dt))
    return {"per_lag": per_lag, "C_hat": max(per_lag.values(), default=0.0)}


def bound_certificates(op: SpectralOperator, F: Nonlinearity, result: SolveResult) -> dict:
    """Empirical counterparts of the ``M`` bounds, fitted constants included."""
    mz = result.mz.values
    S = mz.shape[0]
    sq = np.sum(mz**2, axis=-1)
    mean_sq = sq.mean(axis=0)
    k = int(np.argmax(mean_sq))
    bound = m_sup_bound(op, F)
    empirical = float(mean_sq[k])
    stderr = float(sq[:, k].std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0

    hold = holder_constant(mz, result.mz.dt, holder_lags(result.mz.n_tau, result.mz.dt))

    h1 = np.einsum("stn,nm,stm->st", mz, op.gradient_gram, mz).mean(axis=0)
    inv_s, inv_u = op.inverse_gaps()
    h1_scale = 2.0 * F.sup_f**2 * (inv_s + inv_u) * op.domain_length
    h1_sup = float(np.max(h1))
    return {
        "linf": {"empirical": empirical, "stderr": stderr, "bound": bound,
                 "satisfied": bool(empirical <= bound)},
        "holder": hold,
        "h1": {"empirical": h1_sup, "finite": bool(np.isfinite(h1_sup)),
               "fitted_C": h1_sup / h1_scale if h1_scale > 0 else 0.0},
        "n_samples": S,
    }
