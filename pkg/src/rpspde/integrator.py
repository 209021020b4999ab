"""Forward exponential-Euler integration and the random-periodicity checks.

The step matches the left-point convention of the stochastic convolution::

    u_{k+1} = e^{mu dt} u_k + dt phi1(mu dt) <F(t_k, u_k), phi_i> + e^{mu dt} sigma(t_k) dW_k

so integrating from a solved ``Y(t0)`` for one period with the same
increments reproduces ``Y(t0 + tau)`` up to the drift quadrature error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convolution import Modulation
from .errors import NonFiniteResult
from .fixed_point import LineLayout, SolverConfig, picard_solve, resolve_damping, solve_line
from .grid import TimeGrid, steps_in
from .noise import CoarsenedPath, NoisePath
from .nonlinearity import Nonlinearity
from .spectral import Field, SpectralOperator


def phi1(z):
    """``(e^z - 1)/z`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


@dataclass
class Trajectory:
    times: np.ndarray
    coefficients: np.ndarray
    dt: float
    seed: int | None = None

    def field_at(self, k: int) -> Field:
        return Field(self.coefficients[k])

    @property
    def final(self) -> Field:
        return Field(self.coefficients[-1])


def step_batch(op: SpectralOperator, F: Nonlinearity, mod: Modulation, grid: TimeGrid,
               u0: np.ndarray, incr: np.ndarray, j0: int, keep=None) -> np.ndarray:
    """Advance coefficient states ``u0`` (..., N) through increments (..., n, N).

    Returns the states at the step indices listed in ``keep`` (offsets from
    ``j0``, default every point ``0..n``), shape (..., len(keep), N).
    """
    n = incr.shape[-2]
    a = np.exp(op.eigenvalues * grid.dt)
    drift_w = grid.dt * phi1(op.eigenvalues * grid.dt)
    sig = mod.sigma(grid.reduced(np.arange(j0, j0 + n)))
    keep = range(n + 1) if keep is None else keep
    keep_set = {int(k): pos for pos, k in enumerate(keep)}
    out = np.empty(u0.shape[:-1] + (len(keep_set), op.n_modes))
    u = np.array(u0, dtype=float)
    if 0 in keep_set:
        out[..., keep_set[0], :] = u
    t_red = grid.reduced(np.arange(j0, j0 + n))
    for k in range(n):
        nxt = a * u + a * sig[k] * incr[..., k, :]
        if not F.is_zero:
            nxt += drift_w * op.project(F.values(t_red[k], op.synthesize(u)))
        u = nxt
        if k + 1 in keep_set:
            out[..., keep_set[k + 1], :] = u
    if not np.all(np.isfinite(out)):
        raise NonFiniteResult("forward integration produced non-finite values")
    return out


def integrate_forward(op: SpectralOperator, F: Nonlinearity, mod: Modulation, path, u0,
                      t_start: float, t_end: float, dt: float) -> Trajectory:
    """Exponential-Euler trajectory on ``[t_start, t_end]`` driven by ``path``."""
    if not t_start < t_end:
        raise ValueError("need t_start < t_end")
    if dt != path.dt:
        raise ValueError("dt must match the path step")
    grid = TimeGrid.from_period(dt, mod.tau)
    j0, j1 = grid.index(t_start), grid.index(t_end)
    u0 = u0.coefficients if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    coef = step_batch(op, F, mod, grid, u0, path.window(j0, j1), j0)
    coef[0] = u0
    return Trajectory(dt * np.arange(j0, j1 + 1), coef, dt, getattr(path, "seed", None))


@dataclass
class VerificationReport:
    relative_error: float
    per_sample_residuals: list
    shift_residual: float | None
    dt_levels: list
    errors_by_level: list
    extra: dict = field(default_factory=dict)

    @property
    def decreasing(self) -> bool:
        e = self.errors_by_level
        return all(e[k + 1] < e[k] for k in range(len(e) - 1))

    def to_dict(self) -> dict:
        return {
            "relative_error": self.relative_error,
            "per_sample_residuals": [float(v) for v in self.per_sample_residuals],
            "shift_residual": self.shift_residual,
            "dt_levels": list(self.dt_levels),
            "errors_by_level": [float(v) for v in self.errors_by_level],
            "decreasing": self.decreasing,
            **self.extra,
        }


def _relative_error(diff, ref):
    den = float(np.mean(np.sum(ref**2, axis=-1)))
    num = float(np.mean(np.sum(diff**2, axis=-1)))
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return math.sqrt(num / den)


def period_residuals(op, F, mod, cfg: SolverConfig, result, seeds):
    """Per-sample ``||u(t0 + tau, t0, Y(t0)) - Y(t0 + tau)||`` and the relative error."""
    grid = cfg.grid
    i0 = grid.index(cfg.t0)
    y0 = result.y.values[:, 0]
    incr = np.stack([NoisePath(s, op.n_modes, grid.dt, i0, i0 + grid.n_tau).increments
                     for s in seeds])
    u_end = step_batch(op, F, mod, grid, y0, incr, i0, keep=[grid.n_tau])[:, 0]
    diff = u_end - result.y_end
    return np.sqrt(np.sum(diff**2, axis=-1)), _relative_error(diff, result.y_end)


def verify_random_periodic(op: SpectralOperator, F: Nonlinearity, mod: Modulation,
                           cfg: SolverConfig, dt_levels=None, n_shift_probes: int = 5,
                           results=None) -> VerificationReport:
    """Solve at each ``dt`` level and integrate one period from the solution.

    ``dt_levels`` is ordered coarse to fine; the headline relative error is
    the one at the finest level.  ``results`` may carry already-solved
    ``SolveResult`` objects keyed by ``dt``.
    """
    dt_levels = sorted(dt_levels or [2 * cfg.dt, cfg.dt], reverse=True)
    results = dict(results or {})
    errors, per_sample, solves = [], None, {}
    for dt in dt_levels:
        c = _with_dt(cfg, dt)
        res = results.get(dt) or picard_solve(op, F, mod, c)
        seeds = res.z.seeds
        per_sample, rel = period_residuals(op, F, mod, c, res, seeds)
        errors.append(rel)
        solves[dt] = res
    fine_cfg = _with_dt(cfg, dt_levels[-1])
    fine = solves[dt_levels[-1]]
    shift = shift_identity_residual(op, F, mod, fine_cfg, fine, n_shift_probes)
    return VerificationReport(errors[-1], per_sample.tolist(), shift, list(dt_levels), errors,
                              {"n_samples": len(per_sample),
                               "iterations_by_level": [solves[d].report.n_iters for d in dt_levels]})


def shift_identity_residual(op, F, mod, cfg, result, n_probes: int) -> float | None:
    """Relative gap between ``Y(t0 + tau, w)`` and ``Y(t0, theta_tau w)`` recomputed on shifted paths."""
    if n_probes <= 0:
        return None
    seeds = result.z.seeds[:n_probes]
    shifted = picard_solve(op, F, mod, cfg, seeds=seeds, shift_steps=cfg.grid.n_tau,
                           raise_on_failure=False)
    a = shifted.y.values[:, 0]
    b = result.y_end[:n_probes]
    return _relative_error(a - b, b)


def _with_dt(cfg: SolverConfig, dt: float) -> SolverConfig:
    return SolverConfig(dt=dt, tau=cfg.tau, t_cut=None, eps_trunc=cfg.eps_trunc,
                        damping=cfg.damping, max_iters=cfg.max_iters,
                        residual_tol=cfg.residual_tol, n_samples=cfg.n_samples,
                        seed_base=cfg.seed_base, t0=cfg.t0, chunk_bytes=cfg.chunk_bytes)


def verify_stationary(op: SpectralOperator, F: Nonlinearity, sigma: Modulation, n_samples: int,
                      t_probes=(0.2, 0.6, 1.0), dt_levels=(4e-3, 2e-3), ref_factor: int = 8,
                      eps_trunc: float = 1e-6, seed_base: int = 0, residual_tol: float = 1e-7,
                      max_iters: int = 50) -> VerificationReport:
    """Check ``u(t, Y(w), w) = Y(theta_t w)`` for autonomous ``F`` and constant ``sigma``.

    ``Y`` is solved once on a reference grid ``min(dt_levels)/ref_factor``;
    the forward integrator runs at each level on increments summed from the
    same fine path, so the residual isolates the integrator's strong error.
    """
    if sigma.epsilon != 0:
        raise ValueError("the stationary check needs time-independent sigma")
    dt_levels = sorted(dt_levels, reverse=True)
    dt_ref = dt_levels[-1] / ref_factor
    factors = [int(round(d / dt_ref)) for d in dt_levels]
    for d, f in zip(dt_levels, factors):
        if abs(f * dt_ref - d) > 1e-9 * d:
            raise ValueError(f"dt level {d} is not a multiple of the reference step {dt_ref}")
    horizon = max(t_probes)
    # period is arbitrary here; take the horizon so every level divides it
    fine_grid = TimeGrid(dt_ref, steps_in(horizon, dt_ref, "t_probe"))
    probes_fine = [steps_in(t, dt_ref, "t_probe") for t in t_probes]
    mod_fine = Modulation(sigma.sigma_hat, fine_grid.tau, 0.0)
    _, damping = resolve_damping(op, F, None)
    layout = LineLayout.build(op, fine_grid, 0, fine_grid.n_tau, eps_trunc)
    seeds = list(range(seed_base, seed_base + n_samples))
    z, y1, _, residuals, _, _ = solve_line(op, F, mod_fine, layout, seeds, damping, max_iters,
                                           residual_tol)
    y_ref = z + y1  # (S, n_tau + 1, N)
    errors, per_probe = [], []
    for d, f in zip(dt_levels, factors):
        grid = TimeGrid(d, fine_grid.n_tau // f)
        mod = Modulation(sigma.sigma_hat, grid.tau, 0.0)
        keep = [steps_in(t, d, "t_probe") for t in t_probes]
        incr = np.stack([CoarsenedPath(NoisePath(s, op.n_modes, dt_ref, 0, fine_grid.n_tau), f)
                         .window(0, grid.n_tau) for s in seeds])
        u = step_batch(op, F, mod, grid, y_ref[:, 0], incr, 0, keep=keep)
        ref = y_ref[:, probes_fine]
        diff = u - ref
        rms = np.sqrt(np.mean(np.sum(diff**2, axis=-1), axis=0))
        per_probe.append(rms.tolist())
        errors.append(float(np.sqrt(np.mean(rms**2))))
        last = np.sqrt(np.sum(diff[:, -1] ** 2, axis=-1))
    ratios = [errors[k] / errors[k + 1] if errors[k + 1] > 0 else math.inf
              for k in range(len(errors) - 1)]
    rel = _relative_error(diff[:, -1], y_ref[:, probes_fine[-1]])
    return VerificationReport(rel, last.tolist(), None, list(dt_levels), errors,
                              {"dt_ref": dt_ref, "t_probes": list(t_probes),
                               "rms_by_level_and_probe": per_probe, "ratios": ratios,
                               "solver_residuals": residuals, "n_samples": n_samples})


def temperedness_diagnostic(norm_fn, r_values):
    """``(r, log||Y(theta_r w)|| / |r|)`` pairs; ``norm_fn(r)`` returns ``||Y(theta_r w)||``.

    A zero norm is reported as ``(r, None, "zero")`` instead of ``-inf``.
    """
    out = []
    prev = 0.0
    for r in r_values:
        if abs(r) < prev:
            raise ValueError("r_values must be increasing in |r|")
        prev = abs(r)
        if r == 0:
            raise ValueError("r must be nonzero")
        nrm = float(norm_fn(r))
        if nrm == 0:
            out.append((r, None, "zero"))
        else:
            out.append((r, math.log(nrm) / abs(r), "ok"))
    return out


def solution_norm_along_orbit(op, F, mod, cfg: SolverConfig, seeds, r: float) -> np.ndarray:
    """``||Y(t0, theta_r w)||`` per seed, solved on the shifted path."""
    n = steps_in(r, cfg.dt, "r")
    if n % cfg.grid.n_tau:
        raise ValueError("r must be a whole number of periods")
    res = picard_solve(op, F, mod, cfg, seeds=seeds, shift_steps=n, raise_on_failure=False)
    return np.sqrt(np.sum(res.y.values[:, 0] ** 2, axis=-1))
