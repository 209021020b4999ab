"""scikit-learn style wrappers.

The "samples" are noise seeds: ``X`` is a column of non-negative integers,
one row per Wiener path.  Outputs are mode coefficients at ``t0``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .convolution import Modulation, default_t_cut, y1_ensemble_window
from .fixed_point import SolverConfig, bound_certificates, picard_solve
from .nonlinearity import SineNonlinearity
from .spectral import build_interval_operator


def _check_seeds(X) -> list[int]:
    arr = check_array(X, ensure_2d=False, dtype=None)
    arr = np.asarray(arr).reshape(len(arr), -1)
    if arr.shape[1] != 1:
        raise ValueError(f"expected one seed per row, got {arr.shape[1]} columns")
    col = arr[:, 0]
    if not np.all(np.equal(np.mod(col, 1), 0)) or np.any(col < 0):
        raise ValueError("seeds must be non-negative integers")
    return [int(s) for s in col]


class _Base(BaseEstimator):
    def __init__(self, c=1.0, n_modes=8, n_grid=32, dt=1e-3, tau=1.0, t0=0.0,
                 sigma_scale=0.2, sigma_decay=2.0, epsilon=0.5, eps_trunc=1e-6):
        self.c = c
        self.n_modes = n_modes
        self.n_grid = n_grid
        self.dt = dt
        self.tau = tau
        self.t0 = t0
        self.sigma_scale = sigma_scale
        self.sigma_decay = sigma_decay
        self.epsilon = epsilon
        self.eps_trunc = eps_trunc

    def _build(self):
        self.operator_ = build_interval_operator(self.c, self.n_modes, self.n_grid)
        self.modulation_ = Modulation.power_law(self.n_modes, self.sigma_scale, self.sigma_decay,
                                                self.tau, self.epsilon)


class StochasticConvolution(TransformerMixin, _Base):
    """Maps noise seeds to ``Y1(t0)`` coefficients, shape (n_seeds, n_modes)."""

    def fit(self, X=None, y=None):
        self._build()
        self.t_cut_ = default_t_cut(self.operator_, self.dt, self.eps_trunc)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        seeds = _check_seeds(X)
        win = y1_ensemble_window(self.operator_, self.modulation_, seeds, self.dt, self.t0,
                                 self.t_cut_)
        return win.values[:, 0]


class RandomPeriodicSolver(_Base):
    """Solves for the random periodic solution on the seeds passed to ``fit``.

    Parameters
    ----------
    a, b : float
        Drift ``F(t, u) = a sin(u) + b cos(2 pi t / tau)``.
    damping : float or None
        Picard damping; None picks it from the contraction estimate.

    Attributes
    ----------
    result_ : SolveResult
    report_ : IterationReport
    y_ : ndarray, shape (n_seeds, n_tau, n_modes)
        ``Y = Z + Y1`` over one period for each fitted seed.
    """

    def __init__(self, a=0.1, b=0.05, c=1.0, n_modes=8, n_grid=32, dt=1e-3, tau=1.0, t0=0.0,
                 sigma_scale=0.2, sigma_decay=2.0, epsilon=0.5, eps_trunc=1e-6, damping=None,
                 max_iters=50, residual_tol=1e-7):
        super().__init__(c, n_modes, n_grid, dt, tau, t0, sigma_scale, sigma_decay, epsilon,
                         eps_trunc)
        self.a = a
        self.b = b
        self.damping = damping
        self.max_iters = max_iters
        self.residual_tol = residual_tol

    def _config(self, n):
        return SolverConfig(dt=self.dt, tau=self.tau, eps_trunc=self.eps_trunc,
                            damping=self.damping, max_iters=self.max_iters,
                            residual_tol=self.residual_tol, n_samples=n, t0=self.t0)

    def fit(self, X, y=None):
        seeds = _check_seeds(X)
        self._build()
        self.nonlinearity_ = SineNonlinearity(self.a, self.b, self.tau)
        self.result_ = picard_solve(self.operator_, self.nonlinearity_, self.modulation_,
                                    self._config(len(seeds)), seeds=seeds)
        self.report_ = self.result_.report
        self.report_.certificates = bound_certificates(self.operator_, self.nonlinearity_,
                                                       self.result_)
        self.y_ = self.result_.y.values
        self.seeds_ = seeds
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        """``Y(t0)`` coefficients for each seed; solves afresh for unseen seeds."""
        check_is_fitted(self, "result_")
        seeds = _check_seeds(X)
        known = {s: k for k, s in enumerate(self.seeds_)}
        out = np.empty((len(seeds), self.n_modes))
        missing = [s for s in seeds if s not in known]
        extra = {}
        if missing:
            res = picard_solve(self.operator_, self.nonlinearity_, self.modulation_,
                               self._config(len(missing)), seeds=missing)
            extra = {s: res.y.values[k, 0] for k, s in enumerate(missing)}
        for row, s in enumerate(seeds):
            out[row] = self.y_[known[s], 0] if s in known else extra[s]
        return out

    def score(self, X, y=None):
        """Negative relative one-period residual on the fitted seeds (higher is better)."""
        from .integrator import period_residuals

        check_is_fitted(self, "result_")
        _, rel = period_residuals(self.operator_, self.nonlinearity_, self.modulation_,
                                  self._config(len(self.seeds_)), self.result_, self.seeds_)
        return -rel
