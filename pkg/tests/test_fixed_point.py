import math
import warnings

import numpy as np
import pytest

from rpspde.convolution import Modulation, y1_recursive
from rpspde.errors import NotConverged
from rpspde.fixed_point import (LineLayout, SolverConfig, apply_M, apply_M_at, bound_certificates,
                                contraction_estimate, line_y1, m_sup_bound, picard_solve)
from rpspde.grid import TimeGrid
from rpspde.noise import NoisePath
from rpspde.nonlinearity import ConstantFieldNonlinearity, SineNonlinearity


def periodic_input(op, mod, kappa, phase_coef, n_margin):
    """z(t, w) = A(t mod tau) + kappa * Y1(t, w), addressed by step index."""
    def z_fn(path, j):
        grid = TimeGrid.from_period(path.dt, mod.tau)
        j0 = int(j[0]) - n_margin
        incr = path.window(j0, int(j[-1]) + 1 + n_margin)
        y = y1_recursive(op, mod, incr, j0, grid)[n_margin:n_margin + len(j)]
        ph = 2 * math.pi * grid.reduced(j) / mod.tau
        return np.cos(ph)[:, None] * phase_coef + kappa * y
    return z_fn


@pytest.mark.parametrize("g, q", [(0.0, 0.0), (0.1, 0.31623), (0.5, 1.58114)])
def test_contraction_estimate(op, g, q):
    assert contraction_estimate(op, SineNonlinearity(g, 0.0, 1.0)) == pytest.approx(q, abs=1e-5)


def test_m_bound_reference(op):
    assert m_sup_bound(op, SineNonlinearity(0.1, 0.05, 1.0)) == pytest.approx(0.70686, abs=1e-4)


def test_config_validation():
    with pytest.raises(ValueError, match="tau"):
        SolverConfig(dt=1e-3, tau=1.0005)
    with pytest.raises(ValueError, match="T_cut"):
        SolverConfig(dt=1e-3, t_cut=1.00005)
    with pytest.raises(ValueError):
        SolverConfig(residual_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(damping=1.5)


def test_zero_F_one_iteration(op, mod):
    Z = SineNonlinearity(0.0, 0.0, 1.0)
    res = picard_solve(op, Z, mod, SolverConfig(dt=5e-3, n_samples=4))
    assert res.report.n_iters == 1 and res.report.converged
    assert not np.any(res.z.values)
    cert = bound_certificates(op, Z, res)
    assert cert["linf"]["empirical"] == 0 and cert["holder"]["C_hat"] == 0 and cert["h1"]["empirical"] == 0


def test_zero_is_fixed_point_only_for_zero_projection(op, mod, sine_F):
    res = picard_solve(op, sine_F, mod, SolverConfig(dt=5e-3, n_samples=2))
    assert np.any(res.z.values)


def test_constant_field_closed_form(op):
    c = np.array([0.1, 0.2, -0.05, 0.0, 0.0, 0.01, 0.0, 0.0])
    F = ConstantFieldNonlinearity(op, c)
    errs = []
    for dt in (0.02, 0.01):
        res = picard_solve(op, F, Modulation.zero(8), SolverConfig(dt=dt, n_samples=1, eps_trunc=1e-10))
        z = res.z.values[0]
        assert np.ptp(z, axis=0).max() < 1e-10  # constant in t, up to filter roundoff
        errs.append(np.abs(z - (-c / op.eigenvalues)).max())
        # z_1 is already the fixed point: the second update does not move
        assert res.report.residuals[1] < 1e-10
    assert 3 <= errs[0] / errs[1] <= 5


def test_geometric_convergence(op, mod, sine_F):
    res = picard_solve(op, sine_F, mod, SolverConfig(dt=5e-3, n_samples=8))
    q = contraction_estimate(op, sine_F)
    assert res.report.converged
    assert res.report.residuals[-1] <= 1e-7
    assert all(r <= q + 0.05 for r in res.report.ratios[1:])


def test_not_converged_carries_result(op, mod):
    F = SineNonlinearity(2.0, 0.05, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(NotConverged) as info:
            picard_solve(op, F, mod, SolverConfig(dt=1e-2, n_samples=2, damping=1.0, max_iters=5))
    rep = info.value.result.report
    assert not rep.converged and rep.n_iters == 5 and all(np.isfinite(rep.residuals))


def test_non_contraction_warning_and_damping(op, mod):
    F = SineNonlinearity(0.5, 0.0, 1.0)
    with pytest.warns(RuntimeWarning, match="contraction"):
        res = picard_solve(op, F, mod, SolverConfig(dt=1e-2, n_samples=1, max_iters=3),
                           raise_on_failure=False)
    assert res.report.damping == 0.5


def test_chunking_matches_single_batch(op, mod, sine_F):
    a = picard_solve(op, sine_F, mod, SolverConfig(dt=1e-2, n_samples=4))
    b = picard_solve(op, sine_F, mod, SolverConfig(dt=1e-2, n_samples=4, chunk_bytes=1))
    assert len(b.report.chunk_iterations) == 4
    assert np.max(np.abs(a.z.values - b.z.values)) < 1e-6
    np.testing.assert_array_equal(a.y1.values, b.y1.values)


def test_deterministic(op, mod, sine_F):
    cfg = SolverConfig(dt=1e-2, n_samples=3)
    a, b = picard_solve(op, sine_F, mod, cfg), picard_solve(op, sine_F, mod, cfg)
    np.testing.assert_array_equal(a.z.values, b.z.values)
    assert a.report.residuals == b.report.residuals


def test_point_evaluation_equivariance(op, mod, sine_F, rng):
    dt, t_cut = 1e-2, 28.0
    n_tau = 100
    z_fn = periodic_input(op, mod, 0.7, rng.normal(scale=0.1, size=8), 2800)
    for _ in range(5):
        seed = int(rng.integers(0, 2**31))
        k = int(rng.integers(0, n_tau))
        path = NoisePath(seed, 8, dt, -20000, 20000)
        a = apply_M_at(op, sine_F, mod, path, z_fn, (k + n_tau) * dt, t_cut)
        b = apply_M_at(op, sine_F, mod, path.shifted(n_tau), z_fn, k * dt, t_cut)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)


def test_line_and_point_forms_agree(op, mod, sine_F):
    dt = 1e-2
    cfg = SolverConfig(dt=dt, n_samples=1, seed_base=5, eps_trunc=1e-8)
    line = apply_M(op, sine_F, mod, lambda y1, layout: np.zeros_like(y1), cfg)
    path = NoisePath(5, 8, dt, -20000, 20000)
    zero = lambda p, j: np.zeros((len(j), 8))  # noqa: E731
    t_cut = cfg.resolved_t_cut(op)
    for k in (0, 40, 99):
        pt = apply_M_at(op, sine_F, mod, path, zero, k * dt, t_cut).coefficients
        np.testing.assert_allclose(line.values[0, k], pt, atol=1e-6)


def test_truncation_is_monotone(op, mod, sine_F):
    dt = 1e-2
    path = NoisePath(2, 8, dt, -30000, 30000)
    zero = lambda p, j: np.zeros((len(j), 8))  # noqa: E731
    beta = op.spectral_gap
    ks = []
    for T in (4.0, 8.0, 12.0):
        d = (apply_M_at(op, sine_F, mod, path, zero, 0.0, 2 * T).coefficients
             - apply_M_at(op, sine_F, mod, path, zero, 0.0, T).coefficients)
        ks.append(np.linalg.norm(d) / math.exp(-beta * T))
    K = ks[0]
    assert all(k <= 2 * K for k in ks[1:])


def test_layout_margins(op):
    grid = TimeGrid.from_period(1e-3, 1.0)
    lay = LineLayout.build(op, grid, 0, 1000, 1e-6)
    assert lay.left == math.ceil(math.log(1e6) / 1.0 / 1e-3 - 1e-9)
    assert lay.right == math.ceil(math.log(1e6) / 0.5 / 1e-3 - 1e-9)
    y = line_y1(op, Modulation.zero(8), lay, [1])
    assert y.shape == (1, lay.n_line, 8) and not np.any(y)


def test_certificates_reference(op, mod, sine_F):
    res = picard_solve(op, sine_F, mod, SolverConfig(dt=5e-3, n_samples=16))
    cert = bound_certificates(op, sine_F, res)
    assert cert["linf"]["satisfied"]
    assert math.isfinite(cert["holder"]["C_hat"]) and cert["h1"]["finite"]
