import math

import numpy as np
import pytest

from rpspde.convolution import Modulation, compute_y1
from rpspde.errors import NonFiniteResult
from rpspde.fixed_point import SolverConfig
from rpspde.integrator import (integrate_forward, phi1, solution_norm_along_orbit,
                               temperedness_diagnostic, verify_random_periodic, verify_stationary)
from rpspde.noise import NoisePath, ZeroPath
from rpspde.nonlinearity import ConstantFieldNonlinearity, SineNonlinearity
from rpspde.spectral import Field, build_interval_operator

ZERO_F = SineNonlinearity(0.0, 0.0, 1.0)


def test_phi1():
    np.testing.assert_allclose(phi1(np.array([0.0, 1e-3, -2.0])),
                               [1.0, math.expm1(1e-3) / 1e-3, math.expm1(-2.0) / -2.0])


def test_pure_semigroup(op):
    for j in (1, 2, 5):
        tr = integrate_forward(op, ZERO_F, Modulation.zero(8), ZeroPath(8, 1e-2),
                               Field.mode(op, j), 0.0, 1.0, 1e-2)
        assert tr.coefficients[-1, j - 1] == pytest.approx(math.exp(op.eigenvalues[j - 1]), rel=1e-12)
        np.testing.assert_array_equal(tr.coefficients[0], Field.mode(op, j).coefficients)


def test_first_entry_is_initial_condition(op, mod, sine_F, rng):
    u0 = rng.normal(size=8)
    tr = integrate_forward(op, sine_F, mod, NoisePath(1, 8, 1e-2, 0, 100), u0, 0.0, 1.0, 1e-2)
    np.testing.assert_array_equal(tr.coefficients[0], u0)
    assert tr.times[0] == 0.0 and len(tr.times) == 101


def test_bad_interval(op, mod, sine_F):
    with pytest.raises(ValueError):
        integrate_forward(op, sine_F, mod, ZeroPath(8, 1e-2), np.zeros(8), 1.0, 1.0, 1e-2)


def test_unstable_blowup_reported(op):
    big = build_interval_operator(30.0, 2, 8)
    with pytest.raises(NonFiniteResult):
        integrate_forward(big, ZERO_F, Modulation.zero(2), ZeroPath(2, 1.0),
                          np.ones(2), 0.0, 40.0, 1.0)


def test_constant_field_equilibrium(op):
    c = np.array([0.0, 0.3, 0.1, 0, 0, 0, 0, 0])
    F = ConstantFieldNonlinearity(op, c)
    tr = integrate_forward(op, F, Modulation.zero(8), ZeroPath(8, 1e-2), np.zeros(8), 0.0, 30.0, 1e-2)
    np.testing.assert_allclose(tr.coefficients[-1, 1:3], -c[1:3] / op.eigenvalues[1:3], rtol=1e-10)


def test_ou_variance_long_run():
    op1 = build_interval_operator(-0.5, 1, 4)  # mu = -1
    mod1 = Modulation(np.array([0.2]), 1.0, 0.0)
    finals = []
    for s in range(300):
        tr = integrate_forward(op1, ZERO_F, mod1, NoisePath(s, 1, 1e-2, 0, 1500), np.zeros(1),
                               0.0, 15.0, 1e-2)
        finals.append(tr.coefficients[-1, 0])
    finals = np.array(finals)
    se = finals.var() * math.sqrt(2 / (len(finals) - 1))
    assert abs(finals.var() - 0.02) < 3 * se


def test_noise_rule_matches_convolution(op, mod):
    dt, t_cut = 1e-2, 28.0
    path = NoisePath(7, 8, dt, -3000, 100)
    tr = integrate_forward(op, ZERO_F, mod, path, np.zeros(8), -t_cut, 0.0, dt)
    y = compute_y1(op, path, mod, 0.0, t_cut).coefficients
    stable = ~op.unstable_mask
    np.testing.assert_allclose(tr.coefficients[-1, stable], y[stable], atol=1e-12)


def test_cocycle_exact(op, mod, sine_F, rng):
    path = NoisePath(3, 8, 1e-2, 0, 300)
    u0 = rng.normal(scale=0.1, size=8)
    full = integrate_forward(op, sine_F, mod, path, u0, 0.0, 2.0, 1e-2)
    first = integrate_forward(op, sine_F, mod, path, u0, 0.0, 0.7, 1e-2)
    second = integrate_forward(op, sine_F, mod, path, first.final, 0.7, 2.0, 1e-2)
    np.testing.assert_array_equal(full.coefficients[-1], second.coefficients[-1])


def test_verify_trivial(op):
    rep = verify_random_periodic(op, ZERO_F, Modulation.zero(8), SolverConfig(dt=1e-2, n_samples=2),
                                 [2e-2, 1e-2], n_shift_probes=1)
    assert rep.relative_error == 0.0 and max(rep.per_sample_residuals) == 0.0


def test_verify_constant_field_refinement(op):
    c = np.array([0.1, 0.2, 0, 0, 0, 0, 0, 0])
    F = ConstantFieldNonlinearity(op, c)
    rep = verify_random_periodic(op, F, Modulation.zero(8),
                                 SolverConfig(dt=0.01, n_samples=1, eps_trunc=1e-10),
                                 [0.02, 0.01], n_shift_probes=0)
    e = rep.errors_by_level
    assert 3 <= e[0] / e[1] <= 5


def test_verify_reference_small(op, mod, sine_F):
    rep = verify_random_periodic(op, sine_F, mod, SolverConfig(dt=5e-3, n_samples=8),
                                 [1e-2, 5e-3], n_shift_probes=2)
    assert rep.relative_error < 5e-2 and rep.decreasing
    assert rep.shift_residual < 1e-5
    d = rep.to_dict()
    assert {"relative_error", "per_sample_residuals", "shift_residual", "dt_levels",
            "errors_by_level"} <= set(d)


def test_stationary_trivial(op):
    rep = verify_stationary(op, ZERO_F, Modulation.zero(8), 2, t_probes=(0.2, 1.0),
                            dt_levels=(2e-2, 1e-2), ref_factor=2)
    assert max(rep.errors_by_level) == 0.0


def test_stationary_constant_field(op):
    sig = Modulation.power_law(8, 0.2, 2.0, 1.0, 0.0)
    F = ConstantFieldNonlinearity(op, np.r_[0.05, 0.1, np.zeros(6)])
    rep = verify_stationary(op, F, sig, 40, t_probes=(0.2, 1.0), dt_levels=(2e-2, 1e-2),
                            ref_factor=8)
    r = rep.extra["ratios"][0]
    assert 1.4 < r < 2.6


def test_stationary_rejects_modulated_sigma(op, mod):
    with pytest.raises(ValueError):
        verify_stationary(op, ZERO_F, mod, 2)


def test_temperedness_constant_and_zero():
    vals = temperedness_diagnostic(lambda r: 3.0, [1.0, 10.0, 100.0])
    assert [v[1] for v in vals] == pytest.approx([math.log(3) / r for r in (1, 10, 100)])
    assert temperedness_diagnostic(lambda r: 0.0, [1.0])[0] == (1.0, None, "zero")
    with pytest.raises(ValueError):
        temperedness_diagnostic(lambda r: 1.0, [10.0, 1.0])


def test_temperedness_reference_trend(op, mod, sine_F):
    cfg = SolverConfig(dt=1e-2, n_samples=6)
    stats = {}
    for r in (10.0, 50.0):
        norms = solution_norm_along_orbit(op, sine_F, mod, cfg, range(6), r)
        stats[r] = max(abs(np.log(norms)) / r)
    assert stats[50.0] < stats[10.0]


def test_orbit_requires_whole_periods(op, mod, sine_F):
    with pytest.raises(ValueError):
        solution_norm_along_orbit(op, sine_F, mod, SolverConfig(dt=1e-2, n_samples=1), [0], 0.5)
