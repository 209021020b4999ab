import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpspde.errors import InvalidRange
from rpspde.noise import (CoarsenedPath, DriftPath, NoisePath, ZeroPath, bridge_sum,
                          gaussian_increments, generate_path, load_path, save_path, shift,
                          standard_normals)


def test_subrange_regeneration_is_bitwise():
    full = standard_normals(7, 2, -100, 100)
    for a, b in [(-100, -37), (-1, 1), (13, 14), (50, 100)]:
        np.testing.assert_array_equal(standard_normals(7, 2, a, b), full[a + 100:b + 100])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(-10**9, 10**9), st.integers(1, 50), st.integers(0, 30))
def test_shift_is_reindexing(seed, start, n, k):
    p = NoisePath(seed, 3, 0.01, start, start + n + k)
    s = shift(p, k)
    np.testing.assert_array_equal(s.window(start, start + n), p.window(start + k, start + n + k))


def test_streams_differ_by_mode_and_seed():
    a = standard_normals(1, 0, 0, 10)
    assert not np.array_equal(a, standard_normals(1, 1, 0, 10))
    assert not np.array_equal(a, standard_normals(2, 0, 0, 10))


def test_increment_statistics():
    x = gaussian_increments(3, 2, 0.01, -50000, 50000)
    assert x.shape == (100000, 2)
    assert abs(x.mean()) < 4 * 0.1 / np.sqrt(2e5)
    assert x.var() == pytest.approx(0.01, rel=0.02)
    c = np.corrcoef(x[:-1, 0], x[1:, 0])[0, 1]
    assert abs(c) < 0.02


def test_window_outside_materialized_range():
    p = NoisePath(5, 2, 0.1, 0, 10)
    np.testing.assert_array_equal(p.window(-5, 5)[5:], p.increments[:5])


def test_invalid_ranges():
    with pytest.raises(InvalidRange):
        NoisePath(0, 1, 0.1, 5, 5)
    with pytest.raises(InvalidRange):
        NoisePath(0, 1, 0.1, 0, 4).window(3, 2)
    with pytest.raises(InvalidRange):
        bridge_sum(NoisePath(0, 1, 0.1, 0, 4), 0, 3, 1)


def test_bridge_sum():
    p = generate_path(1, 2, 0.1, -10, 10)
    assert bridge_sum(p, 1, -4, 6) == pytest.approx(p.window(-4, 6)[:, 1].sum())
    assert bridge_sum(p, 0, 3, 3) == 0.0


def test_round_trip(tmp_path):
    p = NoisePath(11, 3, 0.001, -20, 40).shifted(7)
    f = tmp_path / "noise.csv"
    save_path(p, f)
    q = load_path(f)
    np.testing.assert_array_equal(q.increments, p.increments)
    r = load_path(f, regenerate=True)
    np.testing.assert_array_equal(r.increments, p.increments)
    assert f.read_text().splitlines()[0] == "11,0.001,3,-20,40,7"


def test_increments_read_only():
    p = NoisePath(1, 1, 0.1, 0, 3)
    with pytest.raises(ValueError):
        p.increments[0, 0] = 1.0


def test_auxiliary_paths():
    base = NoisePath(4, 2, 0.01, 0, 40)
    z = ZeroPath(2, 0.01)
    np.testing.assert_array_equal((base + z).window(0, 40), base.increments)
    d = DriftPath(2, 0.01, 5, 10, 2.0)
    w = d.window(0, 12)
    assert np.all(w[5:10] == 0.02) and not np.any(w[:5]) and not np.any(w[10:])
    np.testing.assert_array_equal(d.shifted(3).window(0, 12)[2:7], w[5:10])
    c = CoarsenedPath(base, 4)
    np.testing.assert_allclose(c.window(0, 10), base.increments.reshape(10, 4, 2).sum(axis=1))
    assert c.dt == pytest.approx(0.04)
    np.testing.assert_array_equal(c.shifted(2).window(0, 3), c.window(2, 5))
