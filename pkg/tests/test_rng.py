import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from robustse.rng import RngStream, gaussian_sample


def test_repeatable():
    a = gaussian_sample(RngStream(7, 3), 1000)
    b = gaussian_sample(RngStream(7, 3), 1000)
    assert np.array_equal(a, b)


def test_streams_differ():
    a = RngStream(7, 0).uniform(64)
    b = RngStream(7, 1).uniform(64)
    c = RngStream(8, 0).uniform(64)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_spawn_matches_constructor():
    assert np.array_equal(RngStream(5).spawn(9).uniform(10), RngStream(5, 9).uniform(10))


def test_empty():
    assert gaussian_sample(RngStream(1), 0).shape == (0,)
    with pytest.raises(ValueError):
        gaussian_sample(RngStream(1), -1)


def test_normal_moments():
    z = gaussian_sample(RngStream(2011, 0), 1_000_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.02


def test_normal_distribution():
    z = gaussian_sample(RngStream(3, 4), 20_000)
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_uniform_range_and_distribution():
    u = RngStream(11).uniform(20_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    v = RngStream(11).uniform(100, -2.0, 3.0)
    assert v.min() >= -2.0 and v.max() < 3.0


@given(st.integers(0, 200), st.integers(0, 2**32))
def test_permutation(n, seed):
    p = RngStream(seed).permutation(n)
    assert sorted(p.tolist()) == list(range(n))


@given(st.integers(1, 100), st.data())
def test_choice_distinct(n, data):
    k = data.draw(st.integers(0, n))
    c = RngStream(n, k).choice(n, k)
    assert len(set(c.tolist())) == k
    assert all(0 <= i < n for i in c)


def test_choice_bounds():
    with pytest.raises(ValueError):
        RngStream(0).choice(3, 4)


def test_permutation_positions_uniform():
    # each element lands in position 0 about equally often
    counts = np.zeros(5)
    for t in range(5000):
        counts[RngStream(99, t).permutation(5)[0]] += 1
    assert stats.chisquare(counts).pvalue > 1e-3
