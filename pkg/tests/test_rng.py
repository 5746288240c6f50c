import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from horizon_prophet import rng as rngmod
from horizon_prophet.rng import Stream, TrialKeys

U64 = st.integers(min_value=0, max_value=2**64 - 1)


@given(U64, st.integers(min_value=0, max_value=10**6))
def test_derive_is_deterministic_and_scalar_matches_vector(key, i):
    assert rngmod.derive(key, i) == rngmod.derive(key, i)
    vec = rngmod.derive_many(key, np.array([i]))
    assert int(vec[0]) == rngmod.derive(key, i)


@given(U64)
def test_uniforms_lie_strictly_inside_unit_interval(key):
    u = rngmod.uniforms_at(key, np.arange(256, dtype=np.uint64))
    assert np.all((u > 0) & (u < 1))


def test_stream_matches_counter_access():
    s = Stream(12345)
    first = s.uniforms(5)
    nxt = s.random()
    expect = rngmod.uniforms_at(12345, np.arange(6, dtype=np.uint64))
    assert np.array_equal(first, expect[:5])
    assert nxt == expect[5]


def test_uniforms_pass_kolmogorov_smirnov():
    u = rngmod.uniforms_at(7, np.arange(200_000, dtype=np.uint64))
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_trial_streams_are_distinct():
    k = TrialKeys(99, 3)
    keys = {k.trial, k.realization, k.policy, k.coin, k.uncoupled}
    assert len(keys) == 5
    assert TrialKeys(99, 4).realization != k.realization


@pytest.mark.parametrize("weights,expected", [((1.0, 0.0), 0), ((0.0, 1.0), 1)])
def test_choice_degenerate_weights(weights, expected):
    assert Stream(1).choice(weights) == expected


def test_choice_frequencies():
    w = np.array([0.2, 0.5, 0.3])
    picks = np.array([Stream(rngmod.derive(5, i)).choice(w) for i in range(20_000)])
    freq = np.bincount(picks, minlength=3) / picks.size
    se = np.sqrt(w * (1 - w) / picks.size)
    assert np.all(np.abs(freq - w) <= 4 * se)
