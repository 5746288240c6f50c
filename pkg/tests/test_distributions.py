import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_prophet.distributions import (
    ACCEPT_ALL,
    Deterministic,
    DiscreteValues,
    ExplicitPmf,
    Geometric,
    Pareto,
    TruncatedGeometric,
    UniformRange,
    cond_exp_accepted,
    hazard_continue,
    is_mhr,
    random_mhr_pmf,
    sample_horizon,
    sample_value,
    sosd_vs_geometric,
    survival,
    threshold_for_acceptance,
    truncate,
    uniform_values,
)

NON_MHR = ExplicitPmf(((1, 0.5), (2, 0.1), (3, 0.4)))


@pytest.mark.parametrize(
    "dist,t,expected",
    [
        (Geometric(2), 3, 0.25),
        (Geometric(7), 1, 1.0),
        (Deterministic(5), 5, 1.0),
        (Deterministic(5), 6, 0.0),
        (UniformRange(2, 4), 1, 1.0),
    ],
)
def test_survival_examples(dist, t, expected):
    assert survival(dist, t) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "dist,t,expected",
    [
        (Geometric(2), 1, 0.5),
        (Geometric(2), 17, 0.5),
        (Deterministic(3), 2, 1.0),
        (Deterministic(3), 3, 0.0),
        (NON_MHR, 1, 0.5),
        (NON_MHR, 2, 0.8),
    ],
)
def test_hazard_continue_examples(dist, t, expected):
    assert hazard_continue(dist, t) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize(
    "dist,expected",
    [
        (Geometric(5), True),
        (NON_MHR, False),
        (Deterministic(4), True),
        (UniformRange(1, 9), True),
        (TruncatedGeometric(4.0, 12), True),
    ],
)
def test_is_mhr(dist, expected):
    assert is_mhr(dist) is expected


def test_sosd_examples():
    assert sosd_vs_geometric(Deterministic(2), 10).holds
    rep = sosd_vs_geometric(Geometric(3), 200)
    assert rep.holds and rep.max_excess == pytest.approx(0.0, abs=1e-9)


def test_sosd_detects_violation_found_by_search():
    # Brute-force search over small pmfs for one whose E[(c - h)^+] exceeds the geometric's.
    violating = None
    for p1 in np.linspace(0.05, 0.95, 19):
        for p3 in np.linspace(0.05, 0.95 - p1, 10):
            d = ExplicitPmf(((1, p1), (2, 1 - p1 - p3), (6, p3))) if 1 - p1 - p3 > 0 else None
            if d is None:
                continue
            mean = d.mean
            q = 1 - 1 / mean
            for c in range(2, 30):
                lhs = sum(max(0, c - t) * p for t, p in zip(d.support, d.probs))
                rhs = sum(max(0, c - t) * (q ** (t - 1)) * (1 - q) for t in range(1, 5000))
                if lhs > rhs + 1e-9:
                    violating = (d, c)
                    break
            if violating:
                break
        if violating:
            break
    assert violating is not None
    rep = sosd_vs_geometric(violating[0], 50)
    assert not rep.holds and rep.first_violation is not None and rep.first_violation <= violating[1]


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_random_mhr_pmfs_are_mhr_and_dominate(seed):
    d = random_mhr_pmf(np.random.default_rng(seed))
    assert is_mhr(d)
    assert sosd_vs_geometric(d, 200).holds


@settings(deadline=None)
@given(st.floats(min_value=1.0, max_value=50.0), st.integers(min_value=2, max_value=60))
def test_survival_non_increasing_and_tail_sums(mean, cap):
    d = TruncatedGeometric(mean, cap)
    t = np.arange(1, cap + 3)
    s = np.asarray(d.survival(t))
    assert np.all(np.diff(s) <= 1e-15)
    tails = np.array([sum(p for x, p in zip(d.support, d.probs) if x >= k) for k in t])
    np.testing.assert_allclose(s, tails, atol=1e-12)


@pytest.mark.parametrize("mean", [1.0, 2.0, 3.5, 17.0])
def test_geometric_pmf_and_pgf(mean):
    d = Geometric(mean)
    q = 1 - 1 / mean
    t = np.arange(1, 4000)
    pmf = q ** (t - 1) * (1 - q)
    assert np.dot(t, pmf) == pytest.approx(mean, rel=1e-9)
    z = 0.37
    assert d.pgf(z) == pytest.approx(float(np.dot(z**t, pmf)), rel=1e-12)


@pytest.mark.parametrize("mean,cap", [(2.0, 8), (5.0, 20), (10.0, 40)])
def test_truncated_geometric_with_mean(mean, cap):
    d = TruncatedGeometric.with_mean(mean, cap)
    assert d.mean == pytest.approx(mean, abs=1e-9)
    assert float(np.dot(d.support, d.probs)) == pytest.approx(mean, abs=1e-9)


def test_truncate_moves_tail_mass():
    d = truncate(Geometric(2), 3)
    np.testing.assert_allclose(d.probs, [0.5, 0.25, 0.25])


@pytest.mark.parametrize(
    "values,q,price,frac",
    [
        (DiscreteValues(((1, 0.7), (10, 0.3))), 0.5, 1.0, 2 / 7),
        (uniform_values(1, 4), 0.5, 3.0, 1.0),
    ],
)
def test_threshold_examples(values, q, price, frac):
    rule = threshold_for_acceptance(values, q)
    assert rule.price == price
    assert rule.accept_prob_at_price == pytest.approx(frac, abs=1e-12)


def test_threshold_accept_all_at_one():
    rule = threshold_for_acceptance(uniform_values(1, 4), 1.0)
    assert rule.accepts(np.array([1.0, 4.0]), np.array([0.99, 0.99])).all()


@pytest.mark.parametrize(
    "values,q,expected",
    [
        (uniform_values(1, 4), 0.5, 3.5),
        (DiscreteValues(((1, 0.7), (10, 0.3))), 0.5, 6.4),
        (Pareto(2.0, 1e12), 0.04, 10.0),
    ],
)
def test_cond_exp_examples(values, q, expected):
    assert cond_exp_accepted(values, threshold_for_acceptance(values, q)) == pytest.approx(expected, rel=1e-6)


def test_pareto_threshold_price():
    assert threshold_for_acceptance(Pareto(2.0, 1e12), 0.04).price == pytest.approx(5.0)


@settings(deadline=None)
@given(
    st.lists(st.integers(min_value=0, max_value=50), min_size=1, max_size=6, unique=True),
    st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=6, max_size=6),
    st.floats(min_value=0.0, max_value=1.0),
)
def test_total_expectation_split(vals, weights, q):
    w = np.array(weights[: len(vals)])
    v = DiscreteValues(tuple(zip(vals, (w / w.sum()).tolist())))
    rule = v.threshold(q)
    prob, mass = v.accepted_mass(rule)
    assert prob == pytest.approx(q, abs=1e-12)
    assert v.tail_gt(rule.price) <= q + 1e-12 <= v.tail_ge(rule.price) + 2e-12
    at = v.values == rule.price
    rejected = float(np.dot(v.values[v.values < rule.price], v.probs[v.values < rule.price]))
    rejected += float(np.dot(v.values[at], v.probs[at])) * (1 - rule.accept_prob_at_price)
    assert mass + rejected == pytest.approx(v.mean, abs=1e-9)


@pytest.mark.parametrize("q", [0.0, 0.1, 0.5, 0.9, 1.0])
def test_empirical_acceptance_matches_target(q):
    v = DiscreteValues(((1, 0.2), (3, 0.5), (8, 0.3)))
    rule = v.threshold(q)
    rng = np.random.default_rng(11)
    n = 100_000
    draws = rng.choice(v.values, size=n, p=v.probs)
    acc = rule.accepts(draws, rng.random(n)).mean()
    se = math.sqrt(max(q * (1 - q), 1e-12) / n)
    assert abs(acc - q) <= 3 * se + 1e-12


def test_sampling_examples():
    assert all(sample_horizon(Deterministic(7), u) == 7 for u in (0.01, 0.5, 0.99))
    rng = np.random.default_rng(3)
    u = rng.random(1_000_000)
    h = Geometric(4).ppf(u)
    se = h.std() / math.sqrt(h.size)
    assert abs(h.mean() - 4) <= 3 * se
    v = Pareto(2.0).ppf(rng.random(200_000))
    p = (v >= 2).mean()
    assert abs(p - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / v.size)
    assert sample_value(uniform_values(1, 4), 0.999) == 4.0


def test_pareto_tail_and_cap():
    v = Pareto(2.0, 100.0)
    assert v.tail_ge(4.0) == pytest.approx(1 / 16)
    assert v.cap_mass == pytest.approx(1e-4)
    assert v.truncation_bias == pytest.approx(100.0 ** -1 * 2.0)


def test_accept_all_and_rejections():
    assert ACCEPT_ALL.accepts(np.array([0.0]), None).all()
    with pytest.raises(ValueError):
        DiscreteValues(((1, 0.5), (2, 0.4)))
    with pytest.raises(ValueError):
        Geometric(0.5)
