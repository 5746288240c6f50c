import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_prophet import rng as rngmod
from horizon_prophet.distributions import (
    ACCEPT_ALL,
    Deterministic,
    DiscreteValues,
    ExplicitPmf,
    Geometric,
    uniform_values,
)
from horizon_prophet.policies import (
    MIXTURE_BRANCHES,
    MIXTURE_WEIGHTS,
    Balancing,
    DepartureSimulation,
    InvalidInstanceError,
    MultipleMHR,
    SingleItemSampling,
    blind_match,
    candidate_probability,
    departure_segments,
    fixed_price_multi,
    make_factory,
    single_fixed_price,
    single_item_rule,
    two_point_optimal_single,
    two_point_values,
)
from horizon_prophet.prophet import Instance, Realization
from horizon_prophet.rng import Stream
from horizon_prophet.simulator import EpisodeState, monte_carlo, run_episode
from horizon_prophet.stages import SHORT, StagePlan, build_stage_plan

U4 = uniform_values(1, 4)


def _real(h, v):
    return Realization(np.array(h), np.array(v, dtype=float))


def test_single_fixed_price_closed_form():
    inst = Instance((Geometric(2),), U4)
    res = monte_carlo(inst, make_factory("single_fixed", inst), 100_000, 1)
    # E[X | accepted] * Pr[sold] = 3.5 * E[1 - 0.5**h] = 3.5 * 2/3
    assert abs(res.alg.mean - 7 / 3) <= 3 * res.alg.stderr


def test_single_fixed_price_one_shot_takes_everyone():
    inst = Instance((Deterministic(1),), U4)
    assert single_item_rule(inst).target == 1.0
    res = monte_carlo(inst, make_factory("single_fixed", inst), 20_000, 2)
    assert abs(res.alg.mean - U4.mean) <= 3 * res.alg.stderr


def test_single_fixed_price_rejects_many_items():
    with pytest.raises(InvalidInstanceError):
        single_fixed_price(Instance.iid(2, Geometric(2), U4))


def test_mixture_frequencies():
    inst = Instance.iid(12, Geometric(3), U4)
    plan = build_stage_plan(inst)
    n = 100_000
    counts = dict.fromkeys(MIXTURE_BRANCHES, 0)
    for i in range(n):
        counts[MultipleMHR(inst, plan, Stream(rngmod.derive(31, i))).branch] += 1
    w = np.array(MIXTURE_WEIGHTS) / sum(MIXTURE_WEIGHTS)
    np.testing.assert_allclose(w, [0.28762, 0.28762, 0.04381, 0.38095], atol=1e-5)
    for b, p in zip(MIXTURE_BRANCHES, w):
        assert abs(counts[b] / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_mixture_with_no_stages_still_sells():
    inst = Instance.iid(6, Geometric(4), U4)
    plan = build_stage_plan(inst)
    assert plan.s == 0
    for parity in ("odd", "even"):
        assert DepartureSimulation(inst, plan, parity, Stream(0)).finished
    res = monte_carlo(inst, make_factory("multiple_mhr", inst, plan), 4000, 3)
    assert res.alg.mean > 0


def test_candidate_probability_examples():
    assert candidate_probability(Geometric(10), 5, 9) == pytest.approx(1 - 0.9**5, abs=1e-12)
    assert candidate_probability(Geometric(10), 5, math.inf) == 1.0


def test_departure_segment_price():
    inst = Instance.iid(4, Geometric(3), U4)
    plan = StagePlan(4, 3, ((1, 2), (2, 10), (10, 11)), (SHORT, "Long", SHORT), 11)
    segs = departure_segments(inst, plan, "even")
    assert len(segs) == 1
    seg = segs[0]
    assert seg.length == 7 and seg.start == 1
    assert seg.rule.price == 4.0 and seg.rule.target == pytest.approx(0.25)
    last = departure_segments(inst, plan, "odd")[-1]
    assert last.stage == 3 and np.all(last.probs == 1.0)


def test_blind_match_trace():
    inst = Instance((Geometric(2), Geometric(2)), U4)
    ep = run_episode(inst, _real([3, 1], [2, 5, 7]), blind_match(inst))
    assert ep.welfare == 2.0
    assert ep.matches == [(0, 1, 2.0)]


def test_blind_match_one_shot():
    inst = Instance((Deterministic(1),), U4)
    assert run_episode(inst, _real([1], [3.0]), blind_match(inst)).welfare == 3.0


def test_blind_match_short_stage_bound():
    inst = Instance.iid(40, Geometric(2), U4)
    plan = build_stage_plan(inst)
    res = monte_carlo(inst, make_factory("blind", inst), 5000, 4)
    assert res.alg.mean >= U4.mean * plan.count(SHORT) / 2.3 - 3 * res.alg.stderr


def test_single_item_sampling_frequency():
    a = ExplicitPmf(((1, 0.6), (3, 0.2), (4, 0.2)))
    b = ExplicitPmf(((1, 0.9), (11, 0.1)))
    inst = Instance((a, b), U4)
    plan = StagePlan(2, 1, ((1, 2),), (SHORT,), 2)
    n = 100_000
    picks = np.array([SingleItemSampling(inst, plan, Stream(rngmod.derive(8, i))).chosen for i in range(n)])
    freq = (picks == 0).mean()
    assert abs(freq - 0.8) <= 3 * math.sqrt(0.16 / n)


def test_single_item_sampling_one_item_equals_fixed_price():
    inst = Instance((Geometric(3),), U4)
    plan = build_stage_plan(inst)
    p = SingleItemSampling(inst, plan, Stream(1))
    assert p.chosen == 0 and p.rule == single_fixed_price(inst).rule


def test_balancing_targets():
    inst = Instance.iid(5, Geometric(100), uniform_values(1, 1000))
    pol = Balancing(inst)
    state = EpisodeState(5)
    for i in (0, 1):
        state.remove(i)
    assert pol.post(1, state).rule.target == pytest.approx(0.03)
    one = Instance((Geometric(4),), U4)
    assert Balancing(one).rules[1] == single_fixed_price(one).rule
    with pytest.raises(InvalidInstanceError):
        Balancing(Instance.iid(3, Geometric(2), U4))


def test_fixed_rule_equivalences():
    inst = Instance.iid(3, Geometric(4), U4)
    a = monte_carlo(inst, lambda i, r: fixed_price_multi(i, ACCEPT_ALL), 500, 5)
    b = monte_carlo(inst, make_factory("blind", inst), 500, 5)
    assert np.array_equal(a.alg_samples, b.alg_samples)
    one = Instance((Geometric(4),), U4)
    rule = single_item_rule(one)
    c = monte_carlo(one, lambda i, r: fixed_price_multi(i, rule), 500, 6, vectorize=False)
    d = monte_carlo(one, make_factory("single_fixed", one), 500, 6, vectorize=False)
    assert np.array_equal(c.alg_samples, d.alg_samples)


def test_mhr_policy_rejects_non_mhr():
    inst = Instance.iid(12, ExplicitPmf(((1, 0.5), (2, 0.1), (3, 0.4))), U4)
    with pytest.raises(InvalidInstanceError):
        MultipleMHR(inst, build_stage_plan(inst), Stream(0))


def two_point_oracle(mu, p, v_high):
    """Optimal stopping by value iteration on the stationary problem."""
    q = 1 - 1 / mu
    v_low = 1.0
    cont = 0.0
    for _ in range(100_000):
        new = p * max(v_high, q * cont) + (1 - p) * max(v_low, q * cont)
        if abs(new - cont) < 1e-15:
            break
        cont = new
    return cont


@pytest.mark.parametrize("mu,p", [(2.0, 0.1), (3.0, 0.05), (5.0, 0.3)])
def test_two_point_against_value_iteration(mu, p):
    res = two_point_optimal_single(mu, p)
    assert res.alg_star == pytest.approx(two_point_oracle(mu, p, res.v_high), rel=1e-9)
    q = 1 - 1 / mu
    hit = sum((1 - 1 / mu) ** (t - 1) / mu * (1 - (1 - p) ** t) for t in range(1, 20_000))
    assert res.pro == pytest.approx(res.v_high * hit + (1 - hit), rel=1e-9)


def test_two_point_examples():
    res = two_point_optimal_single(2.0, 0.1)
    assert res.v_high == pytest.approx(11.0)
    assert res.alg_star == pytest.approx(2.0)
    assert res.pro == pytest.approx(2.81818, abs=1e-5)
    assert res.ratio == pytest.approx(1.40909, abs=1e-5)
    assert two_point_optimal_single(1.0, 0.3).ratio == pytest.approx(1.0)
    assert abs(two_point_optimal_single(2.0, 1e-4).ratio - 1.5) <= 1e-3


@settings(deadline=None)
@given(st.floats(min_value=1.0, max_value=20.0), st.floats(min_value=1e-4, max_value=0.9),
       st.floats(min_value=0.01, max_value=100.0))
def test_two_point_scale_invariance(mu, p, scale):
    res = two_point_optimal_single(mu, p)
    q = 1 - 1 / mu
    hit = p / (1 - q * (1 - p))
    lo, hi = res.v_low * scale, res.v_high * scale
    alg = max(lo * (1 - p) + hi * p, hi * hit)
    pro = hi * hit + lo * (1 - hit)
    assert pro / alg == pytest.approx(res.ratio, rel=1e-9)


def test_two_point_values_distribution():
    res = two_point_optimal_single(2.0, 0.1)
    v = two_point_values(res, 0.1)
    assert v.tail_ge(11.0) == pytest.approx(0.1)


def test_departure_simulation_sells_only_candidates():
    inst = Instance.iid(40, Geometric(16), U4)
    plan = build_stage_plan(inst)
    seen = []

    def record(i, r, policy, ep):
        members = set()
        for rec in policy.log:
            members.update(rec.members)
        seen.append(all(item in members for item, _, _ in ep.matches))

    monte_carlo(inst, make_factory("departure_odd", inst, plan), 300, 9, on_episode=record)
    assert all(seen)


@pytest.mark.parametrize("name", ["single_fixed", "blind", "balancing", "multiple_mhr", "departure_even",
                                  "single_item", "fixed:3"])
def test_factories_build(name):
    inst = Instance((Geometric(3),), U4) if name in ("single_fixed", "balancing") else Instance.iid(12, Geometric(3), U4)
    assert make_factory(name, inst)(inst, Stream(0)) is not None
    with pytest.raises(ValueError):
        make_factory("nope", inst)
