"""Online pricing policies.

A policy posts a threshold rule for the next buyer and, when the buyer
accepts, names the item to sell. It sees which items are still available
(alive and unmatched) but never a realized horizon or an unaccepted value.
Ties between items always go to the lowest index.

``post`` returns the rule together with the last step through which the rule
stays in force unless an acceptance or a departure happens first, which lets
the simulator skip quiet stretches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .distributions import (
    ACCEPT_ALL,
    REJECT_ALL,
    Geometric,
    ThresholdRule,
    ValueDistribution,
    is_mhr,
)
from .prophet import Instance
from .rng import Stream
from .stages import StagePlan

INF = math.inf

# Mixture weights over (odd stages, even stages, blind matching, single item).
MIXTURE_WEIGHTS = (15.1, 15.1, 2.3, 20.0)
MIXTURE_BRANCHES = ("departure_odd", "departure_even", "blind", "single_item")


class InvalidInstanceError(ValueError):
    pass


@dataclass(frozen=True)
class StepDecision:
    rule: ThresholdRule
    until: float = INF


class Policy:
    name = "policy"
    value_revealing = False

    def __init__(self):
        self.finished = False

    def post(self, step: int, state) -> StepDecision:
        raise NotImplementedError

    def select(self, step: int, state) -> int | None:
        raise NotImplementedError


def _require_iid(inst: Instance) -> ValueDistribution:
    if not inst.iid_values:
        raise InvalidInstanceError("policy needs i.i.d. buyer values")
    return inst.values


class FixedPrice(Policy):
    """Posts one rule for the whole run and sells to the lowest-index available candidate."""

    name = "fixed_price"

    def __init__(self, rule: ThresholdRule, candidates: list[int] | None = None):
        super().__init__()
        self.rule = rule
        self.candidates = candidates

    def _pick(self, state) -> int | None:
        if self.candidates is None:
            return state.first_available()
        return state.first_available_among(self.candidates)

    def post(self, step, state):
        if self._pick(state) is None:
            self.finished = True
            return StepDecision(REJECT_ALL)
        return StepDecision(self.rule)

    def select(self, step, state):
        return self._pick(state)


def single_item_rule(inst: Instance, item: int = 0) -> ThresholdRule:
    v = _require_iid(inst)
    return v.threshold(1.0 / inst.horizons[item].mean)


def single_fixed_price(inst: Instance, rng: Stream | None = None) -> FixedPrice:
    if inst.m != 1:
        raise InvalidInstanceError("single_fixed_price needs exactly one item")
    p = FixedPrice(single_item_rule(inst))
    p.name = "single_fixed"
    return p


def fixed_price_multi(inst: Instance, rule: ThresholdRule, rng: Stream | None = None) -> FixedPrice:
    p = FixedPrice(rule)
    p.name = "fixed"
    return p


def blind_match(inst: Instance, rng: Stream | None = None) -> FixedPrice:
    p = FixedPrice(ACCEPT_ALL)
    p.name = "blind"
    return p


def final_stage_weights(inst: Instance, plan: StagePlan) -> np.ndarray:
    return np.array([float(h.survival(plan.final_start)) for h in inst.horizons])


class SingleItemSampling(FixedPrice):
    """Keeps one item, drawn proportionally to its chance of reaching the final stage."""

    name = "single_item"

    def __init__(self, inst: Instance, plan: StagePlan, rng: Stream):
        weights = final_stage_weights(inst, plan)
        if not weights.sum() > 0:
            raise InvalidInstanceError("no item can reach the final stage")
        self.chosen = rng.choice(weights)
        super().__init__(single_item_rule(inst, self.chosen), [self.chosen])


def single_item_sampling(inst: Instance, plan: StagePlan, rng: Stream) -> SingleItemSampling:
    return SingleItemSampling(inst, plan, rng)


def candidate_probability(h, next_start: int, next_end: float) -> float:
    """Pr[h < next_end | h >= next_start - 1]; one when the next stage is open-ended."""
    if next_end == INF:
        return 1.0
    base = float(h.survival(next_start - 1))
    if base <= 0.0:
        return 1.0
    return 1.0 - float(h.survival(int(next_end))) / base


@dataclass
class _Segment:
    stage: int
    start: int
    length: int
    rule: ThresholdRule
    probs: np.ndarray  # per-item chance of entering the candidate set

    @property
    def end(self) -> int:
        return self.start + self.length - 1


@dataclass
class CandidateRecord:
    stage: int
    members: list
    segment_start: int
    segment_end: int
    length: int


def departure_segments(inst: Instance, plan: StagePlan, parity: str) -> list[_Segment]:
    """Stages of one parity laid end to end in real time, each shortened by one step."""
    if parity not in ("odd", "even"):
        raise ValueError("parity must be 'odd' or 'even'")
    v = _require_iid(inst)
    first = 1 if parity == "odd" else 2
    cursor = 1
    segs = []
    for k in range(first, plan.s + 1, 2):
        length = plan.length(k)
        seg_len = max(0, length - 1)
        next_start = plan.end_of(k)
        next_end = plan.end_of(k + 1)
        probs = np.array([candidate_probability(h, int(next_start), next_end) for h in inst.horizons])
        if length >= 2:
            rule = v.threshold(min(1.0, plan.budget(k) / length))
        else:
            rule = REJECT_ALL
        segs.append(_Segment(k, cursor, seg_len, rule, probs))
        cursor += seg_len
    return segs


class DepartureSimulation(Policy):
    """Matches within one parity class of stages.

    At each stage it sets aside a random candidate set, each item entering
    with the probability that it would depart during the following stage, and
    sells to candidates at the stage's quantile price.
    """

    def __init__(self, inst: Instance, plan: StagePlan, parity: str, rng: Stream):
        super().__init__()
        self.name = f"departure_{parity}"
        self.rng = rng
        self.segments = departure_segments(inst, plan, parity)
        self.pool = list(range(inst.m))
        self.pos = 0
        self.current: _Segment | None = None
        self.members: list[int] = []
        self.log: list[CandidateRecord] = []
        if not self.segments:
            self.finished = True

    def _enter_due(self, step: int, state) -> None:
        if self.current is not None and step > self.current.end:
            self.current = None
        while self.current is None and self.pos < len(self.segments) and self.segments[self.pos].start <= step:
            seg = self.segments[self.pos]
            self.pos += 1
            alive = [i for i in self.pool if state.is_available(i)]
            chosen, rest = [], []
            for i in alive:
                (chosen if self.rng.random() < seg.probs[i] else rest).append(i)
            self.pool = rest
            self.log.append(CandidateRecord(seg.stage, chosen, seg.start, seg.end, seg.length))
            if seg.length > 0:
                self.current = seg
                self.members = chosen
        if self.current is None and self.pos >= len(self.segments):
            self.finished = True

    def post(self, step, state):
        self._enter_due(step, state)
        if self.finished or self.current is None:
            return StepDecision(REJECT_ALL)
        if state.first_available_among(self.members) is None:
            return StepDecision(REJECT_ALL, self.current.end)
        return StepDecision(self.current.rule, self.current.end)

    def select(self, step, state):
        return state.first_available_among(self.members)


def departure_simulation(inst: Instance, plan: StagePlan, parity: str, rng: Stream) -> DepartureSimulation:
    return DepartureSimulation(inst, plan, parity, rng)


def expected_surviving_candidates(inst: Instance, plan: StagePlan, parity: str) -> dict:
    """Stage -> expected number of candidates alive through the end of their segment."""
    out = {}
    keep = np.ones(inst.m)
    for seg in departure_segments(inst, plan, parity):
        if seg.length > 0:
            surv = np.array([float(h.survival(seg.end)) for h in inst.horizons])
            out[seg.stage] = float(np.sum(surv * keep * seg.probs))
        keep = keep * (1.0 - seg.probs)
    return out


class Balancing(Policy):
    """With k items available, accept a buyer with probability k * lambda."""

    name = "balancing"

    def __init__(self, inst: Instance):
        super().__init__()
        v = _require_iid(inst)
        h = inst.common_horizon
        if not isinstance(h, Geometric):
            raise InvalidInstanceError("balancing needs i.i.d. geometric horizons")
        self.rate = 1.0 / h.mean
        if inst.m * self.rate > 1 + 1e-12:
            raise InvalidInstanceError("need m * lambda <= 1")
        self.rules = [REJECT_ALL] + [v.threshold(min(1.0, k * self.rate)) for k in range(1, inst.m + 1)]

    def post(self, step, state):
        return StepDecision(self.rules[state.n_available])

    def select(self, step, state):
        return state.first_available()


def balancing_dynamic_geometric(inst: Instance, rng: Stream | None = None) -> Balancing:
    return Balancing(inst)


def check_mhr(inst: Instance) -> None:
    for h in inst.horizons:
        if not is_mhr(h):
            raise InvalidInstanceError(f"horizon {h} is not MHR")


class MultipleMHR(Policy):
    """Randomizes once over the four sub-policies, then delegates."""

    name = "multiple_mhr"

    def __init__(self, inst: Instance, plan: StagePlan, rng: Stream):
        super().__init__()
        check_mhr(inst)
        _require_iid(inst)
        self.branch = MIXTURE_BRANCHES[rng.choice(MIXTURE_WEIGHTS)]
        if self.branch == "departure_odd":
            self.inner = DepartureSimulation(inst, plan, "odd", rng)
        elif self.branch == "departure_even":
            self.inner = DepartureSimulation(inst, plan, "even", rng)
        elif self.branch == "blind":
            self.inner = blind_match(inst)
        else:
            self.inner = SingleItemSampling(inst, plan, rng)

    @property
    def finished(self):
        return self.inner.finished

    @finished.setter
    def finished(self, value):
        pass

    def post(self, step, state):
        return self.inner.post(step, state)

    def select(self, step, state):
        return self.inner.select(step, state)


def multiple_mhr(inst: Instance, plan: StagePlan, rng: Stream) -> MultipleMHR:
    return MultipleMHR(inst, plan, rng)


@dataclass(frozen=True)
class TwoPointResult:
    v_low: float
    v_high: float
    alg_star: float
    pro: float

    @property
    def ratio(self) -> float:
        return self.pro / self.alg_star


def two_point_optimal_single(mu: float, p: float) -> TwoPointResult:
    """Exact optimum and prophet for one geometric item with two-point values.

    The high value is placed where accepting everything and waiting for the
    high value earn the same.
    """
    if mu < 1:
        raise ValueError("mean horizon must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    q = 1.0 - 1.0 / mu
    v_low = 1.0
    hit = p / (1.0 - q * (1.0 - p))  # chance a high value arrives before departure
    if hit - p <= 0.0:
        v_high = v_low / p
    else:
        v_high = v_low * (1.0 - p) / (hit - p)
    alg = max(v_low * (1.0 - p) + v_high * p, v_high * hit)
    pro = v_high * hit + v_low * (1.0 - hit)
    return TwoPointResult(v_low, v_high, alg, pro)


def two_point_values(res: TwoPointResult, p: float):
    from .distributions import DiscreteValues

    return DiscreteValues(((res.v_low, 1.0 - p), (res.v_high, p)))


@dataclass(frozen=True)
class PolicyFactory:
    """Builds a fresh policy per trial from the instance and the policy stream."""

    name: str
    build: Callable
    fixed_rule: ThresholdRule | None = field(default=None)

    def __call__(self, inst: Instance, rng: Stream) -> Policy:
        return self.build(inst, rng)


def make_factory(name: str, inst: Instance, plan: StagePlan | None = None) -> PolicyFactory:
    """Factory from a policy name: single_fixed, blind, balancing, multiple_mhr,
    departure_odd, departure_even, single_item, or fixed:<price>."""
    if name == "single_fixed":
        return PolicyFactory(name, single_fixed_price, single_item_rule(inst))
    if name == "blind":
        return PolicyFactory(name, blind_match, ACCEPT_ALL)
    if name == "balancing":
        return PolicyFactory(name, balancing_dynamic_geometric)
    if name.startswith("fixed:"):
        price = float(name.split(":", 1)[1])
        rule = ThresholdRule(price, 1.0, float(_require_iid(inst).tail_ge(price)))
        return PolicyFactory(name, lambda i, r: fixed_price_multi(i, rule), rule)
    if plan is None:
        from .stages import build_stage_plan

        plan = build_stage_plan(inst)
    if name == "multiple_mhr":
        return PolicyFactory(name, lambda i, r: MultipleMHR(i, plan, r))
    if name in ("departure_odd", "departure_even"):
        parity = name.split("_")[1]
        return PolicyFactory(name, lambda i, r: DepartureSimulation(i, plan, parity, r))
    if name == "single_item":
        return PolicyFactory(name, lambda i, r: SingleItemSampling(i, plan, r))
    raise ValueError(f"unknown policy {name!r}")
