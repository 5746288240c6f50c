"""Episode runner and Monte Carlo harness.

Each step a policy posts a rule, one buyer arrives and accepts if its value
clears the rule, the policy names an available item for an accepting buyer,
and items whose horizon equals the step depart at the end of it. The runner
jumps straight to the next acceptance or departure while the posted rule is
unchanged.

Trial ``i`` draws from three streams under derive(master_seed, i): the world
(horizons and values), the policy's own randomness, and the coins that settle
acceptance at a price atom. With ``couple_prophet`` the prophet is scored on
the very same world.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng as rngmod
from .distributions import ThresholdRule, ValueDistribution
from .prophet import (
    CapExceededError,
    Instance,
    Realization,
    prophet_offline,
    realize,
    sample_horizons,
)
from .rng import Stream, TrialKeys
from .stats import WelfareEstimate, ratio_of_means

__all__ = [
    "AuditError",
    "EpisodeState",
    "EpisodeTrace",
    "MonteCarloResult",
    "WelfareEstimate",
    "monte_carlo",
    "run_episode",
    "run_episode_revealing",
]


class AuditError(RuntimeError):
    """A policy tried to sell an item that was not available."""


class EpisodeState:
    """What a policy may observe: the step and which items are still available."""

    __slots__ = ("m", "available", "n_available", "step", "_lowest")

    def __init__(self, m: int):
        self.m = m
        self.available = [True] * m
        self.n_available = m
        self.step = 1
        self._lowest = 0

    def is_available(self, i: int) -> bool:
        return self.available[i]

    def remove(self, i: int) -> None:
        if self.available[i]:
            self.available[i] = False
            self.n_available -= 1

    def first_available(self) -> int | None:
        avail = self.available
        i = self._lowest
        while i < self.m and not avail[i]:
            i += 1
        self._lowest = i
        return i if i < self.m else None

    def first_available_among(self, items) -> int | None:
        avail = self.available
        for i in items:
            if avail[i]:
                return i
        return None


@dataclass
class StepRecord:
    step: int
    rule: ThresholdRule | None
    value: float
    accepted: bool
    item: int | None
    departures: list

    def to_text(self) -> str:
        rule = "-" if self.rule is None else f"{self.rule.price:g}@{self.rule.accept_prob_at_price:.6g}"
        return (
            f"step={self.step} rule={rule} value={self.value:g} accepted={int(self.accepted)} "
            f"item={'-' if self.item is None else self.item} departed={self.departures}"
        )


@dataclass
class EpisodeTrace:
    welfare: float
    matches: list = field(default_factory=list)  # (item, step, value)
    records: list | None = None

    def to_text(self) -> str:
        lines = [r.to_text() for r in (self.records or [])]
        lines.append(f"welfare={self.welfare:g}")
        return "\n".join(lines)


def _coins(key: int | None, lo: int, hi: int) -> np.ndarray | None:
    if key is None:
        return None
    return rngmod.uniforms_at(key, np.arange(lo - 1, hi, dtype=np.uint64))


def _audit(r: Realization, state: EpisodeState, item, step: int) -> None:
    if item is None:
        return
    if not (0 <= item < state.m) or not state.available[item]:
        raise AuditError(f"item {item} not available at step {step}")
    if r.horizons[item] < step:
        raise AuditError(f"item {item} departed before step {step}")


def run_episode(inst: Instance, r: Realization, policy, coin_key: int | None = None,
                trace: bool = False) -> EpisodeTrace:
    """Run one price-posting episode; ``coin_key`` keys the atom-acceptance coins."""
    if getattr(policy, "value_revealing", False):
        return run_episode_revealing(inst, r, policy, trace)
    h = r.horizons
    vals = r.buyer_values
    m = h.size
    T = vals.size
    order = np.argsort(h, kind="stable").tolist()
    hl = h.tolist()
    state = EpisodeState(m)
    dep = 0
    welfare = 0.0
    matches = []
    records = [] if trace else None
    t = 1
    while True:
        # Items whose horizon ended before step t are gone.
        while dep < m and hl[order[dep]] < t:
            state.remove(order[dep])
            dep += 1
        if state.n_available == 0 or policy.finished or t > T:
            break
        state.step = t
        decision = policy.post(t, state)
        rule = decision.rule
        nxt = dep
        while not state.available[order[nxt]]:
            nxt += 1
        end = min(decision.until, hl[order[nxt]], T)
        if trace:
            end = t
        end = int(end)
        hit = None
        if not rule.rejects_all:
            window = vals[t - 1:end]
            coins = None
            if 0.0 < rule.accept_prob_at_price < 1.0:
                coins = _coins(coin_key, t, end)
                if coins is None:
                    raise ValueError("a randomized rule needs a coin stream")
            acc = rule.accepts(window, coins)
            first = int(np.argmax(acc))
            if acc[first]:
                hit = t + first
        item = None
        if hit is not None:
            state.step = hit
            item = policy.select(hit, state)
            _audit(r, state, item, hit)
            if item is not None:
                state.remove(item)
                value = float(vals[hit - 1])
                welfare += value
                matches.append((item, hit, value))
        if trace:
            departing = [i for i in range(m) if hl[i] == t and state.available[i]]
            records.append(StepRecord(t, rule, float(vals[t - 1]), hit is not None, item, departing))
        t = (hit if hit is not None else end) + 1
    return EpisodeTrace(welfare, matches, records)


def run_episode_revealing(inst: Instance, r: Realization, policy, trace: bool = False) -> EpisodeTrace:
    """Value-revealing mode: the buyer announces its value and the policy picks an item or none."""
    h = r.horizons.tolist()
    vals = r.buyer_values
    m = len(h)
    state = EpisodeState(m)
    welfare = 0.0
    matches = []
    records = [] if trace else None
    for t in range(1, vals.size + 1):
        for i in range(m):
            if h[i] < t:
                state.remove(i)
        if state.n_available == 0 or policy.finished:
            break
        state.step = t
        value = float(vals[t - 1])
        item = policy.offer(t, state, value)
        _audit(r, state, item, t)
        if item is not None:
            state.remove(item)
            welfare += value
            matches.append((item, t, value))
        if trace:
            departing = [i for i in range(m) if h[i] == t and state.available[i]]
            records.append(StepRecord(t, None, value, item is not None, item, departing))
    return EpisodeTrace(welfare, matches, records)


@dataclass
class MonteCarloResult:
    alg: WelfareEstimate
    pro: WelfareEstimate
    ratio: float
    ratio_stderr: float
    alg_samples: np.ndarray
    pro_samples: np.ndarray


def _single_item_batch(inst: Instance, rule: ThresholdRule, trials: np.ndarray, master_seed: int,
                       couple: bool) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized fixed-rule episodes for one item with i.i.d. values.

    Draws exactly the same streams as :func:`run_episode`, so both paths agree
    trial by trial.
    """
    v: ValueDistribution = inst.values
    tkeys = rngmod.derive_many(master_seed, trials)
    rkeys = rngmod.derive_each(tkeys, rngmod.REALIZATION)
    ckeys = rngmod.derive_each(tkeys, rngmod.COIN)
    alg, _ = _first_acceptance_batch(inst, v, rule, rkeys, ckeys, want_max=couple)
    if couple:
        pro = _
    else:
        ukeys = rngmod.derive_each(tkeys, rngmod.UNCOUPLED)
        _, pro = _first_acceptance_batch(inst, v, None, ukeys, None, want_max=True)
    return alg, pro


def _first_acceptance_batch(inst, v, rule, rkeys, ckeys, want_max):
    n = rkeys.size
    hkeys = rngmod.derive_each(rkeys, rngmod.HORIZONS)
    vkeys = rngmod.derive_each(rkeys, rngmod.VALUES)
    h = sample_horizons(inst.horizons, rngmod.uniforms_at(hkeys, np.zeros(n, dtype=np.uint64)))
    if h.size and int(h.max()) > inst.time_cap:
        raise CapExceededError("sampled horizon exceeds time cap")
    welfare = np.zeros(n)
    best = np.zeros(n)
    sold = np.zeros(n, dtype=bool) if rule is not None else np.ones(n, dtype=bool)
    need_coins = rule is not None and 0.0 < rule.accept_prob_at_price < 1.0
    start = 1
    width = 8
    active = np.arange(n)
    while active.size:
        steps = np.arange(start, start + width, dtype=np.uint64)
        hh = h[active][:, None]
        valid = steps[None, :].astype(np.int64) <= hh
        vals = v.ppf(rngmod.uniforms_at(vkeys[active][:, None], steps[None, :] - np.uint64(1)))
        if want_max:
            best[active] = np.maximum(best[active], np.where(valid, vals, 0.0).max(axis=1))
        if rule is not None:
            coins = rngmod.uniforms_at(ckeys[active][:, None], steps[None, :] - np.uint64(1)) if need_coins else None
            acc = rule.accepts(vals, coins) & valid & ~sold[active][:, None]
            any_acc = acc.any(axis=1)
            first = np.argmax(acc, axis=1)
            rows = np.flatnonzero(any_acc)
            welfare[active[rows]] = vals[rows, first[rows]]
            sold[active[rows]] = True
        end = start + width - 1
        keep = h[active] > end
        if not want_max:
            keep &= ~sold[active]
        active = active[keep]
        start = end + 1
        width = min(width * 2, 4096)
    return welfare, best


def _run_trials(inst, factory, idx: np.ndarray, master_seed: int, couple: bool,
                on_episode, prophet: Callable) -> tuple[np.ndarray, np.ndarray]:
    alg = np.empty(idx.size)
    pro = np.empty(idx.size)
    for n, i in enumerate(idx.tolist()):
        keys = TrialKeys(master_seed, i)
        r = realize(inst, keys.realization)
        policy = factory(inst, Stream(keys.policy))
        ep = run_episode(inst, r, policy, keys.coin)
        alg[n] = ep.welfare
        pro[n] = prophet(r if couple else realize(inst, keys.uncoupled))
        if on_episode is not None:
            on_episode(i, r, policy, ep)
    return alg, pro


def default_threads() -> int:
    return os.cpu_count() or 1


def monte_carlo(inst: Instance, policy_factory, trials: int, master_seed: int, couple_prophet: bool = True,
                threads: int | None = None, on_episode: Callable | None = None,
                prophet: Callable | None = None, vectorize: bool = True) -> MonteCarloResult:
    """Estimate policy and prophet welfare over trials 0..trials-1.

    Results depend only on ``master_seed`` and ``trials``: workers process
    contiguous blocks and the reduction runs in trial order.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    threads = threads or default_threads()
    prophet = prophet or (lambda r: prophet_offline(r).welfare)
    rule = getattr(policy_factory, "fixed_rule", None)
    batch = vectorize and rule is not None and inst.m == 1 and inst.iid_values and on_episode is None

    blocks = np.array_split(np.arange(trials), max(1, min(threads, trials)))
    blocks = [b for b in blocks if b.size]

    def work(idx):
        if batch:
            return _single_item_batch(inst, rule, idx, master_seed, couple_prophet)
        return _run_trials(inst, policy_factory, idx, master_seed, couple_prophet, on_episode, prophet)

    if len(blocks) == 1:
        parts = [work(blocks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            parts = list(pool.map(work, blocks))
    alg = np.concatenate([p[0] for p in parts])
    pro = np.concatenate([p[1] for p in parts])
    a = WelfareEstimate.from_samples(alg)
    p = WelfareEstimate.from_samples(pro)
    if couple_prophet:
        ratio, se = ratio_of_means(pro, alg)
    else:
        ratio = p.mean / a.mean if a.mean else math.inf
        se = ratio * math.hypot(p.stderr / p.mean, a.stderr / a.mean) if a.mean and p.mean else math.inf
    return MonteCarloResult(a, p, ratio, se, alg, pro)
