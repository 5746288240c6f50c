"""Instances, sampled realizations, and the offline optimum (the prophet).

The prophet sees every horizon and every buyer value in advance. Because each
item's feasible buyers form a prefix of time, serving items in ascending
horizon order and giving each the best remaining buyer is optimal.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .distributions import (
    DiscreteValues,
    HorizonDistribution,
    PerStepValues,
    ValueDistribution,
)
from .stats import WelfareEstimate

DEFAULT_TIME_CAP = 10**9


class CapExceededError(RuntimeError):
    """A sampled horizon exceeded the instance's time cap."""


@dataclass(frozen=True)
class Instance:
    horizons: tuple
    values: ValueDistribution | PerStepValues
    time_cap: int = DEFAULT_TIME_CAP

    def __post_init__(self):
        hs = tuple(self.horizons)
        object.__setattr__(self, "horizons", hs)
        if not hs:
            raise ValueError("an instance needs at least one item")
        if not all(isinstance(h, HorizonDistribution) for h in hs):
            raise TypeError("horizons must be HorizonDistribution objects")
        if self.time_cap < 1:
            raise ValueError("time_cap must be >= 1")
        finite = [h.support_max for h in hs]
        if all(s is not None for s in finite) and self.time_cap < max(finite):
            raise ValueError("time_cap is below the largest horizon support point")

    @classmethod
    def iid(cls, m: int, horizon: HorizonDistribution, values, time_cap: int = DEFAULT_TIME_CAP) -> "Instance":
        return cls((horizon,) * m, values, time_cap)

    @property
    def m(self) -> int:
        return len(self.horizons)

    @property
    def iid_values(self) -> bool:
        return isinstance(self.values, ValueDistribution)

    @property
    def common_horizon(self) -> HorizonDistribution | None:
        first = self.horizons[0]
        return first if all(h == first for h in self.horizons) else None


@dataclass
class Realization:
    horizons: np.ndarray
    buyer_values: np.ndarray
    key: int | None = None

    @property
    def m(self) -> int:
        return int(self.horizons.size)

    @property
    def length(self) -> int:
        return int(self.buyer_values.size)

    def dump(self) -> str:
        return (
            f"horizons: {self.horizons.tolist()}\n"
            f"values: {self.buyer_values.tolist()}\n"
        )


@dataclass
class MatchingResult:
    welfare: float
    assignment: dict = field(default_factory=dict)  # item -> buyer step (1-based)


def sample_horizons(dists: tuple, u: np.ndarray) -> np.ndarray:
    """Horizons for items with distributions ``dists`` from uniforms ``u`` (last axis = item)."""
    first = dists[0]
    if all(d is first for d in dists) or all(d == first for d in dists):
        return first.ppf(u)
    out = np.empty(u.shape, dtype=np.int64)
    groups: dict = {}
    for i, d in enumerate(dists):
        groups.setdefault(d, []).append(i)
    for d, idx in groups.items():
        out[..., idx] = d.ppf(u[..., idx])
    return out


def value_at_steps(values, u: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Buyer values at 1-based ``steps`` from uniforms ``u``."""
    if isinstance(values, ValueDistribution):
        return values.ppf(u)
    out = np.zeros(u.shape, dtype=float)
    n = min(len(values), int(steps.max(initial=0)))
    for t in range(1, n + 1):
        sel = steps == t
        if np.any(sel):
            out[sel] = values.at(t).ppf(u[sel])
    return out


def realize(inst: Instance, key: int) -> Realization:
    """Sample horizons and the buyer values up to the largest horizon."""
    m = inst.m
    u_h = rngmod.uniforms_at(rngmod.derive(key, rngmod.HORIZONS), np.arange(m))
    horizons = sample_horizons(inst.horizons, u_h)
    T = int(horizons.max())
    if T > inst.time_cap:
        raise CapExceededError(f"sampled horizon {T} exceeds time cap {inst.time_cap}")
    steps = np.arange(1, T + 1)
    u_v = rngmod.uniforms_at(rngmod.derive(key, rngmod.VALUES), steps - 1)
    return Realization(horizons, value_at_steps(inst.values, u_v, steps), key)


def prophet_offline(r: Realization) -> MatchingResult:
    """Optimal offline matching.

    Items are served in ascending horizon order (ties by index); each takes the
    highest-valued unmatched buyer at or before its horizon, earliest first on
    ties. Buyers arriving between consecutive sorted horizons form a segment;
    only the best (m - j) buyers of segment j can ever be used, and a heap over
    segment heads yields the best remaining buyer in O(log m).
    """
    h = r.horizons
    v = r.buyer_values
    m = h.size
    order = np.argsort(h, kind="stable")
    hs = h[order]
    T = min(v.size, int(hs[-1]))
    steps = np.arange(1, T + 1)
    vals = v[:T]
    seg = np.searchsorted(hs, steps, side="left")
    pos = np.lexsort((steps, -vals, seg))
    seg_sorted = seg[pos]
    starts = np.searchsorted(seg_sorted, np.arange(m + 1), side="left")
    step_sorted = steps[pos].tolist()
    val_sorted = vals[pos].tolist()
    starts = starts.tolist()

    heap: list = []
    ptr = list(starts[:-1])
    welfare = 0.0
    assignment = {}
    for j in range(m):
        if ptr[j] < starts[j + 1]:
            k = ptr[j]
            heapq.heappush(heap, (-val_sorted[k], step_sorted[k], j))
        if not heap:
            continue
        negv, step, sj = heapq.heappop(heap)
        if -negv <= 0.0:
            heapq.heappush(heap, (negv, step, sj))
            continue
        welfare += -negv
        assignment[int(order[j])] = step
        ptr[sj] += 1
        k = ptr[sj]
        if k < starts[sj + 1]:
            heapq.heappush(heap, (-val_sorted[k], step_sorted[k], sj))
    return MatchingResult(welfare, assignment)


def matching_bruteforce(r: Realization) -> MatchingResult:
    """Exact optimum by dynamic programming over the set of matched items (m <= 16)."""
    h = r.horizons.tolist()
    m = len(h)
    if m > 16:
        raise ValueError("brute force limited to m <= 16")
    T = min(r.buyer_values.size, max(h))
    full = 1 << m
    neg = -math.inf
    best = [neg] * full
    best[0] = 0.0
    choice: list = [dict() for _ in range(full)]
    for t in range(1, T + 1):
        val = float(r.buyer_values[t - 1])
        usable = [i for i in range(m) if h[i] >= t]
        nxt = best[:]
        nxt_choice = [dict(c) for c in choice]
        for mask in range(full):
            base = best[mask]
            if base == neg:
                continue
            for i in usable:
                bit = 1 << i
                if mask & bit:
                    continue
                cand = base + val
                if cand > nxt[mask | bit]:
                    nxt[mask | bit] = cand
                    c = dict(choice[mask])
                    c[i] = t
                    nxt_choice[mask | bit] = c
        best, choice = nxt, nxt_choice
    k = max(range(full), key=lambda s: best[s])
    return MatchingResult(best[k], choice[k])


def prophet_levels(horizons: np.ndarray, levels: np.ndarray, atom_values: np.ndarray) -> float:
    """Offline optimum for atom-valued buyers via the deficiency form of Hall's theorem.

    With prefix neighbourhoods, the largest matching of a buyer set B is
    min over j of (m - j + |B before the j-th smallest horizon|). The welfare
    is the layer-cake sum over atom levels.
    """
    m = horizons.size
    L = atom_values.size
    hs = np.sort(horizons)
    T = min(levels.size, int(hs[-1]))
    seg = np.searchsorted(hs, np.arange(1, T + 1), side="left")
    counts = np.bincount(seg * L + levels[:T], minlength=m * L).reshape(m, L)
    at_least = np.cumsum(counts[:, ::-1], axis=1)[:, ::-1]
    reach = np.cumsum(at_least, axis=0)
    slack = (m - 1 - np.arange(m))[:, None] + reach
    size = np.minimum(m, slack.min(axis=0))
    steps = np.diff(np.concatenate([[0.0], atom_values]))
    return float(np.dot(steps, size))


def prophet_order_stats(horizons: np.ndarray, values: ValueDistribution, key: int) -> float:
    """Offline optimum for i.i.d. values without materializing buyers.

    Within a segment of L buyers only the top order statistics can matter; they
    are drawn lazily from the top down using uniform order statistics, so the
    cost is O(m log m) however long the horizons are.
    """
    hs = np.sort(horizons).tolist()
    m = len(hs)
    heap: list = []
    prev = 0
    welfare = 0.0
    seg_len = []
    seg_key = []
    seg_logu = []
    seg_rank = []
    for j in range(m):
        L = hs[j] - prev
        prev = hs[j]
        seg_len.append(L)
        k = rngmod.derive(key, j)
        seg_key.append(k)
        seg_rank.append(0)
        seg_logu.append(0.0)
        if L > 0:
            lu = math.log(rngmod.uniform_scalar(k, 0)) / L
            seg_logu[j] = lu
            heapq.heappush(heap, (-float(values.ppf_log(np.array(lu))), j))
        if not heap:
            continue
        negv, sj = heapq.heappop(heap)
        welfare -= negv
        r = seg_rank[sj] + 1
        seg_rank[sj] = r
        if r < seg_len[sj]:
            lu = seg_logu[sj] + math.log(rngmod.uniform_scalar(seg_key[sj], r)) / (seg_len[sj] - r)
            seg_logu[sj] = lu
            heapq.heappush(heap, (-float(values.ppf_log(np.array(lu))), sj))
    return welfare


def _expected_span(inst: Instance) -> float:
    means = [h.mean for h in inst.horizons]
    return max(means) * (1.0 + math.log(inst.m))


def prophet_samples(inst: Instance, trials: int, master_seed: int, method: str = "auto",
                    stream: int = rngmod.REALIZATION) -> np.ndarray:
    """Per-trial prophet welfare for trials 0..trials-1."""
    if method == "auto":
        method = "order_stats" if inst.iid_values and _expected_span(inst) > 5000 else "realize"
    if method not in ("realize", "order_stats", "levels"):
        raise ValueError(f"unknown method {method!r}")
    out = np.empty(trials)
    for i in range(trials):
        key = rngmod.derive(rngmod.derive(master_seed, i), stream)
        if method == "order_stats":
            u_h = rngmod.uniforms_at(rngmod.derive(key, rngmod.HORIZONS), np.arange(inst.m))
            h = sample_horizons(inst.horizons, u_h)
            if int(h.max()) > inst.time_cap:
                raise CapExceededError("sampled horizon exceeds time cap")
            out[i] = prophet_order_stats(h, inst.values, rngmod.derive(key, rngmod.ORDER_STATS))
        else:
            r = realize(inst, key)
            if method == "levels" and isinstance(inst.values, DiscreteValues):
                lv = inst.values.level_of(r.buyer_values)
                out[i] = prophet_levels(r.horizons, lv, inst.values.values)
            else:
                out[i] = prophet_offline(r).welfare
    return out


def estimate_pro(inst: Instance, trials: int, master_seed: int, method: str = "auto") -> WelfareEstimate:
    """Monte Carlo estimate of the prophet's expected welfare."""
    return WelfareEstimate.from_samples(prophet_samples(inst, trials, master_seed, method))
