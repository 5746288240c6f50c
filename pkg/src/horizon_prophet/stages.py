"""Stage decomposition of the time axis for the multi-item policies.

Stage k ends at the first step r_k such that the expected number of items
still present after step r_k - 1 has fallen to m * ratio**k. After ``s``
stages at most ten items remain in expectation and the final stage begins.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from collections import Counter

import numpy as np

from .distributions import Geometric
from .prophet import Instance

LONG, SHORT, EMPTY = "Long", "Short", "Empty"
FINAL_ITEMS = 10
MAX_SCAN = 10**7


class StageSearchError(RuntimeError):
    """The threshold search did not terminate within the scan limit."""


@dataclass(frozen=True)
class StagePlan:
    m: int
    s: int
    bounds: tuple  # ((start, end), ...) for k = 1..s; stage k covers steps start..end-1
    kinds: tuple
    final_start: int
    ratio: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(tuple(b) for b in self.bounds))
        object.__setattr__(self, "kinds", tuple(self.kinds))

    def length(self, k: int) -> int:
        start, end = self.bounds[k - 1]
        return end - start

    def budget(self, k: int) -> float:
        """Expected items present at the start of stage k: m * ratio**(k-1)."""
        return self.m * self.ratio ** (k - 1)

    def end_of(self, k: int) -> float:
        """r_k, with the final stage open-ended."""
        return self.bounds[k - 1][1] if 1 <= k <= self.s else math.inf

    def start_of(self, k: int) -> int:
        return self.bounds[k - 1][0] if k <= self.s else self.final_start

    def count(self, kind: str) -> int:
        return sum(1 for x in self.kinds if x == kind)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = [list(b) for b in self.bounds]
        d["kinds"] = list(self.kinds)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "StagePlan":
        return cls(d["m"], d["s"], d["bounds"], d["kinds"], d["final_start"], d.get("ratio", 0.5))


def _groups(inst: Instance):
    return list(Counter(inst.horizons).items())


def expected_remaining(inst: Instance, t):
    """Expected number of items with horizon strictly beyond ``t``."""
    t = np.asarray(t)
    total = sum(count * np.asarray(d.survival(t + 1), dtype=float) for d, count in _groups(inst))
    return float(total) if np.ndim(total) == 0 else total


def stage_count(m: int, ratio: float = 0.5) -> int:
    """Smallest s >= 0 with m * ratio**s <= 10."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    s = 0
    while m * ratio**s > FINAL_ITEMS:
        s += 1
    return s


def _first_at_or_below(inst: Instance, threshold: float, t0: int, limit: int) -> int:
    """Smallest t >= t0 with expected_remaining(t) <= threshold, scanning in chunks."""
    chunk = 64
    t = t0
    while t <= limit:
        ts = np.arange(t, min(t + chunk, limit + 1))
        hit = np.flatnonzero(expected_remaining(inst, ts) <= threshold)
        if hit.size:
            return int(ts[hit[0]])
        t = int(ts[-1]) + 1
        chunk = min(chunk * 2, 1 << 20)
    raise StageSearchError(f"no t <= {limit} brings expected remaining items to {threshold}")


def _geometric_shortcut(inst: Instance, threshold: float, t0: int) -> int:
    d = inst.horizons[0]
    m = inst.m
    q = d.continue_prob
    if q <= 0.0:
        t = 1 if threshold < m else 0
    else:
        t = max(0, math.ceil(math.log(threshold / m) / math.log(q)))
    t = max(t, t0)
    while expected_remaining(inst, t) > threshold:
        t += 1
    while t > t0 and expected_remaining(inst, t - 1) <= threshold:
        t -= 1
    return t


def build_stage_plan(inst: Instance, ratio: float = 0.5, shortcut: bool = True,
                     max_scan: int = MAX_SCAN) -> StagePlan:
    m = inst.m
    s = stage_count(m, ratio)
    common = inst.common_horizon
    use_shortcut = shortcut and isinstance(common, Geometric)
    bounds, kinds = [], []
    start, t = 1, 0
    for k in range(1, s + 1):
        threshold = m * ratio**k
        if use_shortcut:
            t = _geometric_shortcut(inst, threshold, t)
        else:
            t = _first_at_or_below(inst, threshold, t, max_scan)
        end = t + 1
        length = end - start
        bounds.append((start, end))
        kinds.append(LONG if length >= 2 else SHORT if length == 1 else EMPTY)
        start = end
    return StagePlan(m, s, tuple(bounds), tuple(kinds), start, ratio)
