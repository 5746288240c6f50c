"""Horizon and buyer-value distributions.

Horizons live on {1, 2, ...}: an item with horizon ``h`` can be sold to the
buyers at steps 1..h and departs at the end of step ``h``. Value distributions
expose randomized threshold rules: accept values above a price, and accept the
atom at the price with a fixed probability.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

PROB_TOL = 1e-12


class UndefinedConditionalError(ValueError):
    """Conditioning on an event of probability zero."""


# --------------------------------------------------------------------------
# Horizons
# --------------------------------------------------------------------------


class HorizonDistribution(ABC):
    """Distribution of an item's horizon on the positive integers."""

    @abstractmethod
    def survival(self, t):
        """Pr[h >= t]; accepts scalars or integer arrays."""

    @property
    @abstractmethod
    def mean(self) -> float: ...

    @property
    @abstractmethod
    def support_max(self) -> int | None:
        """Largest support point, or None when unbounded."""

    @abstractmethod
    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF on uniforms in (0, 1); returns int64 horizons."""

    @abstractmethod
    def pgf(self, z: float) -> float:
        """E[z ** h]."""

    def pmf(self, t):
        return self.survival(t) - self.survival(np.asarray(t) + 1)

    def hazard_continue(self, t: int) -> float:
        """Pr[h >= t + 1 | h >= t]."""
        s = float(self.survival(t))
        if s <= 0.0:
            raise UndefinedConditionalError(f"Pr[h >= {t}] is zero")
        return float(self.survival(t + 1)) / s


@dataclass(frozen=True)
class Geometric(HorizonDistribution):
    """Pr[h = t] = (1 - 1/mean) ** (t - 1) / mean for t >= 1."""

    mean_: float

    def __post_init__(self):
        if not (self.mean_ >= 1.0 and math.isfinite(self.mean_)):
            raise ValueError(f"geometric mean must be a finite value >= 1, got {self.mean_}")

    @property
    def mean(self) -> float:
        return float(self.mean_)

    @property
    def continue_prob(self) -> float:
        return 1.0 - 1.0 / self.mean_

    @property
    def support_max(self) -> None:
        return None

    def survival(self, t):
        q = self.continue_prob
        t = np.asarray(t)
        out = np.where(t <= 1, 1.0, np.power(q, np.maximum(t, 1) - 1.0))
        return float(out) if out.ndim == 0 else out

    def hazard_continue(self, t: int) -> float:
        if t < 1:
            return 1.0
        return self.continue_prob

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        q = self.continue_prob
        if q <= 0.0:
            return np.ones(u.shape, dtype=np.int64)
        return (1 + np.floor(np.log(u) / math.log(q))).astype(np.int64)

    def pgf(self, z: float) -> float:
        s = 1.0 / self.mean_
        return s * z / (1.0 - (1.0 - s) * z)


class FiniteHorizon(HorizonDistribution):
    """Horizon with finite support, stored as sorted support and probabilities."""

    support: np.ndarray
    probs: np.ndarray

    def _finalize(self, support: Sequence[int], probs: Sequence[float]) -> None:
        s = np.asarray(support, dtype=np.int64)
        p = np.asarray(probs, dtype=float)
        if s.ndim != 1 or s.size == 0 or s.size != p.size:
            raise ValueError("support and probabilities must be nonempty and aligned")
        if np.any(s < 1):
            raise ValueError("horizon support must be >= 1")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")
        order = np.argsort(s, kind="stable")
        s, p = s[order], p[order] / total
        if np.any(np.diff(s) == 0):
            raise ValueError("duplicate support points")
        keep = p > 0
        s, p = s[keep], p[keep]
        tails = np.cumsum(p[::-1])[::-1]
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_tails", np.append(tails, 0.0))
        object.__setattr__(self, "_cdf", np.minimum(np.cumsum(p), 1.0))
        self._cdf[-1] = 1.0

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    @property
    def support_max(self) -> int:
        return int(self.support[-1])

    def survival(self, t):
        idx = np.searchsorted(self.support, np.asarray(t), side="left")
        out = self._tails[idx]
        return float(out) if np.ndim(out) == 0 else out

    def ppf(self, u):
        idx = np.searchsorted(self._cdf, np.asarray(u, dtype=float), side="right")
        return self.support[np.minimum(idx, self.support.size - 1)]

    def pgf(self, z: float) -> float:
        return float(np.dot(self.probs, np.power(float(z), self.support.astype(float))))


@dataclass(frozen=True)
class Deterministic(FiniteHorizon):
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("deterministic horizon must be a positive integer")
        self._finalize([self.n], [1.0])


@dataclass(frozen=True)
class UniformRange(FiniteHorizon):
    """Uniform on the integers lo..hi inclusive."""

    lo: int
    hi: int

    def __post_init__(self):
        if not (1 <= self.lo <= self.hi):
            raise ValueError("need 1 <= lo <= hi")
        k = self.hi - self.lo + 1
        self._finalize(range(self.lo, self.hi + 1), [1.0 / k] * k)


@dataclass(frozen=True)
class ExplicitPmf(FiniteHorizon):
    points: tuple

    def __post_init__(self):
        pts = tuple((int(t), float(p)) for t, p in self.points)
        object.__setattr__(self, "points", pts)
        self._finalize([t for t, _ in pts], [p for _, p in pts])


@dataclass(frozen=True)
class TruncatedGeometric(FiniteHorizon):
    """min(G, cap) for G geometric with mean ``base_mean``; the tail mass sits at ``cap``."""

    base_mean: float
    cap: int

    def __post_init__(self):
        if self.base_mean < 1 or self.cap < 1:
            raise ValueError("need base_mean >= 1 and cap >= 1")
        q = 1.0 - 1.0 / self.base_mean
        t = np.arange(1, self.cap + 1)
        surv = np.power(q, t - 1.0)
        probs = surv - np.append(surv[1:], 0.0)
        self._finalize(t, probs)

    @classmethod
    def with_mean(cls, mean: float, cap: int) -> "TruncatedGeometric":
        """Censored geometric whose actual mean equals ``mean``."""
        if not (1.0 <= mean < cap):
            raise ValueError("need 1 <= mean < cap")
        if mean == 1.0:
            return cls(1.0, cap)

        def gap(base):
            q = 1.0 - 1.0 / base
            return (1.0 - q ** cap) / (1.0 - q) - mean

        hi = 2.0 * mean
        while gap(hi) < 0:
            hi *= 2.0
        return cls(brentq(gap, 1.0 + 1e-12, hi, xtol=1e-14, rtol=1e-15), cap)


def truncate(d: HorizonDistribution, n: int) -> FiniteHorizon:
    """min(h, n): mass beyond ``n`` moves to ``n``."""
    t = np.arange(1, n + 1)
    surv = np.asarray(d.survival(t), dtype=float)
    probs = surv - np.append(surv[1:], 0.0)
    return ExplicitPmf(tuple(zip(t.tolist(), probs.tolist())))


def random_mhr_pmf(rng: np.random.Generator, max_len: int = 12) -> ExplicitPmf:
    """Random MHR pmf built from a non-increasing sequence of continue probabilities."""
    length = int(rng.integers(1, max_len + 1))
    cont = np.sort(rng.uniform(0.0, 1.0, size=length))[::-1]
    surv = np.concatenate([[1.0], np.cumprod(cont)])
    surv[-1] = 0.0
    probs = surv[:-1] - surv[1:]
    return ExplicitPmf(tuple(zip(range(1, length + 1), probs.tolist())))


def survival(d: HorizonDistribution, t):
    return d.survival(t)


def hazard_continue(d: HorizonDistribution, t: int) -> float:
    return d.hazard_continue(t)


def is_mhr(d: HorizonDistribution, cap: int = 10_000) -> bool:
    """Continue probabilities Pr[h >= t+1 | h >= t] are non-increasing in t."""
    if isinstance(d, Geometric):
        return True
    last = d.support_max if d.support_max is not None else cap
    t = np.arange(1, last + 1)
    surv = np.asarray(d.survival(t), dtype=float)
    nxt = np.asarray(d.survival(t + 1), dtype=float)
    alive = surv > 0
    cont = nxt[alive] / surv[alive]
    return bool(np.all(np.diff(cont) <= PROB_TOL))


@dataclass(frozen=True)
class SosdReport:
    holds: bool
    first_violation: int | None
    max_excess: float


def sosd_vs_geometric(d: HorizonDistribution, c_max: int) -> SosdReport:
    """Compare E[max(0, c - h)] under ``d`` and under the geometric with the same mean.

    E[max(0, c - h)] equals the partial sum of the CDF over 1..c-1.
    """
    if c_max < 1:
        raise ValueError("c_max must be >= 1")
    t = np.arange(1, c_max)
    cdf_d = 1.0 - np.asarray(d.survival(t + 1), dtype=float)
    q = 1.0 - 1.0 / d.mean
    cdf_g = 1.0 - np.power(q, t.astype(float))
    phi_d = np.concatenate([[0.0], np.cumsum(cdf_d)])
    phi_g = np.concatenate([[0.0], np.cumsum(cdf_g)])
    excess = phi_d - phi_g
    bad = np.flatnonzero(excess > PROB_TOL)
    first = int(bad[0]) + 1 if bad.size else None
    return SosdReport(first is None, first, float(excess.max()))


# --------------------------------------------------------------------------
# Values
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdRule:
    """Accept values above ``price``; accept the atom at ``price`` w.p. ``accept_prob_at_price``."""

    price: float
    accept_prob_at_price: float
    target: float

    @property
    def rejects_all(self) -> bool:
        return self.price == math.inf

    def accepts(self, values: np.ndarray, coins: np.ndarray | None = None) -> np.ndarray:
        frac = self.accept_prob_at_price
        if frac >= 1.0:
            return values >= self.price
        if frac <= 0.0 or coins is None:
            return values > self.price
        return (values > self.price) | ((values == self.price) & (coins < frac))


ACCEPT_ALL = ThresholdRule(-math.inf, 1.0, 1.0)
REJECT_ALL = ThresholdRule(math.inf, 0.0, 0.0)


class ValueDistribution(ABC):
    @property
    @abstractmethod
    def mean(self) -> float: ...

    @abstractmethod
    def tail_ge(self, x: float) -> float:
        """Pr[X >= x]."""

    @abstractmethod
    def tail_gt(self, x: float) -> float:
        """Pr[X > x]."""

    @abstractmethod
    def threshold(self, q: float) -> ThresholdRule:
        """Rule whose acceptance probability is exactly ``q``."""

    @abstractmethod
    def accepted_mass(self, rule: ThresholdRule) -> tuple[float, float]:
        """(Pr[accept], E[X; accept]) under ``rule``."""

    @abstractmethod
    def ppf_log(self, log_u: np.ndarray) -> np.ndarray:
        """Inverse CDF evaluated at exp(log_u)."""

    def ppf(self, u: np.ndarray) -> np.ndarray:
        return self.ppf_log(np.log(np.asarray(u, dtype=float)))

    def max_ppf(self, u: np.ndarray, n) -> np.ndarray:
        """Inverse CDF of the maximum of ``n`` i.i.d. draws."""
        return self.ppf_log(np.log(np.asarray(u, dtype=float)) / np.asarray(n, dtype=float))

    def cond_mean(self, rule: ThresholdRule) -> float:
        """E[X | accepted under rule]."""
        prob, mass = self.accepted_mass(rule)
        if prob <= 0.0:
            raise UndefinedConditionalError("rule accepts with probability zero")
        return mass / prob


@dataclass(frozen=True)
class DiscreteValues(ValueDistribution):
    """Finitely many atoms given as (value, probability) pairs."""

    atoms: tuple

    def __post_init__(self):
        pts = sorted((float(v), float(p)) for v, p in self.atoms)
        if not pts:
            raise ValueError("need at least one atom")
        v = np.array([a for a, _ in pts])
        p = np.array([b for _, b in pts])
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("atom probabilities must be nonnegative and sum to 1")
        if np.any(np.diff(v) == 0):
            raise ValueError("duplicate atom values")
        p = p / p.sum()
        keep = p > 0
        v, p = v[keep], p[keep]
        object.__setattr__(self, "atoms", tuple(zip(v.tolist(), p.tolist())))
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)
        tails = np.cumsum(p[::-1])[::-1]
        object.__setattr__(self, "_tails", np.append(tails, 0.0))
        cdf = np.minimum(np.cumsum(p), 1.0)
        cdf[-1] = 1.0
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_cdf", np.log(cdf))

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def tail_ge(self, x: float) -> float:
        return float(self._tails[np.searchsorted(self.values, x, side="left")])

    def tail_gt(self, x: float) -> float:
        return float(self._tails[np.searchsorted(self.values, x, side="right")])

    def threshold(self, q: float) -> ThresholdRule:
        if q <= 0.0:
            return REJECT_ALL
        if q >= 1.0:
            return ACCEPT_ALL
        # Largest atom whose upper tail still covers q.
        k = int(np.searchsorted(-self._tails[:-1], -(q - PROB_TOL), side="right")) - 1
        k = max(k, 0)
        above = self._tails[k + 1]
        frac = min(1.0, max(0.0, (q - above) / self.probs[k]))
        return ThresholdRule(float(self.values[k]), frac, float(q))

    def accepted_mass(self, rule: ThresholdRule) -> tuple[float, float]:
        above = self.values > rule.price
        at = self.values == rule.price
        frac = rule.accept_prob_at_price
        prob = self.probs[above].sum() + frac * self.probs[at].sum()
        mass = np.dot(self.values[above], self.probs[above]) + frac * np.dot(self.values[at], self.probs[at])
        return float(prob), float(mass)

    def ppf_log(self, log_u):
        idx = np.searchsorted(self._log_cdf, np.asarray(log_u, dtype=float), side="right")
        return self.values[np.minimum(idx, self.values.size - 1)]

    def level_of(self, values: np.ndarray) -> np.ndarray:
        """Index of each value among the atoms."""
        return np.searchsorted(self.values, values)


def uniform_values(lo: int, hi: int) -> DiscreteValues:
    k = hi - lo + 1
    if k < 1:
        raise ValueError("need lo <= hi")
    return DiscreteValues(tuple((float(v), 1.0 / k) for v in range(lo, hi + 1)))


def point_mass(v: float) -> DiscreteValues:
    return DiscreteValues(((float(v), 1.0),))


@dataclass(frozen=True)
class Pareto(ValueDistribution):
    """Pr[X >= x] = x ** -alpha on [1, cap]; the mass above ``cap`` sits at ``cap``."""

    alpha: float
    cap: float = 1e9

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError("Pareto shape must exceed 1 for a finite mean")
        if not self.cap > 1.0:
            raise ValueError("cap must exceed 1")

    @property
    def cap_mass(self) -> float:
        return self.cap ** (-self.alpha)

    @property
    def truncation_bias(self) -> float:
        """Uncapped expectation carried by values above the cap."""
        a = self.alpha
        return self.cap ** (1.0 - a) * a / (a - 1.0)

    def _upper_mass(self, p: float) -> float:
        a = self.alpha
        return a / (a - 1.0) * (p ** (1.0 - a) - self.cap ** (1.0 - a)) + self.cap ** (1.0 - a)

    @property
    def mean(self) -> float:
        return self._upper_mass(1.0)

    def tail_ge(self, x: float) -> float:
        if x <= 1.0:
            return 1.0
        if x > self.cap:
            return 0.0
        return x ** (-self.alpha)

    def tail_gt(self, x: float) -> float:
        if x < 1.0:
            return 1.0
        if x >= self.cap:
            return 0.0
        return x ** (-self.alpha)

    def threshold(self, q: float) -> ThresholdRule:
        if q <= 0.0:
            return REJECT_ALL
        if q >= 1.0:
            return ACCEPT_ALL
        if q <= self.cap_mass:
            return ThresholdRule(self.cap, q / self.cap_mass, q)
        return ThresholdRule(q ** (-1.0 / self.alpha), 1.0, q)

    def accepted_mass(self, rule: ThresholdRule) -> tuple[float, float]:
        p, frac = rule.price, rule.accept_prob_at_price
        if p > self.cap or (p == self.cap and frac <= 0.0):
            return 0.0, 0.0
        if p == self.cap:
            return frac * self.cap_mass, frac * self.cap_mass * self.cap
        p = max(p, 1.0)
        return p ** (-self.alpha), self._upper_mass(p)

    def ppf_log(self, log_u):
        w = -np.expm1(np.asarray(log_u, dtype=float))
        return np.minimum(np.power(w, -1.0 / self.alpha), self.cap)


@dataclass(frozen=True)
class PerStepValues:
    """Independent, non-identical values: buyer ``t`` draws from ``steps[t - 1]``.

    Steps past the end of the list have no buyer (value 0).
    """

    steps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ValueError("need at least one step distribution")

    def at(self, t: int) -> ValueDistribution:
        return self.steps[t - 1]

    def __len__(self) -> int:
        return len(self.steps)


def threshold_for_acceptance(v: ValueDistribution, q: float) -> ThresholdRule:
    return v.threshold(q)


def cond_exp_accepted(v: ValueDistribution, rule: ThresholdRule) -> float:
    return v.cond_mean(rule)


def sample_horizon(d: HorizonDistribution, u: float) -> int:
    return int(d.ppf(np.array([u]))[0])


def sample_value(v: ValueDistribution, u: float) -> float:
    return float(v.ppf(np.array([u]))[0])
