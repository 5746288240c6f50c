"""Closed-form benchmarks and analytic bounds.

Upper bounds on the prophet come from relaxations that price each stage (or
each state of the low-rate process) at the quantile matching its expected
capacity. Lower-bound quantities for heavy-tailed values reduce to one-dimensional
integrals and to the reach probability of a biased random walk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .distributions import HorizonDistribution, Pareto, ValueDistribution
from .prophet import Instance
from .stages import StagePlan

QUAD_TOL = 1e-8


class QuadratureError(RuntimeError):
    """Numerical integration missed its tolerance."""


def pro_single_upper(v: ValueDistribution, mu: float) -> float:
    """E[X | accepted] at acceptance probability 1/mu; bounds the one-item prophet."""
    if mu < 1:
        raise ValueError("mean horizon must be >= 1")
    return v.cond_mean(v.threshold(1.0 / mu))


def single_mhr_ratio(d: HorizonDistribution) -> float:
    """1 / E_h[1 - (1 - 1/mu)**h]: prophet-to-fixed-price ratio for one item."""
    mu = d.mean
    if mu < 1:
        raise ValueError("mean horizon must be >= 1")
    sold = 1.0 - d.pgf(1.0 - 1.0 / mu)
    return 1.0 / sold


@dataclass(frozen=True)
class StageBound:
    per_stage: tuple
    final_bound: float

    @property
    def total(self) -> float:
        return float(sum(self.per_stage)) + self.final_bound


def pro_stage_upper(plan: StagePlan, v: ValueDistribution) -> list[float]:
    out = []
    for k in range(1, plan.s + 1):
        length = plan.length(k)
        if length <= 0:
            out.append(0.0)
            continue
        budget = plan.budget(k)
        rule = v.threshold(min(1.0, budget / length))
        out.append(min(length, budget) * v.cond_mean(rule))
    return out


def pro_final_upper(inst: Instance, plan: StagePlan) -> float:
    if not inst.iid_values:
        raise ValueError("stage bounds need i.i.d. values")
    start = plan.final_start
    return float(sum(float(h.survival(start)) * pro_single_upper(inst.values, h.mean) for h in inst.horizons))


def stage_bound(inst: Instance, plan: StagePlan) -> StageBound:
    return StageBound(tuple(pro_stage_upper(plan, inst.values)), pro_final_upper(inst, plan))


def pro_prime_upper_geometric(m: int, lam: float, v: ValueDistribution) -> float:
    """Sum over states k of E[X | X >= p_k] with Pr[X >= p_k] = k * lam."""
    if m * lam > 1 + 1e-12:
        raise ValueError("need m * lambda <= 1")
    return float(sum(v.cond_mean(v.threshold(min(1.0, k * lam))) for k in range(1, m + 1)))


def alg_prime_pareto(m: int, lam: float, alpha: float) -> float:
    """Balancing-policy welfare in the low-rate process with Pareto values."""
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    k = np.arange(1, m + 1, dtype=float)
    return float(np.sum((k * lam) ** (-1.0 / alpha) * (alpha - 1.0) ** (-1.0 / alpha)))


def _tail_integral(b: float, alpha: float, tol: float) -> float:
    """Integral over [1, inf) of 1 / (1 + b v**alpha)."""
    f = lambda x: 1.0 / (1.0 + b * x**alpha)
    knee = b ** (-1.0 / alpha)
    pieces = [(1.0, knee), (knee, math.inf)] if knee > 1.0 else [(1.0, math.inf)]
    total, err = 0.0, 0.0
    for lo, hi in pieces:
        val, e = integrate.quad(f, lo, hi, epsabs=tol / 4, epsrel=1e-13, limit=500)
        total += val
        err += e
    if err > max(tol, 1e-12 * abs(total)):
        raise QuadratureError(f"quadrature error {err:g} above tolerance {tol:g}")
    return total


def pro_prime_finite_m_lb(m: int, lam: float, alpha: float, tol: float = QUAD_TOL) -> float:
    """Lower bound on the low-rate prophet for Pareto values.

    In state k a buyer of value at least v arrives before the next departure
    with probability (1 - k lam) v^-a / (v^-a + k lam - k lam v^-a); the
    integrand simplifies to 1 / (1 + b v^a) with b = k lam / (1 - k lam).
    """
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    total = 0.0
    for k in range(1, m + 1):
        rate = k * lam
        if rate >= 1.0:
            total += 1.0
            continue
        total += 1.0 + _tail_integral(rate / (1.0 - rate), alpha, tol)
    return total


def ratio_lb_alpha(alpha: float) -> tuple[float, float]:
    """(finite-m, large-m) lower bounds on the competitive ratio at Pareto shape alpha."""
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    scale = (alpha - 1.0) ** (1.0 / alpha)
    c = math.pi / alpha
    return c / math.sin(c) * scale, alpha / (alpha - 1.0) * scale


def walk_reach_prob(j: int, x):
    """Probability that a walk from 1, stepping down w.p. x and up otherwise, hits 0 within j steps."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if j < 0:
        raise ValueError("j must be >= 0")
    # Positions above j + 1 can never return within the remaining budget.
    dist = np.zeros(xs.shape + (j + 2,))
    dist[..., 1] = 1.0
    reached = np.zeros(xs.shape)
    down = xs[..., None]
    up = 1.0 - down
    for step in range(j):
        hi = min(step + 3, j + 2)
        cur = dist[..., :hi]
        new = np.zeros_like(cur)
        new[..., :-1] += cur[..., 1:] * down
        new[..., 1:] += cur[..., :-1] * up
        reached += new[..., 0]
        new[..., 0] = 0.0
        dist[..., :hi] = new
    return float(reached[0]) if np.ndim(x) == 0 else reached


def walk_limit(x):
    """min(1, x / (1 - x)), equal to 1 at x = 1."""
    xs = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(xs >= 0.5, 1.0, xs / (1.0 - xs))
    return float(out) if out.ndim == 0 else out


def gap_grid(points: int = 10_000) -> np.ndarray:
    """Grid on (0, 1]: log-spaced below 1/2, linear above."""
    half = max(points // 2, 2)
    low = np.logspace(-6, math.log10(0.5), half, endpoint=False)
    high = np.linspace(0.5, 1.0, points - half)
    return np.concatenate([low, high])


def walk_uniform_gap(j: int, grid: int = 10_000) -> float:
    """max over the grid of 1 - f_j(x) / f(x)."""
    if j < 1:
        raise ValueError("j must be >= 1")
    xs = gap_grid(grid)
    return float(np.max(1.0 - walk_reach_prob(j, xs) / walk_limit(xs)))
