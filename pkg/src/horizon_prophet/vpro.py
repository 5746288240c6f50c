"""Competing with a benchmark that sees values but not horizons.

An LP over assignment probabilities y[i, v, h] (buyer h has value v and is
given item i, conditioned on item i still being present at h) upper bounds
that benchmark. Two online policies round an LP solution: one asks each buyer
for its value, the other only posts prices. A brute-force dynamic program
gives the best non-anticipating policy on tiny instances.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    REJECT_ALL,
    DiscreteValues,
    ExplicitPmf,
    HorizonDistribution,
    PerStepValues,
    ThresholdRule,
    truncate,
)
from .policies import Policy, StepDecision
from .prophet import Instance
from .rng import Stream

MAX_COLUMNS = 10_000
PIVOT_FLOOR = 1e-12
FEAS_TOL = 1e-9


class LpSizeError(ValueError):
    pass


class LpNumericalError(RuntimeError):
    pass


class NegativeIncrementError(ValueError):
    """A pricing increment is negative: the solution ignores the monotone rows."""


class StateSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class FiniteInstance:
    """m items with finite horizons and n buyers with finitely supported values."""

    horizons: tuple
    step_values: tuple

    def __post_init__(self):
        steps = tuple(self.step_values)
        if not steps:
            raise ValueError("need at least one buyer")
        if not all(isinstance(v, DiscreteValues) for v in steps):
            raise TypeError("per-step values must be DiscreteValues")
        n = len(steps)
        hs = []
        for h in self.horizons:
            if not isinstance(h, HorizonDistribution):
                raise TypeError("horizons must be HorizonDistribution objects")
            top = h.support_max
            hs.append(h if top is not None and top <= n else truncate(h, n))
        if not hs:
            raise ValueError("need at least one item")
        object.__setattr__(self, "horizons", tuple(hs))
        object.__setattr__(self, "step_values", steps)

    @property
    def m(self) -> int:
        return len(self.horizons)

    @property
    def n(self) -> int:
        return len(self.step_values)

    def survival(self, i: int, h: int) -> float:
        """Pr[Z_i >= h]."""
        return float(self.horizons[i].survival(np.array([h]))[0])

    def to_instance(self) -> Instance:
        return Instance(self.horizons, PerStepValues(self.step_values), time_cap=self.n)


def random_finite_instance(rng: np.random.Generator, max_m: int = 3, max_n: int = 5,
                           max_atoms: int = 3, max_value: int = 10) -> FiniteInstance:
    m = int(rng.integers(1, max_m + 1))
    n = int(rng.integers(1, max_n + 1))
    horizons = []
    for _ in range(m):
        probs = rng.dirichlet(np.ones(n))
        horizons.append(ExplicitPmf(tuple((t + 1, float(p)) for t, p in enumerate(probs) if p > 0)))
    steps = []
    for _ in range(n):
        k = int(rng.integers(1, max_atoms + 1))
        vals = rng.choice(np.arange(0, max_value + 1), size=k, replace=False)
        probs = rng.dirichlet(np.ones(k))
        steps.append(DiscreteValues(tuple(zip(vals.tolist(), probs.tolist()))))
    return FiniteInstance(tuple(horizons), tuple(steps))


# --------------------------------------------------------------------------
# LP
# --------------------------------------------------------------------------


@dataclass
class VproLp:
    columns: list                 # (item, atom value, step)
    objective: np.ndarray
    matrix: np.ndarray            # rows of A in A y <= b
    rhs: np.ndarray
    row_names: list
    monotone: bool = False
    index: dict = field(default_factory=dict)

    def to_lp_format(self) -> str:
        """CPLEX LP text, for cross-checking with an external solver."""
        names = [f"y_{i}_{k}_{h}" for k, (i, _, h) in enumerate(self.columns)]

        def expr(coefs):
            terms = [f"{c:+.17g} {nm}" for c, nm in zip(coefs, names) if c != 0]
            return " ".join(terms) if terms else "0 " + (names[0] if names else "")

        lines = ["Maximize", f" obj: {expr(self.objective)}", "Subject To"]
        for name, row, b in zip(self.row_names, self.matrix, self.rhs):
            lines.append(f" {name}: {expr(row)} <= {b:.17g}")
        lines += ["Bounds"] + [f" {nm} >= 0" for nm in names] + ["End"]
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    y: np.ndarray
    objective: float
    status: str
    lp: VproLp | None = None
    _tables: dict = field(default_factory=dict, repr=False)

    def value(self, i: int, v: float, h: int) -> float:
        k = self.lp.index.get((i, v, h)) if self.lp else None
        return 0.0 if k is None else float(self.y[k])


def build_vpro_lp(fi: FiniteInstance, monotone: bool = False) -> VproLp:
    columns = []
    obj = []
    for i in range(fi.m):
        for h in range(1, fi.n + 1):
            s = fi.survival(i, h)
            if s <= 0:
                continue
            vd = fi.step_values[h - 1]
            for v in vd.values.tolist():
                columns.append((i, v, h))
                obj.append(s * v)
    if len(columns) > MAX_COLUMNS:
        raise LpSizeError(f"{len(columns)} columns exceed the limit {MAX_COLUMNS}")
    index = {c: k for k, c in enumerate(columns)}
    n_col = len(columns)
    rows, rhs, names = [], [], []

    def new_row():
        return np.zeros(n_col)

    for h in range(1, fi.n + 1):
        vd = fi.step_values[h - 1]
        for a, (v, p) in enumerate(zip(vd.values.tolist(), vd.probs.tolist())):
            row = new_row()
            for i in range(fi.m):
                k = index.get((i, v, h))
                if k is not None:
                    row[k] = fi.survival(i, h)
            if row.any():
                rows.append(row); rhs.append(p); names.append(f"cap_h{h}_a{a}")
    for i in range(fi.m):
        row = new_row()
        for (j, _, _), k in index.items():
            if j == i:
                row[k] = 1.0
        if row.any():
            rows.append(row); rhs.append(1.0); names.append(f"item_{i}")
    for (i, v, h), k in index.items():
        row = new_row()
        row[k] = 1.0
        p = float(fi.step_values[h - 1].probs[fi.step_values[h - 1].values.tolist().index(v)])
        rows.append(row); rhs.append(p); names.append(f"ub_{i}_{k}")
    if monotone:
        for i in range(fi.m):
            for h in range(1, fi.n + 1):
                vd = fi.step_values[h - 1]
                vals, probs = vd.values.tolist(), vd.probs.tolist()
                for a in range(len(vals) - 1):
                    lo, hi = index.get((i, vals[a], h)), index.get((i, vals[a + 1], h))
                    if lo is None or hi is None:
                        continue
                    row = new_row()
                    row[lo] = 1.0 / probs[a]
                    row[hi] = -1.0 / probs[a + 1]
                    rows.append(row); rhs.append(0.0); names.append(f"mono_{i}_h{h}_a{a}")
    matrix = np.array(rows).reshape(len(rows), n_col)
    return VproLp(columns, np.array(obj), matrix, np.array(rhs, dtype=float), names, monotone, index)


def simplex_max(c: np.ndarray, A: np.ndarray, b: np.ndarray, max_iter: int = 50_000) -> tuple[np.ndarray, float]:
    """max c.x subject to A x <= b, x >= 0, with b >= 0.

    Dense tableau, slack starting basis, Bland's rule for both entering and
    leaving choices.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    rows, cols = A.shape
    if np.any(b < 0):
        raise ValueError("right-hand sides must be nonnegative")
    tab = np.zeros((rows + 1, cols + rows + 1))
    tab[:rows, :cols] = A
    tab[:rows, cols:cols + rows] = np.eye(rows)
    tab[:rows, -1] = b
    tab[-1, :cols] = -c
    basis = list(range(cols, cols + rows))
    for _ in range(max_iter):
        reduced = tab[-1, :-1]
        entering = np.flatnonzero(reduced < -PIVOT_FLOOR)
        if entering.size == 0:
            break
        e = int(entering[0])
        col = tab[:rows, e]
        ok = np.flatnonzero(col > PIVOT_FLOOR)
        if ok.size == 0:
            raise LpNumericalError("LP is unbounded")
        ratios = tab[ok, -1] / col[ok]
        best = ratios.min()
        ties = ok[ratios <= best + PIVOT_FLOOR * max(1.0, abs(best))]
        r = int(min(ties, key=lambda q: basis[q]))
        tab[r] /= tab[r, e]
        for q in range(rows + 1):
            if q != r and tab[q, e] != 0.0:
                tab[q] -= tab[q, e] * tab[r]
        basis[r] = e
    else:
        raise LpNumericalError("simplex iteration limit reached")
    x = np.zeros(cols + rows)
    for r, j in enumerate(basis):
        x[j] = tab[r, -1]
    x = x[:cols]
    return x, float(c @ x)


def solve_lp(lp: VproLp) -> LpSolution:
    if not lp.columns:
        return LpSolution(np.zeros(0), 0.0, "optimal", lp)
    y, obj = simplex_max(lp.objective, lp.matrix, lp.rhs)
    y = np.where(np.abs(y) < PIVOT_FLOOR, 0.0, y)
    check_feasible(lp, y)
    return LpSolution(y, float(lp.objective @ y), "optimal", lp)


def check_feasible(lp: VproLp, y: np.ndarray, tol: float = FEAS_TOL) -> None:
    if np.any(y < -tol):
        raise LpNumericalError("negative variable in solution")
    if lp.matrix.size and np.any(lp.matrix @ y - lp.rhs > tol):
        raise LpNumericalError("solution violates a constraint")


# --------------------------------------------------------------------------
# Exact optimal non-anticipating policy
# --------------------------------------------------------------------------


def exact_optimal_policy_value(fi: FiniteInstance) -> float:
    """Backward induction over (step, set of present unsold items)."""
    if fi.m > 3 or fi.n > 5 or any(v.values.size > 3 for v in fi.step_values):
        raise StateSpaceError("exact DP limited to m <= 3, n <= 5, 3 atoms per step")
    m, n = fi.m, fi.n
    # cont[i][t]: Pr[Z_i >= t + 1 | Z_i >= t]
    cont = [[0.0] * (n + 2) for _ in range(m)]
    for i in range(m):
        for t in range(1, n + 1):
            s, s1 = fi.survival(i, t), fi.survival(i, t + 1)
            cont[i][t] = s1 / s if s > 0 else 0.0
    subsets = [frozenset(c) for r in range(m + 1) for c in itertools.combinations(range(m), r)]
    nxt = {s: 0.0 for s in subsets}  # value at step n + 1
    for t in range(n, 0, -1):
        carry = {}
        for s in subsets:
            total = 0.0
            for keep in itertools.product((False, True), repeat=len(s)):
                prob = 1.0
                alive = []
                for i, k in zip(sorted(s), keep):
                    prob *= cont[i][t] if k else 1.0 - cont[i][t]
                    if k:
                        alive.append(i)
                if prob > 0:
                    total += prob * nxt[frozenset(alive)]
            carry[s] = total
        vd = fi.step_values[t - 1]
        cur = {}
        for s in subsets:
            val = 0.0
            for v, p in zip(vd.values.tolist(), vd.probs.tolist()):
                best = carry[s]
                for i in s:
                    best = max(best, v + carry[s - {i}])
                val += p * best
            cur[s] = val
        nxt = cur
    start = frozenset(i for i in range(m) if fi.survival(i, 1) > 0)
    return nxt[start]


# --------------------------------------------------------------------------
# Policies rounding an LP solution
# --------------------------------------------------------------------------


def _scaled(sol: LpSolution, fi: FiniteInstance) -> dict:
    """h -> (items x atoms) array of y[i, v, h] / (2 Pr[X_h = v]); cached on the solution."""
    key = ("scaled", id(fi))
    if key not in sol._tables:
        out = {}
        for h in range(1, fi.n + 1):
            vd = fi.step_values[h - 1]
            out[h] = np.array([[sol.value(i, v, h) / (2.0 * p) for v, p in zip(vd.values.tolist(), vd.probs.tolist())]
                               for i in range(fi.m)]).reshape(fi.m, vd.values.size)
        sol._tables[key] = (fi, out)
    return sol._tables[key][1]


def assignment_audit(sol: LpSolution, fi: FiniteInstance) -> tuple[float, float]:
    """(largest expected |S_hv| among present items, largest expected assignments per item); both <= 1/2."""
    per_set = 0.0
    for h in range(1, fi.n + 1):
        vd = fi.step_values[h - 1]
        for v in vd.values.tolist():
            per_set = max(per_set, sum(sol.value(i, v, h) * fi.survival(i, h) for i in range(fi.m))
                          / (2.0 * float(vd.probs[vd.values.tolist().index(v)])))
    per_item = max(float(sol.y[[k for k, c in enumerate(sol.lp.columns) if c[0] == i]].sum()) / 2.0
                   if sol.lp.columns else 0.0 for i in range(fi.m))
    return per_set, per_item


class AssignmentPolicy(Policy):
    """Each buyer announces its value; items join a random set independently and the
    first present item of the set (by index) is assigned."""

    value_revealing = True

    def __init__(self, sol: LpSolution, fi: FiniteInstance, rng: Stream):
        super().__init__()
        self.fi = fi
        self.rng = rng
        self.scaled = _scaled(sol, fi)
        self.lookup = [dict(zip(vd.values.tolist(), range(vd.values.size))) for vd in fi.step_values]

    def offer(self, step: int, state, value: float) -> int | None:
        u = self.rng.uniforms(self.fi.m)
        a = self.lookup[step - 1].get(value)
        if a is None:
            return None
        member = u < self.scaled[step][:, a]
        for i in np.flatnonzero(member).tolist():
            if state.available[i]:
                return i
        return None


def vpro_assignment_policy(sol: LpSolution, fi: FiniteInstance, rng: Stream | None = None) -> AssignmentPolicy:
    return AssignmentPolicy(sol, fi, rng or Stream(0))


class TruthfulPricing(Policy):
    """Price-posting version: item i lands in the cumulative set for atom j with
    probability y[i, v_j, h] / (2 Pr[X_h = v_j]); the price is the smallest atom
    whose set holds a present item."""

    def __init__(self, sol: LpSolution, fi: FiniteInstance, rng: Stream):
        super().__init__()
        self.fi = fi
        self.rng = rng
        self.cumulative = {}
        for h, cum in _scaled(sol, fi).items():
            inc = np.diff(cum, axis=1)
            if inc.size and inc.min() < -1e-12:
                raise NegativeIncrementError(f"step {h}: smallest increment {inc.min():.3g}")
            # increments within -1e-12 of zero are clamped
            self.cumulative[h] = np.maximum.accumulate(cum, axis=1)
        self.candidate = None

    def post(self, step, state):
        u = self.rng.uniforms(self.fi.m)
        cum = self.cumulative[step]
        vals = self.fi.step_values[step - 1].values
        best_j, best_i = None, None
        for i in range(self.fi.m):
            if not state.available[i]:
                continue
            js = np.flatnonzero(u[i] < cum[i])
            if js.size and (best_j is None or js[0] < best_j):
                best_j, best_i = int(js[0]), i
        self.candidate = best_i
        if best_i is None:
            return StepDecision(REJECT_ALL, until=step)
        return StepDecision(ThresholdRule(float(vals[best_j]), 1.0, 0.0), until=step)

    def select(self, step, state):
        return self.candidate


def truthful_pricing_policy(sol: LpSolution, fi: FiniteInstance, rng: Stream | None = None) -> TruthfulPricing:
    return TruthfulPricing(sol, fi, rng or Stream(0))


@dataclass
class VproCheck:
    lp: float
    lp_monotone: float
    exact: float
    assignment: float
    assignment_stderr: float
    truthful: float
    truthful_stderr: float
    audit_set: float
    audit_item: float
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def verify_instance(fi: FiniteInstance, trials: int, seed: int, threads: int | None = None) -> VproCheck:
    """Solve both LPs, run both policies and compare everything with the exact optimum."""
    from .simulator import monte_carlo

    plain = solve_lp(build_vpro_lp(fi))
    mono = solve_lp(build_vpro_lp(fi, monotone=True))
    exact = exact_optimal_policy_value(fi)
    inst = fi.to_instance()
    zero = lambda r: 0.0  # noqa: E731  the prophet is not needed here
    a = monte_carlo(inst, lambda i, g: vpro_assignment_policy(plain, fi, g), trials, seed,
                    threads=threads, prophet=zero).alg
    t = monte_carlo(inst, lambda i, g: truthful_pricing_policy(mono, fi, g), trials, seed,
                    threads=threads, prophet=zero).alg
    audit_set, audit_item = assignment_audit(plain, fi)
    checks = {
        "lp_above_exact": plain.objective >= exact - FEAS_TOL,
        "exact_above_assignment": exact >= a.mean - 3 * a.stderr,
        "exact_above_truthful": exact >= t.mean - 3 * t.stderr,
        "assignment_eighth_of_lp": a.mean >= plain.objective / 8 - 3 * a.stderr,
        "monotone_between": exact - FEAS_TOL <= mono.objective <= plain.objective + FEAS_TOL,
        "truthful_eighth_of_monotone": t.mean >= mono.objective / 8 - 3 * t.stderr,
        "audit_half": audit_set <= 0.5 + FEAS_TOL and audit_item <= 0.5 + FEAS_TOL,
    }
    return VproCheck(plain.objective, mono.objective, exact, a.mean, a.stderr, t.mean, t.stderr,
                     audit_set, audit_item, checks)
