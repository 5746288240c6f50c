"""Command-line experiment runner.

Every experiment writes one table with the columns in ``COLUMNS``. The exit
code is 0 when every bound check passes, 2 when some check fails and 1 on a
configuration or runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from . import bounds, lowerbounds, vpro
from .distributions import (
    Deterministic,
    Geometric,
    Pareto,
    TruncatedGeometric,
    UniformRange,
    is_mhr,
    point_mass,
    sosd_vs_geometric,
    uniform_values,
)
from .policies import make_factory
from .prophet import Instance
from .simulator import monte_carlo
from .stages import build_stage_plan

log = logging.getLogger("horizon_prophet")

EXPERIMENTS = (
    "single-mhr",
    "multi-mhr",
    "geometric-lb",
    "fixed-price-gap",
    "general-horizon-gap",
    "vpro-verify",
    "walk-table",
    "ratio-curve",
    "sosd-check",
    "stage-plan",
)

COLUMNS = (
    "experiment",
    "label",
    "params",
    "seed",
    "trials",
    "value",
    "stderr",
    "alg",
    "alg_stderr",
    "pro",
    "pro_stderr",
    "ratio",
    "ratio_stderr",
    "bound",
    "pass",
)

OUT_ENV = "HORIZON_PROPHET_OUT"
EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2
# The final multi-item guarantee: welfare >= stage bound / this constant.
MULTI_ITEM_FACTOR = 52.5


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = ""
    horizon: str = "geometric"
    mean: list = field(default_factory=lambda: [2.0])
    cap: int | None = None
    m: list = field(default_factory=lambda: [1])
    values: str = "uniform:1:4"
    policy: str = "single_fixed"
    trials: int = 10_000
    seed: int = 0
    ratio: float = 0.5
    lam: float = 1e-4
    alpha: list = field(default_factory=lambda: [2.0])
    c: list = field(default_factory=lambda: [2, 3])
    j: list = field(default_factory=lambda: [1, 2, 3])
    x: list = field(default_factory=lambda: [0.5])
    c_max: int = 200
    instances: int = 50
    threads: int | None = None
    format: str = "csv"
    out: str | None = None
    verbose: bool = False

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.trials < 2:
            raise ConfigError("trials must be >= 2")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.seed is None:
            raise ConfigError("a seed is required")
        if not 0 < self.ratio < 1:
            raise ConfigError("ratio must lie in (0, 1)")

    def params(self) -> dict:
        """Parameters that shape results; output location and thread count do not."""
        d = asdict(self)
        for k in ("out", "format", "threads", "verbose", "seed", "trials"):
            d.pop(k)
        return d


LIST_KEYS = {"mean": float, "m": int, "alpha": float, "c": int, "j": int, "x": float}


def _coerce(key: str, value):
    if key in LIST_KEYS:
        kind = LIST_KEYS[key]
        items = value.split(",") if isinstance(value, str) else value if isinstance(value, list) else [value]
        try:
            return [kind(v) for v in items]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return data


def merge_config(file_values: dict, flags: dict) -> ExperimentConfig:
    merged = dict(file_values)
    merged.update({k: v for k, v in flags.items() if v is not None})
    cfg = ExperimentConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# Instance parsing
# --------------------------------------------------------------------------


def parse_values(spec: str):
    """uniform:LO:HI, point:V or pareto:ALPHA[:CAP]."""
    kind, *args = spec.split(":")
    try:
        if kind == "uniform" and len(args) == 2:
            return uniform_values(int(args[0]), int(args[1]))
        if kind == "point" and len(args) == 1:
            return point_mass(float(args[0]))
        if kind == "pareto" and len(args) in (1, 2):
            return Pareto(float(args[0]), float(args[1])) if len(args) == 2 else Pareto(float(args[0]))
    except ValueError as exc:
        raise ConfigError(f"bad value distribution {spec!r}: {exc}") from exc
    raise ConfigError(f"bad value distribution {spec!r}")


def make_horizon(kind: str, mean: float, cap: int | None = None):
    """A horizon distribution of the named family with the given mean."""
    if kind == "geometric":
        return Geometric(mean)
    if kind == "deterministic":
        if mean != int(mean):
            raise ConfigError("deterministic horizon needs an integer mean")
        return Deterministic(int(mean))
    if kind == "uniform":
        # Uniform on 1..2*mean-1 has the requested mean.
        hi = 2 * mean - 1
        if hi != int(hi):
            raise ConfigError("uniform horizon needs 2*mean - 1 to be an integer")
        return UniformRange(1, int(hi))
    if kind == "truncated_geometric":
        return TruncatedGeometric.with_mean(mean, int(cap or 4 * math.ceil(mean)))
    raise ConfigError(f"unknown horizon family {kind!r}")


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------


def _row(cfg: ExperimentConfig, label: str, **kw) -> dict:
    row = dict.fromkeys(COLUMNS)
    row.update(experiment=cfg.experiment, label=label, seed=cfg.seed, trials=cfg.trials)
    row.update(kw)
    row["params"] = json.dumps(row.get("params") or cfg.params(), sort_keys=True)
    row["pass"] = None if row["pass"] is None else bool(row["pass"])
    return row


def _mc_fields(res) -> dict:
    return {
        "alg": res.alg.mean, "alg_stderr": res.alg.stderr,
        "pro": res.pro.mean, "pro_stderr": res.pro.stderr,
        "ratio": res.ratio, "ratio_stderr": res.ratio_stderr,
    }


def exp_single_mhr(cfg):
    rows = []
    v = parse_values(cfg.values)
    for mean in cfg.mean:
        d = make_horizon(cfg.horizon, mean, cfg.cap)
        inst = Instance((d,), v)
        res = monte_carlo(inst, make_factory("single_fixed", inst), cfg.trials, cfg.seed, threads=cfg.threads)
        bound = bounds.single_mhr_ratio(d)
        rows.append(_row(cfg, f"{cfg.horizon} mean={mean:g}", value=res.ratio, stderr=res.ratio_stderr,
                         bound=bound, **_mc_fields(res), **{"pass": res.ratio <= bound + 3 * res.ratio_stderr}))
    return rows


def exp_multi_mhr(cfg):
    rows = []
    v = parse_values(cfg.values)
    for mean in cfg.mean:
        for m in cfg.m:
            inst = Instance.iid(m, make_horizon(cfg.horizon, mean, cfg.cap), v)
            plan = build_stage_plan(inst, cfg.ratio)
            target = bounds.stage_bound(inst, plan).total / MULTI_ITEM_FACTOR
            res = monte_carlo(inst, make_factory(cfg.policy if cfg.policy != "single_fixed" else "multiple_mhr",
                                                 inst, plan), cfg.trials, cfg.seed, threads=cfg.threads)
            rows.append(_row(cfg, f"m={m} mean={mean:g}", value=res.alg.mean, stderr=res.alg.stderr,
                             bound=target, **_mc_fields(res),
                             **{"pass": res.alg.mean >= target - 3 * res.alg.stderr}))
    return rows


def _report_rows(cfg, rep, label, bound):
    mc = rep.monte_carlo
    return _row(cfg, label, params={**rep.params, "analytic": rep.analytic}, value=rep.gap, stderr=rep.gap_stderr,
                pro=mc.get("pro"), pro_stderr=mc.get("pro_stderr"), ratio=rep.gap, ratio_stderr=rep.gap_stderr,
                bound=bound, **{"pass": rep.passed})


def exp_geometric_lb(cfg):
    rows = []
    for alpha in cfg.alpha:
        for m in cfg.m:
            rep = lowerbounds.eval_low_rate_geometric(m, cfg.lam, alpha, cfg.trials, cfg.seed)
            finite, large = bounds.ratio_lb_alpha(alpha)
            rows.append(_report_rows(cfg, rep, f"m={m} alpha={alpha:g}", finite if m == 1 else large))
    return rows


def exp_fixed_price_gap(cfg):
    rows, gaps = [], []
    for m in cfg.m:
        rep = lowerbounds.eval_loglog(m, cfg.trials, cfg.seed)
        gaps.append(rep.gap)
        row = _report_rows(cfg, rep, f"m={m}", None)
        row["alg"] = rep.monte_carlo["best_fixed"]
        rows.append(row)
    rows.append(_row(cfg, "trend", value=None, **{"pass": all(b > a for a, b in zip(gaps, gaps[1:]))}))
    return rows


def exp_general_horizon_gap(cfg):
    rows = []
    for c in cfg.c:
        rep = lowerbounds.eval_general_horizon(c, cfg.trials, cfg.seed)
        row = _report_rows(cfg, rep, f"c={c}", rep.analytic["vpro_upper_sum"])
        row["alg"], row["alg_stderr"] = rep.monte_carlo["vpro"], rep.monte_carlo["vpro_stderr"]
        rows.append(row)
    return rows


def exp_vpro_verify(cfg):
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in range(cfg.instances):
        fi = vpro.random_finite_instance(rng)
        chk = vpro.verify_instance(fi, cfg.trials, cfg.seed + k, cfg.threads)
        params = {"instance": k, "m": fi.m, "n": fi.n, "lp": chk.lp, "lp_monotone": chk.lp_monotone,
                  "exact": chk.exact, "truthful": chk.truthful, "truthful_stderr": chk.truthful_stderr,
                  "failed": sorted(n for n, ok in chk.checks.items() if not ok)}
        rows.append(_row(cfg, f"instance {k}", params=params, value=chk.exact, alg=chk.assignment,
                         alg_stderr=chk.assignment_stderr, bound=chk.lp, **{"pass": chk.passed}))
    return rows


def exp_walk_table(cfg):
    rows = []
    for j in cfg.j:
        for x in cfg.x:
            f = bounds.walk_reach_prob(j, x)
            lim = bounds.walk_limit(x)
            rows.append(_row(cfg, f"j={j} x={x:g}", value=f, bound=lim, **{"pass": f <= lim + 1e-12}))
    return rows


def exp_ratio_curve(cfg):
    rows = []
    for alpha in cfg.alpha:
        finite, large = bounds.ratio_lb_alpha(alpha)
        rows.append(_row(cfg, f"alpha={alpha:g} finite_m", value=finite, bound=large, **{"pass": finite <= large}))
        rows.append(_row(cfg, f"alpha={alpha:g} large_m", value=large))
    return rows


def exp_sosd_check(cfg):
    rows = []
    for mean in cfg.mean:
        d = make_horizon(cfg.horizon, mean, cfg.cap)
        rep = sosd_vs_geometric(d, cfg.c_max)
        mhr = is_mhr(d)
        rows.append(_row(cfg, f"{cfg.horizon} mean={mean:g}", value=rep.max_excess,
                         params={**cfg.params(), "mhr": mhr, "first_violation": rep.first_violation},
                         **{"pass": rep.holds or not mhr}))
    return rows


def exp_stage_plan(cfg):
    rows = []
    v = parse_values(cfg.values)
    for mean in cfg.mean:
        for m in cfg.m:
            inst = Instance.iid(m, make_horizon(cfg.horizon, mean, cfg.cap), v)
            plan = build_stage_plan(inst, cfg.ratio)
            per_stage = bounds.pro_stage_upper(plan, v)
            for k in range(1, plan.s + 1):
                start, end = plan.bounds[k - 1]
                rows.append(_row(cfg, f"m={m} mean={mean:g} stage={k} {plan.kinds[k - 1]} [{start},{end})",
                                 value=plan.length(k), bound=per_stage[k - 1]))
            rows.append(_row(cfg, f"m={m} mean={mean:g} final [{plan.final_start},inf)",
                             bound=bounds.pro_final_upper(inst, plan)))
    return rows


RUNNERS = {
    "single-mhr": exp_single_mhr,
    "multi-mhr": exp_multi_mhr,
    "geometric-lb": exp_geometric_lb,
    "fixed-price-gap": exp_fixed_price_gap,
    "general-horizon-gap": exp_general_horizon_gap,
    "vpro-verify": exp_vpro_verify,
    "walk-table": exp_walk_table,
    "ratio-curve": exp_ratio_curve,
    "sosd-check": exp_sosd_check,
    "stage-plan": exp_stage_plan,
}


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def render(rows: list, fmt: str) -> str:
    if fmt == "json":
        clean = [{k: (float(r[k]) if isinstance(r[k], np.floating) else r[k]) for k in COLUMNS} for r in rows]
        return json.dumps(clean, indent=2, allow_nan=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_cell(r[k]) for k in COLUMNS])
    return buf.getvalue()


def output_path(cfg: ExperimentConfig) -> str | None:
    if cfg.out:
        return cfg.out
    folder = os.environ.get(OUT_ENV)
    if folder:
        return os.path.join(folder, f"{cfg.experiment}.{cfg.format}")
    return None


def run(cfg: ExperimentConfig) -> int:
    rows = RUNNERS[cfg.experiment](cfg)
    text = render(rows, cfg.format)
    path = output_path(cfg)
    if path:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        log.info("wrote %d rows to %s", len(rows), path)
    else:
        sys.stdout.write(text)
    failed = [r["label"] for r in rows if r["pass"] is False]
    if failed:
        log.warning("bound check failed: %s", "; ".join(failed))
        return EXIT_FAILED
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="horizon-prophet", description="Run a named experiment and write one result table.")
    p.add_argument("experiment", nargs="?", choices=EXPERIMENTS, help="experiment name (or set it in --config)")
    p.add_argument("--config", help="YAML file whose keys mirror the long flags (underscores for dashes)")
    p.add_argument("--horizon", choices=("geometric", "deterministic", "uniform", "truncated_geometric"))
    p.add_argument("--mean", help="mean horizon, comma-separated list allowed")
    p.add_argument("--cap", type=int, help="cap for truncated_geometric horizons")
    p.add_argument("--m", help="number of items, comma-separated list allowed")
    p.add_argument("--values", help="uniform:LO:HI, point:V or pareto:ALPHA[:CAP]")
    p.add_argument("--policy", help="policy for multi-mhr (default multiple_mhr)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ratio", type=float, help="stage split ratio")
    p.add_argument("--lam", type=float, help="departure rate for geometric-lb")
    p.add_argument("--alpha", help="Pareto shape(s)")
    p.add_argument("--c", help="general-horizon size parameter(s)")
    p.add_argument("--j", help="walk step budget(s)")
    p.add_argument("--x", help="walk step-down probability(ies)")
    p.add_argument("--c-max", dest="c_max", type=int)
    p.add_argument("--instances", type=int, help="random instances for vpro-verify")
    p.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--out", help=f"output file (default: ${OUT_ENV}/<experiment>.<format>, else stdout)")
    p.add_argument("--verbose", action="store_true", default=None)
    return p


def main(argv: list | None = None) -> int:
    try:
        args = vars(build_parser().parse_args(argv))
        file_values = load_config(args.pop("config")) if args.get("config") else {}
        args.pop("config", None)
        cfg = merge_config(file_values, args)
    except ConfigError as exc:
        print(f"horizon-prophet: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.INFO if cfg.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(cfg)
    except Exception as exc:  # noqa: BLE001  any failure maps to exit code 1
        log.error("%s: %s", type(exc).__name__, exc)
        if cfg.verbose:
            raise
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
