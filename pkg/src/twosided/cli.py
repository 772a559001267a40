"""Command-line experiment harness.

Verbs::

    twosided loss sweep        bang-bang objective curves over an x grid (CSV)
    twosided loss bounds       bounds, static and threshold optima (JSON)
    twosided loss bruteforce   exhaustive min pi_0 on small chains (CSV)
    twosided queue sweep       simulator statistics over U and mu* (CSV)
    twosided queue run         a single simulator configuration (JSON)

Flags fill a config dict; ``--config FILE`` (one JSON object) is applied on
top, so its keys win. Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import ConfigInvalid, Infeasible, InfeasibleRate, ModelError, RequiresLinearModel
from .optimize import (
    bangbang_min_pi0,
    bangbang_curve,
    brute_force_min_pi0,
    competitive_cases,
    is_bangbang_shape,
    optimal_static_price,
    optimize_bangbang,
    universal_bounds,
)
from .pricing import PriceModel
from .queue import QueueConfig, SimReport, loglog_slope, merge_reports, simulate

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

LOSS_SWEEP_COLUMNS = ("row_type", "w", "x", "c", "c_rel")
BRUTEFORCE_COLUMNS = (
    "n_states", "cap", "status", "pi0", "mean_n", "is_bangbang", "profile", "threshold_pi0",
)
QUEUE_SWEEP_COLUMNS = (
    "row_type", "U", "mu_star", "delta", "outage_prob", "outage_ci", "mean_n", "mean_n_ci",
    "mean_w", "mean_w_ci", "frac_high", "frac_low", "tail_above_u", "profit_rate",
    "profit_ci", "jensen_bound", "loglog_slope", "n_points",
)


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    pass


# ---------------------------------------------------------------- configs


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Optional[str] = None
    seed: int = 0
    out: Optional[str] = None


class LossConfig(_Strict):
    alpha: float = 1.0
    beta: float = 3.5
    p_min: float = 1.0
    p_max: float = 2.0
    lam: float = 2.0
    theta: float = 1.0
    w: list[float] = [0.05, 0.1]
    x_max: float = 20.0
    x_step: float = 0.1
    gamma: Optional[float] = None

    @field_validator("w")
    @classmethod
    def _nonempty_w(cls, v):
        if not v:
            raise ValueError("need at least one w")
        return v

    def model_for(self, w: float) -> PriceModel:
        return PriceModel(self.alpha, self.beta, self.p_min, self.p_max, self.lam, w, self.theta)

    def grid(self) -> np.ndarray:
        if not (self.x_step > 0 and self.x_max >= 0):
            raise ValueError("x grid is empty: need x_step > 0 and x_max >= 0")
        n = int(math.floor(self.x_max / self.x_step + 1e-9)) + 1
        return np.round(np.arange(n) * self.x_step, 12)


class BruteForceConfig(_Strict):
    levels: list[float] = [0.5, 1.0, 1.5]
    n_states: list[int] = [2, 3, 4, 5]
    caps: list[float] = [0.6, 0.9, 1.2, 1.5, 1.8]

    @model_validator(mode="after")
    def _check(self):
        if len(self.levels) < 2 or min(self.levels) <= 0:
            raise ValueError("need at least two positive rho levels")
        if not self.n_states or min(self.n_states) < 2:
            raise ValueError("n_states entries must be >= 2")
        if not self.caps:
            raise ValueError("need at least one cap")
        return self


class QueueSweepConfig(_Strict):
    U: list[float] = [50, 100, 200, 400]
    mu_star: list[float] = [1.0, 2.0]
    gap: float = 0.1
    decay_exponent: float = 2.0
    sigma_c_sq: float = 2.0
    profit_fn: Literal["identity", "log1p"] = "identity"
    horizon: int = 10_000_000
    warmup: Optional[int] = None  # default 10% of horizon
    batches: int = 30
    replications: int = 1
    workers: int = 1

    @model_validator(mode="after")
    def _check(self):
        if not self.U or not self.mu_star:
            raise ValueError("U and mu_star lists must be non-empty")
        if self.horizon < 2 * self.batches or self.batches < 2:
            raise ValueError("horizon must cover at least two slots per batch")
        if self.replications < 1 or self.workers < 1:
            raise ValueError("replications and workers must be >= 1")
        return self

    def cells(self) -> list[QueueConfig]:
        return [
            QueueConfig.for_rates(
                mu, self.gap, u,
                decay_exponent=self.decay_exponent,
                sigma_c_sq=self.sigma_c_sq,
                profit_fn=self.profit_fn,
            )
            for mu in sorted(self.mu_star)
            for u in sorted(self.U)
        ]


CONFIGS = {
    ("loss", "sweep"): LossConfig,
    ("loss", "bounds"): LossConfig,
    ("loss", "bruteforce"): BruteForceConfig,
    ("queue", "sweep"): QueueSweepConfig,
    ("queue", "run"): QueueSweepConfig,
}


def load_config(group: str, verb: str, flags: dict, path: Optional[str]):
    data = {k: v for k, v in flags.items() if v is not None}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        data.update(doc)
    mode = data.get("mode")
    if mode is not None and mode != f"{group} {verb}":
        raise ConfigError(f"config mode {mode!r} does not match verb '{group} {verb}'")
    try:
        return CONFIGS[group, verb](**data)
    except ValidationError as exc:
        lines = [
            f"  {'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in exc.errors()
        ]
        raise ConfigError("invalid configuration:\n" + "\n".join(lines)) from exc


# ---------------------------------------------------------------- formatting


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if not math.isfinite(x):
        raise NumericalFailure(f"non-finite value {x}")
    return format(x, ".9g")


def write_csv(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(fmt(row.get(c)) for c in columns) + "\n")
    return buf.getvalue()


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return bool(obj) if isinstance(obj, np.bool_) else obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    x = float(obj)
    if not math.isfinite(x):
        raise NumericalFailure(f"non-finite value {x}")
    return float(format(x, ".9g"))


def write_json(doc) -> str:
    return json.dumps(_json_ready(doc), indent=2, sort_keys=False) + "\n"


# ---------------------------------------------------------------- loss verbs


def _price_model(cfg: LossConfig, w: float) -> PriceModel:
    try:
        return cfg.model_for(w)
    except ValueError as exc:
        raise ConfigError(f"invalid price model (w={w}): {exc}") from exc


def run_loss_sweep(cfg: LossConfig) -> str:
    if cfg.theta != 1.0:
        raise ConfigError("loss sweep requires theta = 1")
    try:
        xs = cfg.grid()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    for w in cfg.w:
        model = _price_model(cfg, w)
        c, c_rel = bangbang_curve(model, xs)
        rows += [{"row_type": "grid", "w": w, "x": x, "c": a, "c_rel": b}
                 for x, a, b in zip(xs, c, c_rel)]
        for name, curve in (("argmax_c", c), ("argmax_c_rel", c_rel)):
            k = int(np.argmax(curve))
            rows.append({"row_type": name, "w": w, "x": xs[k], "c": c[k], "c_rel": c_rel[k]})
    return write_csv(LOSS_SWEEP_COLUMNS, rows)


def _loss_bounds_entry(cfg: LossConfig, w: float) -> dict:
    model = _price_model(cfg, w)
    b = universal_bounds(model)
    entry = {
        "w": w,
        "bounds": {
            "g_inv_bound": b.g_inv_bound,
            "light_traffic_bound_boxed": b.light_traffic_bound_boxed,
            "light_traffic_bound_relaxed": b.light_traffic_bound_relaxed,
            "combined": b.combined,
            "boxed_argmax": b.boxed_argmax,
        },
    }
    numeric = optimal_static_price(model, numeric=True)
    static = {"price": numeric.price, "value": numeric.value,
              "closed_form_price": None, "closed_form_value": None}
    if model.is_linear:
        closed = optimal_static_price(model)
        static.update(price=closed.price, value=closed.value,
                      closed_form_price=closed.price, closed_form_value=closed.value)
    entry["static"] = static
    try:
        bb = optimize_bangbang(model)
        entry["bangbang"] = {"x": bb.x, "value_c_rel": bb.value, "x_c": bb.x_c, "value_c": bb.value_c}
    except RequiresLinearModel:
        entry["bangbang"] = None
    if cfg.gamma is not None:
        try:
            cr = competitive_cases(model, cfg.gamma)
            entry["competitive"] = {
                "regime": cr.regime, "gamma": cr.gamma, "payoff_lower": cr.payoff_lower,
                "reduction_ratio_estimate": cr.reduction_ratio_estimate,
                "target_rate": cr.target_rate, "price": cr.price, "holding_term": cr.holding_term,
            }
        except (InfeasibleRate, ValueError) as exc:
            entry["competitive"] = {"error": f"{type(exc).__name__}: {exc}"}
    return entry


def run_loss_bounds(cfg: LossConfig) -> str:
    return write_json({"results": [_loss_bounds_entry(cfg, w) for w in cfg.w]})


def run_loss_bruteforce(cfg: BruteForceConfig) -> str:
    lo, hi = min(cfg.levels), max(cfg.levels)
    rows = []
    for n in sorted(cfg.n_states):
        for cap in sorted(cfg.caps):
            row = {"n_states": n, "cap": cap}
            try:
                res = brute_force_min_pi0(n, cfg.levels, cap)
            except Infeasible:
                rows.append({**row, "status": "infeasible"})
                continue
            cont = bangbang_min_pi0(n, lo, hi, cap)
            rows.append({
                **row,
                "status": "ok",
                "pi0": res.pi0,
                "mean_n": res.mean_n,
                "is_bangbang": is_bangbang_shape(res.profile, lo, hi),
                "profile": ";".join(fmt(r) for r in res.profile),
                "threshold_pi0": cont.pi0,
            })
    return write_csv(BRUTEFORCE_COLUMNS, rows)


# ---------------------------------------------------------------- queue verbs


def _simulate_job(job):
    qcfg, horizon, warmup, seed, stream_id, batches = job
    return simulate(qcfg, horizon, warmup, seed=seed, stream_id=stream_id, n_batches=batches)


def _run_cells(cfg: QueueSweepConfig) -> list[SimReport]:
    try:
        cells = cfg.cells()
    except (ConfigInvalid, ValueError) as exc:
        raise ConfigError(f"invalid queue configuration: {exc}") from exc
    jobs = [
        (q, cfg.horizon, cfg.warmup, cfg.seed, k * cfg.replications + r, cfg.batches)
        for k, q in enumerate(cells)
        for r in range(cfg.replications)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(_simulate_job, jobs))
    else:
        reports = [_simulate_job(j) for j in jobs]
    per = cfg.replications
    return [merge_reports(reports[k * per:(k + 1) * per]) for k in range(len(cells))]


def _cell_row(rep: SimReport) -> dict:
    return {
        "row_type": "cell",
        "U": rep.U,
        "mu_star": rep.mu_star,
        "delta": rep.delta,
        "outage_prob": rep.outage_prob.overall_mean,
        "outage_ci": rep.outage_prob.ci_halfwidth,
        "mean_n": rep.mean_n.overall_mean,
        "mean_n_ci": rep.mean_n.ci_halfwidth,
        "mean_w": rep.mean_w.overall_mean,
        "mean_w_ci": rep.mean_w.ci_halfwidth,
        "frac_high": rep.frac_high.overall_mean,
        "frac_low": rep.frac_low.overall_mean,
        "tail_above_u": rep.tail_above_u.overall_mean,
        "profit_rate": rep.profit_rate.overall_mean,
        "profit_ci": rep.profit_rate.ci_halfwidth,
        "jensen_bound": rep.jensen_bound,
    }


def run_queue_sweep(cfg: QueueSweepConfig) -> str:
    reports = _run_cells(cfg)
    rows = []
    for mu in sorted(set(r.mu_star for r in reports)):
        group = [r for r in reports if r.mu_star == mu]
        rows += [_cell_row(r) for r in group]
        slope, n_points = loglog_slope([r.U for r in group],
                                       [r.outage_prob.overall_mean for r in group])
        rows.append({"row_type": "summary", "mu_star": mu,
                     "loglog_slope": slope, "n_points": n_points})
    return write_csv(QUEUE_SWEEP_COLUMNS, rows)


def run_queue_single(cfg: QueueSweepConfig) -> str:
    if len(cfg.U) != 1 or len(cfg.mu_star) != 1:
        raise ConfigError("queue run takes exactly one U and one mu_star")
    rep = _run_cells(cfg)[0]
    names = ("profit_rate", "outage_prob", "mean_n", "mean_w", "frac_high", "frac_low",
             "tail_above_u", "mean_q_c", "match_rate")
    doc = {
        "U": rep.U, "lam": rep.lam, "mu_star": rep.mu_star, "delta": rep.delta,
        "p_eff": rep.p_eff, "jensen_bound": rep.jensen_bound,
        "horizon": rep.horizon, "warmup": rep.warmup, "seed": rep.seed,
        "replications": cfg.replications,
        "conservation_error": rep.conservation_error,
        "metrics": {
            n: {"mean": getattr(rep, n).overall_mean, "ci_halfwidth": getattr(rep, n).ci_halfwidth}
            for n in names
        },
    }
    return write_json(doc)


RUNNERS = {
    ("loss", "sweep"): run_loss_sweep,
    ("loss", "bounds"): run_loss_bounds,
    ("loss", "bruteforce"): run_loss_bruteforce,
    ("queue", "sweep"): run_queue_sweep,
    ("queue", "run"): run_queue_single,
}


# ---------------------------------------------------------------- argument parsing


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; its keys override flags")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output file (default stdout)")


def _loss_flags(p: argparse.ArgumentParser):
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--p-min", dest="p_min", type=float)
    p.add_argument("--p-max", dest="p_max", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--w", type=float, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twosided", description=__doc__.split("\n")[0])
    groups = parser.add_subparsers(dest="group", required=True)

    loss = groups.add_parser("loss", help="loss-model experiments")
    lverbs = loss.add_subparsers(dest="verb", required=True)
    sweep = lverbs.add_parser("sweep", help="C and C_rel over the bang-bang x grid")
    _loss_flags(sweep)
    sweep.add_argument("--x-max", dest="x_max", type=float)
    sweep.add_argument("--x-step", dest="x_step", type=float)
    bounds = lverbs.add_parser("bounds", help="universal bounds and optima as JSON")
    _loss_flags(bounds)
    bounds.add_argument("--gamma", type=float)
    brute = lverbs.add_parser("bruteforce", help="exhaustive min pi_0 over small chains")
    brute.add_argument("--levels", type=float, nargs="+")
    brute.add_argument("--n-states", dest="n_states", type=int, nargs="+")
    brute.add_argument("--caps", type=float, nargs="+")

    queue = groups.add_parser("queue", help="matching-queue simulations")
    qverbs = queue.add_subparsers(dest="verb", required=True)
    for name, text in (("sweep", "statistics over U and mu*"), ("run", "one configuration")):
        q = qverbs.add_parser(name, help=text)
        q.add_argument("--U", type=float, nargs="+")
        q.add_argument("--mu-star", dest="mu_star", type=float, nargs="+")
        q.add_argument("--gap", type=float)
        q.add_argument("--decay-exponent", dest="decay_exponent", type=float)
        q.add_argument("--sigma-c-sq", dest="sigma_c_sq", type=float)
        q.add_argument("--profit-fn", dest="profit_fn", choices=["identity", "log1p"])
        q.add_argument("--horizon", type=int)
        q.add_argument("--warmup", type=int)
        q.add_argument("--batches", type=int)
        q.add_argument("--replications", type=int)
        q.add_argument("--workers", type=int)

    for sub in (sweep, bounds, brute, *qverbs.choices.values()):
        _common(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("group", "verb", "config")}
    try:
        cfg = load_config(args.group, args.verb, flags, args.config)
        text = RUNNERS[args.group, args.verb](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, ModelError, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
