"""Seeded comparison sweeps between futures and on-site trading.

Four experiments, each returning an :class:`ExperimentResult`:

``failure_curve``      trading-failure probability versus local-user mean
``profit_comparison``  owner profit versus local-user mean
``price_series``       per-episode trading price at the configured environment
``fairness_curve``     trading fairness versus on-site requester mean

Randomness: on-site episode ``e`` of sweep point ``i`` draws from the stream
``(seed, i, e, 0)``; the futures side of point ``i`` draws a block from
``(seed, i, 0, 1)``. Points are computed independently, so running them in a
process pool yields byte-identical output.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import MarketConfig, fmt, make_rng, sample_snr
from .negotiation import negotiate
from .onsite import OnsiteEpisodeResult, OnsiteParams, clear_onsite_market
from .utility import DomainError, owner_utility, spectral_efficiency

FUTURES = "futures"
ONSITE = "onsite"

EXPERIMENTS = ("failure_curve", "profit_comparison", "price_series", "fairness_curve")

DEFAULT_LAMBDA_SWEEP = tuple(float(x) for x in range(2, 21, 2))
DEFAULT_REQUESTER_SWEEP = tuple(float(x) for x in range(5, 41, 5))
DEFAULT_EPISODES = {
    "failure_curve": 10_000,
    "profit_comparison": 10_000,
    "price_series": 200,
    "fairness_curve": 10_000,
}

# shape thresholds for the qualitative checks written to summary.txt
FAILURE_LOW_MAX = 0.05
FAILURE_HIGH_MIN = 0.5
FAIRNESS_SPREAD_MAX = 0.20


@dataclass(frozen=True)
class MetricRow:
    sweep_value: float
    scheme: str
    value: float | None
    std_error: float | None
    episodes: int
    note: str = ""


@dataclass(frozen=True)
class ShapeCheck:
    name: str
    passed: bool | None  # None: report-only
    detail: str

    def line(self) -> str:
        verdict = "REPORT" if self.passed is None else ("PASS" if self.passed else "FAIL")
        return f"{verdict} {self.name}: {self.detail}"


@dataclass
class ExperimentResult:
    experiment_id: str
    sweep_variable: str
    seed: int
    config_digest: str
    rows: list[MetricRow] = field(default_factory=list)
    checks: list[ShapeCheck] = field(default_factory=list)

    def column(self, scheme: str) -> list[MetricRow]:
        return [r for r in self.rows if r.scheme == scheme]

    def values(self, scheme: str) -> list[float | None]:
        return [r.value for r in self.column(scheme)]

    def row(self, sweep_value: float, scheme: str) -> MetricRow:
        for r in self.rows:
            if r.scheme == scheme and r.sweep_value == sweep_value:
                return r
        raise KeyError((sweep_value, scheme))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["experiment_id", "sweep_variable", "sweep_value", "scheme", "value",
                         "std_error", "episodes", "seed", "config_digest", "note"])
        for r in self.rows:
            writer.writerow([self.experiment_id, self.sweep_variable, fmt(r.sweep_value), r.scheme,
                             fmt(r.value), fmt(r.std_error), r.episodes, self.seed,
                             self.config_digest, r.note])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"[{self.experiment_id}] seed={self.seed} config={self.config_digest}"]
        lines += [c.line() for c in self.checks]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{self.experiment_id}.csv"
        path.write_text(self.to_csv(), encoding="utf-8", newline="\n")
        return path


def config_digest(config: MarketConfig, onsite: OnsiteParams) -> str:
    blob = json.dumps({"market": config.to_dict(), "onsite": dataclasses.asdict(onsite)},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- statistics -----------------------------------------------------------------

def fairness(revenues) -> float:
    """Reciprocal of the unbiased sample variance of revenue terms log2(1 + k_d r).

    Zero variance returns ``math.inf`` (perfect fairness).
    """
    x = np.asarray(revenues, dtype=float)
    if x.size < 2:
        raise DomainError("fairness needs at least two revenue values")
    var = float(np.var(x, ddof=1))
    return math.inf if var == 0.0 else 1.0 / var


def fairness_std_error(revenues) -> float:
    """Delta-method standard error of :func:`fairness`."""
    x = np.asarray(revenues, dtype=float)
    n = x.size
    var = float(np.var(x, ddof=1))
    if var == 0.0 or n < 4:
        return 0.0
    m4 = float(np.mean((x - x.mean()) ** 4))
    se_var = math.sqrt(max(m4 - var * var, 0.0) / n)
    return se_var / (var * var)


def variance(x) -> float:
    """Population variance computed about the first value; exactly 0 for a constant column."""
    d = np.asarray(x, dtype=float)
    d = d - d[0]
    m = float(d.mean())
    return float(np.mean((d - m) ** 2))


def mean_and_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def onsite_revenues(config: MarketConfig, episodes: list[OnsiteEpisodeResult]) -> np.ndarray:
    """Pooled log2(1 + k_d * allocation) over every on-site requester."""
    snrs = np.array([g for ep in episodes for g in ep.requester_snrs], dtype=float)
    alloc = np.array([a for ep in episodes for a in ep.allocations], dtype=float)
    if snrs.size == 0:
        return snrs
    return np.log2(1.0 + spectral_efficiency(config.requester, snrs) * alloc)


def futures_revenues(config: MarketConfig, amount: float, rng: np.random.Generator, n: int) -> np.ndarray:
    gammas = sample_snr(config.environment, rng, n)
    return np.log2(1.0 + spectral_efficiency(config.requester, gammas) * amount)


# --- per-point workers (top level so a process pool can pickle them) -------------

def _episodes(config, onsite, seed, point, n, lam=None):
    return [clear_onsite_market(config, onsite, make_rng(seed, point, e, 0), lam=lam) for e in range(n)]


def _contract(config: MarketConfig):
    contract, trace = negotiate(config)
    return contract, trace.termination


def _failure_point(args):
    config, onsite, seed, i, lam, n = args
    contract, why = _contract(config.replace(environment__local_user_mean_lambda=lam))
    eps = _episodes(config, onsite, seed, i, n, lam)
    rates = [float(np.mean(ep.failures)) for ep in eps if ep.n_requesters]
    mean, se = mean_and_se(rates)
    rows = [
        MetricRow(lam, FUTURES, 0.0, 0.0, n) if contract is not None
        else MetricRow(lam, FUTURES, None, None, n, f"no contract ({why})"),
        MetricRow(lam, ONSITE, mean, se, len(rates)),
    ]
    return rows


def _profit_point(args):
    config, onsite, seed, i, lam, n = args
    cfg = config.replace(environment__local_user_mean_lambda=lam)
    contract, why = _contract(cfg)
    if contract is None:
        fut = MetricRow(lam, FUTURES, None, None, n, f"no contract ({why})")
    else:
        n_c = make_rng(seed, i, 0, 1).poisson(lam, n)
        u = owner_utility(cfg.owner, cfg.environment, contract.price, contract.amount, n_c)
        fut = MetricRow(lam, FUTURES, *mean_and_se(u), n)
    eps = _episodes(config, onsite, seed, i, n, lam)
    onsite_row = MetricRow(lam, ONSITE, *mean_and_se([ep.owner_profit for ep in eps]), n)
    return [fut, onsite_row]


def _fairness_point(args):
    config, onsite, seed, i, mu, n, amount = args
    eps = _episodes(config, dataclasses.replace(onsite, n_requesters_mean=mu), seed, i, n)
    on = onsite_revenues(config, eps)
    rows = []
    if amount is None:
        rows.append(MetricRow(mu, FUTURES, None, None, n, "no contract"))
    else:
        fut = futures_revenues(config, amount, make_rng(seed, i, 0, 1), n)
        rows.append(MetricRow(mu, FUTURES, fairness(fut), fairness_std_error(fut), n))
    if on.size >= 2:
        rows.append(MetricRow(mu, ONSITE, fairness(on), fairness_std_error(on), n))
    else:
        rows.append(MetricRow(mu, ONSITE, None, None, n, "fewer than two on-site trades"))
    return rows


def _map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _seed(config: MarketConfig, seed: int | None) -> int:
    return config.seed if seed is None else seed


# --- experiments ---------------------------------------------------------------

def run_failure_curve(config: MarketConfig, onsite: OnsiteParams = OnsiteParams(),
                      sweep=DEFAULT_LAMBDA_SWEEP, episodes: int = DEFAULT_EPISODES["failure_curve"],
                      seed: int | None = None, workers: int = 1) -> ExperimentResult:
    """Trading-failure probability versus mean local-user count.

    A signed contract always delivers, so the futures column is 0. The
    on-site value is the mean over episodes (with at least one requester)
    of the fraction of requesters left below ``r_qos``.
    """
    _require_episodes(episodes)
    seed = _seed(config, seed)
    jobs = [(config, onsite, seed, i, float(lam), episodes) for i, lam in enumerate(sweep)]
    res = ExperimentResult("failure_curve", "local_user_mean_lambda", seed, config_digest(config, onsite))
    for rows in _map(_failure_point, jobs, workers):
        res.rows.extend(rows)
    res.checks = failure_checks(res)
    return res


def run_profit_comparison(config: MarketConfig, onsite: OnsiteParams = OnsiteParams(),
                          sweep=DEFAULT_LAMBDA_SWEEP, episodes: int = DEFAULT_EPISODES["profit_comparison"],
                          seed: int | None = None, workers: int = 1) -> ExperimentResult:
    """Owner profit versus mean local-user count.

    Futures: realized owner utility at the contract signed for that mean,
    with fresh local-user draws. On-site: clearing price times spectrum sold.
    """
    _require_episodes(episodes)
    seed = _seed(config, seed)
    jobs = [(config, onsite, seed, i, float(lam), episodes) for i, lam in enumerate(sweep)]
    res = ExperimentResult("profit_comparison", "local_user_mean_lambda", seed, config_digest(config, onsite))
    for rows in _map(_profit_point, jobs, workers):
        res.rows.extend(rows)
    res.checks = profit_checks(res)
    return res


def run_price_series(config: MarketConfig, onsite: OnsiteParams = OnsiteParams(),
                     episodes: int = DEFAULT_EPISODES["price_series"], seed: int | None = None,
                     workers: int = 1) -> ExperimentResult:
    """Per-episode trading price: the fixed contract price against the spot price."""
    _require_episodes(episodes)
    seed = _seed(config, seed)
    contract, why = _contract(config)
    res = ExperimentResult("price_series", "episode", seed, config_digest(config, onsite))
    for e, ep in enumerate(_episodes(config, onsite, seed, 0, episodes)):
        if contract is None:
            res.rows.append(MetricRow(e, FUTURES, None, None, 1, f"no contract ({why})"))
        else:
            res.rows.append(MetricRow(e, FUTURES, contract.price, 0.0, 1))
        res.rows.append(MetricRow(e, ONSITE, ep.clearing_price, 0.0, 1))
    res.checks = price_checks(res)
    return res


def run_fairness_curve(config: MarketConfig, onsite: OnsiteParams = OnsiteParams(),
                       sweep=DEFAULT_REQUESTER_SWEEP, episodes: int = DEFAULT_EPISODES["fairness_curve"],
                       seed: int | None = None, workers: int = 1) -> ExperimentResult:
    """Trading fairness versus mean number of on-site requesters.

    The futures amount is negotiated once; its revenue still varies through
    the requester's SNR. On-site revenues pool every requester's allocation.
    """
    _require_episodes(episodes)
    seed = _seed(config, seed)
    contract, _ = _contract(config)
    amount = None if contract is None else contract.amount
    jobs = [(config, onsite, seed, i, float(mu), episodes, amount) for i, mu in enumerate(sweep)]
    res = ExperimentResult("fairness_curve", "n_requesters_mean", seed, config_digest(config, onsite))
    for rows in _map(_fairness_point, jobs, workers):
        res.rows.extend(rows)
    res.checks = fairness_checks(res, onsite.n_requesters_mean)
    return res


def run_experiment(experiment_id: str, config: MarketConfig, onsite: OnsiteParams = OnsiteParams(),
                   episodes: int | None = None, seed: int | None = None, workers: int = 1) -> ExperimentResult:
    runners = {
        "failure_curve": run_failure_curve,
        "profit_comparison": run_profit_comparison,
        "price_series": run_price_series,
        "fairness_curve": run_fairness_curve,
    }
    if experiment_id not in runners:
        raise ValueError(f"unknown experiment {experiment_id!r}; choose from {', '.join(EXPERIMENTS)}")
    n = DEFAULT_EPISODES[experiment_id] if episodes is None else episodes
    return runners[experiment_id](config, onsite, episodes=n, seed=seed, workers=workers)


def _require_episodes(n: int) -> None:
    if n < 1:
        raise ValueError("episodes must be >= 1")


# --- qualitative shape checks ----------------------------------------------------

def failure_checks(res: ExperimentResult) -> list[ShapeCheck]:
    fut = res.values(FUTURES)
    on = res.column(ONSITE)
    checks = [ShapeCheck("futures failure is zero", all(v == 0.0 for v in fut),
                         f"values={[fmt(v) for v in fut]}")]
    if not on:
        return checks
    checks.append(ShapeCheck(f"on-site failure at first point <= {FAILURE_LOW_MAX}",
                             on[0].value <= FAILURE_LOW_MAX, f"{fmt(on[0].value)} at {fmt(on[0].sweep_value)}"))
    checks.append(ShapeCheck(f"on-site failure at last point >= {FAILURE_HIGH_MIN}",
                             on[-1].value >= FAILURE_HIGH_MIN, f"{fmt(on[-1].value)} at {fmt(on[-1].sweep_value)}"))
    worst = worst_decrease(on)
    checks.append(ShapeCheck("on-site failure non-decreasing within 2 standard errors",
                             worst <= 2.0, f"largest drop = {worst:.3f} standard errors"))
    return checks


def worst_decrease(rows: list[MetricRow]) -> float:
    """Largest consecutive drop, in units of the pair's combined standard error."""
    worst = -math.inf
    for a, b in zip(rows, rows[1:]):
        se = math.hypot(a.std_error, b.std_error)
        drop = a.value - b.value
        worst = max(worst, drop / se if se > 0 else (math.inf if drop > 0 else -math.inf))
    return worst


def profit_checks(res: ExperimentResult) -> list[ShapeCheck]:
    fut = {r.sweep_value: r.value for r in res.column(FUTURES)}
    on = {r.sweep_value: r.value for r in res.column(ONSITE)}
    checks = []
    if all(fut.get(x) is not None for x in (4.0, 16.0)):
        g4, g16 = fut[4.0] - on[4.0], fut[16.0] - on[16.0]
        checks.append(ShapeCheck("profit gap shrinks from lambda=4 to lambda=16", None,
                                 f"gap(4)={fmt(g4)} gap(16)={fmt(g16)} shrinks={g16 < g4}"))
    above = [x for x in fut if fut[x] is not None and fut[x] > on[x]]
    crossover = [x for x in fut if fut[x] is not None and fut[x] < on[x]]
    checks.append(ShapeCheck("futures profit above on-site", None,
                             f"{len(above)} of {len(fut)} points; futures below at {[fmt(x) for x in crossover]}"))
    return checks


def price_checks(res: ExperimentResult) -> list[ShapeCheck]:
    fut = [v for v in res.values(FUTURES) if v is not None]
    on = [v for v in res.values(ONSITE) if v is not None]
    checks = []
    if len(fut) >= 2:
        v = variance(fut)
        checks.append(ShapeCheck("futures price variance is zero", v == 0.0, f"variance={fmt(v)}"))
    if len(on) >= 2:
        v = variance(on)
        checks.append(ShapeCheck("on-site price variance is positive", v > 0.0, f"variance={fmt(v)}"))
    if fut and on:
        checks.append(ShapeCheck("mean on-site price above contract price", None,
                                 f"on-site mean={fmt(np.mean(on))} contract={fmt(fut[0])}"))
    return checks


def relative_spread(values: list[float]) -> float:
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / v.mean())


def fairness_checks(res: ExperimentResult, operating_point: float) -> list[ShapeCheck]:
    fut = [r for r in res.column(FUTURES) if r.value is not None]
    checks = []
    if len(fut) >= 2:
        spread = relative_spread([r.value for r in fut])
        checks.append(ShapeCheck(f"futures fairness relative spread <= {FAIRNESS_SPREAD_MAX}",
                                 spread <= FAIRNESS_SPREAD_MAX, f"spread={spread:.4f}"))
    try:
        f, o = res.row(operating_point, FUTURES), res.row(operating_point, ONSITE)
    except KeyError:
        checks.append(ShapeCheck("futures fairness above on-site at operating point", False,
                                 f"operating point {fmt(operating_point)} not in sweep"))
    else:
        ok = f.value is not None and o.value is not None and f.value > o.value
        checks.append(ShapeCheck("futures fairness above on-site at operating point", ok,
                                 f"futures={fmt(f.value)} onsite={fmt(o.value)} at {fmt(operating_point)}"))
    on = [r.value for r in res.column(ONSITE) if r.value is not None]
    if len(on) >= 3:
        peak = int(np.argmax(on))
        checks.append(ShapeCheck("on-site fairness rises then falls", None,
                                 f"peak at index {peak} of {len(on)}"))
    return checks
