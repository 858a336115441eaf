"""Domain types, configuration loading and the random environment.

All parameter records are frozen dataclasses validated on construction.
Random draws use numpy's PCG64 bit generator, seeded through
``numpy.random.SeedSequence`` so streams are reproducible across platforms.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np


class ConfigError(ValueError):
    """Raised when a parameter violates its invariant.

    ``field`` carries the dotted path of the offending parameter.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _check(ok: bool, name: str, message: str) -> None:
    if not ok:
        raise ConfigError(name, message)


def _finite(*values: float) -> bool:
    return all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in values)


@dataclass(frozen=True)
class EnvironmentParams:
    total_bandwidth_W: float = 30.0
    local_user_mean_lambda: float = 8.0
    snr_low_db: float = 9.0
    snr_high_db: float = 22.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            _check(_finite(getattr(self, f.name)), f.name, "must be a finite number")
        _check(self.total_bandwidth_W > 0, "total_bandwidth_W", "must be > 0")
        _check(self.local_user_mean_lambda > 0, "local_user_mean_lambda", "must be > 0")
        _check(self.snr_low_db < self.snr_high_db, "snr_low_db", "must be < snr_high_db")


@dataclass(frozen=True)
class OwnerParams:
    c1: float = 2.0
    c2: float = 1.0
    b_req: float = 1.0
    k_c: float = 2.0
    rho_b: float = 0.5
    t_b: float = 0.2
    p_min: float = 0.1

    def __post_init__(self):
        for f in dataclasses.fields(self):
            _check(_finite(getattr(self, f.name)), f.name, "must be a finite number")
        _check(self.c1 >= 0, "c1", "must be >= 0")
        _check(self.c2 >= 0, "c2", "must be >= 0")
        _check(self.b_req > 0, "b_req", "must be > 0")
        _check(self.k_c > 0, "k_c", "must be > 0")
        _check(0 < self.rho_b < 1, "rho_b", "must lie in (0, 1)")
        _check(0 <= self.t_b <= 1, "t_b", "must lie in [0, 1]")
        _check(self.p_min >= 0, "p_min", "must be >= 0")

    @property
    def slope_in_users(self) -> float:
        """Change in owner utility per extra local user (c1 - c2*B_req)."""
        return self.c1 - self.c2 * self.b_req


@dataclass(frozen=True)
class RequesterParams:
    omega: float = 10.0
    ber_target: float = 1e-3
    rho_d: float = 0.0
    t_d: float = 0.2
    delta_d: float = 0.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            _check(_finite(getattr(self, f.name)), f.name, "must be a finite number")
        _check(self.omega > 0, "omega", "must be > 0")
        _check(0 < self.ber_target < 0.2, "ber_target", "must lie in (0, 0.2)")
        _check(self.rho_d >= 0, "rho_d", "must be >= 0")
        _check(0 <= self.t_d <= 1, "t_d", "must lie in [0, 1]")
        _check(self.delta_d >= 0, "delta_d", "must be >= 0")


@dataclass(frozen=True)
class NegotiationParams:
    price_step: float = 0.1
    amount_step: float = 0.5
    max_iterations: int = 1000

    def __post_init__(self):
        _check(_finite(self.price_step) and self.price_step > 0, "price_step", "must be > 0")
        _check(_finite(self.amount_step) and self.amount_step > 0, "amount_step", "must be > 0")
        _check(
            isinstance(self.max_iterations, int) and not isinstance(self.max_iterations, bool)
            and self.max_iterations >= 1,
            "max_iterations", "must be an integer >= 1",
        )


@dataclass(frozen=True)
class MarketConfig:
    environment: EnvironmentParams = field(default_factory=EnvironmentParams)
    owner: OwnerParams = field(default_factory=OwnerParams)
    requester: RequesterParams = field(default_factory=RequesterParams)
    negotiation: NegotiationParams = field(default_factory=NegotiationParams)
    mc_samples: int = 100_000
    seed: int = 2024

    def __post_init__(self):
        _check(
            isinstance(self.mc_samples, int) and not isinstance(self.mc_samples, bool) and self.mc_samples >= 1,
            "mc_samples", "must be an integer >= 1",
        )
        _check(
            isinstance(self.seed, int) and not isinstance(self.seed, bool) and 0 <= self.seed < 2**64,
            "seed", "must be an unsigned 64-bit integer",
        )

    def replace(self, **sections: Any) -> "MarketConfig":
        """Copy with selected fields overridden.

        Keys are either top-level field names or ``section__field`` pairs,
        e.g. ``cfg.replace(owner__t_b=0.0, mc_samples=10)``.
        """
        top: dict[str, Any] = {}
        nested: dict[str, dict[str, Any]] = {}
        for key, value in sections.items():
            if "__" in key:
                sec, name = key.split("__", 1)
                nested.setdefault(sec, {})[name] = value
            else:
                top[key] = value
        for sec, values in nested.items():
            top[sec] = dataclasses.replace(top.get(sec, getattr(self, sec)), **values)
        return dataclasses.replace(self, **top)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON encoding (first 16 hex digits)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def amount_grid(self) -> np.ndarray:
        """Grid of tradable amounts 0, step, 2*step, ... not exceeding W."""
        step = self.negotiation.amount_step
        n = int(math.floor(self.environment.total_bandwidth_W / step + 1e-9))
        return np.arange(n + 1) * step

    def price_at(self, k: int) -> float:
        """k-th announced price of the sweep (no accumulated rounding)."""
        return self.owner.p_min + k * self.negotiation.price_step


_SECTIONS = {
    "environment": EnvironmentParams,
    "owner": OwnerParams,
    "requester": RequesterParams,
    "negotiation": NegotiationParams,
}


def config_from_dict(data: dict[str, Any]) -> MarketConfig:
    """Build a MarketConfig from a nested mapping, rejecting unknown fields.

    Missing fields take their defaults.
    """
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(MarketConfig)}
    for key in data:
        if key not in allowed:
            raise ConfigError(key, "unknown field")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(value, dict):
                raise ConfigError(key, "must be an object")
            names = {f.name for f in dataclasses.fields(cls)}
            for sub in value:
                if sub not in names:
                    raise ConfigError(f"{key}.{sub}", "unknown field")
            try:
                kwargs[key] = cls(**value)
            except ConfigError as exc:
                raise ConfigError(f"{key}.{exc.field}", str(exc).split(": ", 1)[1]) from None
        else:
            kwargs[key] = value
    return MarketConfig(**kwargs)


def load_config(path: str | Path) -> MarketConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON ({exc})") from None
    return config_from_dict(data)


def paper_default() -> MarketConfig:
    """The bundled ``paper_default.json`` configuration."""
    text = resources.files("spectrum_futures.data").joinpath("paper_default.json").read_text()
    return config_from_dict(json.loads(text))


def paper_default_path() -> Path:
    return Path(str(resources.files("spectrum_futures.data").joinpath("paper_default.json")))


@dataclass(frozen=True)
class RiskEstimate:
    """A trading-failure probability and how it was obtained."""

    value: float
    method: str  # "analytic" or "monte_carlo"
    half_width: float = 0.0
    samples: int = 0

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"risk value {self.value} outside [0, 1]")
        if self.method not in ("analytic", "monte_carlo"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")
        if self.method == "analytic" and (self.half_width != 0 or self.samples != 0):
            raise ValueError("analytic estimates carry no sampling error")


@dataclass(frozen=True)
class ForwardContract:
    price: float
    amount: float
    owner_risk: RiskEstimate
    requester_risk: RiskEstimate
    owner_expected_utility: float = float("nan")
    requester_expected_utility: float = float("nan")


def fmt(x) -> str:
    """Fixed 12-significant-digit rendering used by every CSV writer."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "0"
    return format(x, ".12g")


# --- random environment -------------------------------------------------------

def make_rng(seed: int, *path: int) -> np.random.Generator:
    """PCG64 stream for ``seed`` and an optional spawn path.

    Streams with different paths are statistically independent, so
    (point, episode) indices give order-independent parallel streams.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(path))))


def db_to_linear(gamma_db):
    """Convert decibels to a linear power ratio."""
    if isinstance(gamma_db, np.ndarray):
        return np.power(10.0, gamma_db / 10.0)
    return 10.0 ** (gamma_db / 10.0)


def linear_to_db(gamma):
    if isinstance(gamma, np.ndarray):
        return 10.0 * np.log10(gamma)
    return 10.0 * math.log10(gamma)


def sample_local_users(lam: float, rng: np.random.Generator, size=None):
    """Poisson(lam) local-user count(s)."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    out = rng.poisson(lam, size)
    return int(out) if size is None else out


def sample_snr(env: EnvironmentParams, rng: np.random.Generator, size=None):
    """Linear SNR drawn uniformly over the dB interval of ``env``."""
    return db_to_linear(sample_snr_db(env.snr_low_db, env.snr_high_db, rng, size))


def sample_snr_db(low_db: float, high_db: float, rng: np.random.Generator, size=None):
    if low_db == high_db:
        return low_db if size is None else np.full(size, float(low_db))
    out = rng.uniform(low_db, high_db, size)
    return float(out) if size is None else out


@lru_cache(maxsize=65536)
def poisson_cdf(k: int, lam: float) -> float:
    """Pr{N <= k} for N ~ Poisson(lam), by summing the pmf recurrence.

    Above the mean the complement is summed instead, so values near 1 keep
    full precision.
    """
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    if k < 0:
        return 0.0
    if k > lam:
        return max(0.0, 1.0 - _poisson_upper_tail(int(k) + 1, lam))
    # log-space start keeps the first term representable for large lam
    log_term = -lam
    total = 0.0
    for i in range(int(k) + 1):
        if i:
            log_term += math.log(lam / i)
        total += math.exp(log_term)
        if i > lam and log_term < -745.0:
            break
    return min(total, 1.0)


def _poisson_upper_tail(k: int, lam: float) -> float:
    """Pr{N >= k} for k > lam; terms decrease, so stop once they stop mattering."""
    log_term = k * math.log(lam) - lam - math.lgamma(k + 1)
    total = 0.0
    i = k
    while True:
        term = math.exp(log_term)
        total += term
        if term <= total * 1e-17:
            return total
        i += 1
        log_term += math.log(lam / i)


def poisson_pmf(k: int, lam: float) -> float:
    if k < 0:
        return 0.0
    return math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))
