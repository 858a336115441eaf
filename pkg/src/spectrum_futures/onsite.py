"""On-site (spot) trading baseline.

A single-price Stackelberg market: the owner posts one per-MHz price on the
price grid, every on-site requester buys its utility-maximizing amount at
that price, and excess demand is rationed proportionally. A requester whose
allocation falls below ``r_qos`` counts as a trading failure.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .model import EnvironmentParams, MarketConfig, OwnerParams, RequesterParams, fmt, sample_snr
from .utility import LN2, spectral_efficiency


@dataclass(frozen=True)
class OnsiteParams:
    # calibrated: failure ~0 at lambda=2, above one half at lambda=20
    n_requesters_mean: float = 30.0
    r_qos: float = 0.69
    price_cap: float = 8.5

    def __post_init__(self):
        for name in ("n_requesters_mean", "r_qos", "price_cap"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name}: must be > 0")


@dataclass(frozen=True)
class OnsiteEpisodeResult:
    n_c: int
    requester_snrs: tuple[float, ...]
    available: float
    clearing_price: float
    allocations: tuple[float, ...]
    failures: tuple[bool, ...]
    owner_profit: float

    @property
    def n_requesters(self) -> int:
        return len(self.allocations)


def available_spectrum(env: EnvironmentParams, owner: OwnerParams, n_c: int) -> float:
    """Spectrum left after serving ``n_c`` local users without degradation."""
    return max(0.0, env.total_bandwidth_W - n_c * owner.b_req / owner.k_c)


def requester_demand(requester: RequesterParams, price, gamma):
    """Utility-maximizing purchase max(0, omega/(p ln2) - 1/k_d).

    ``price`` may be an array of prices; ``gamma`` a scalar SNR.
    """
    kd = spectral_efficiency(requester, gamma)
    return np.maximum(0.0, requester.omega / (np.asarray(price, dtype=float) * LN2) - 1.0 / kd)


def price_grid(config: MarketConfig, onsite: OnsiteParams) -> np.ndarray:
    """Owner price grid p_min, p_min + dp, ... up to ``price_cap``."""
    p_min, step = config.owner.p_min, config.negotiation.price_step
    n = int(math.floor((onsite.price_cap - p_min) / step + 1e-9))
    prices = p_min + np.arange(max(n, 0) + 1) * step
    # a zero price has unbounded demand; never post it
    return prices[prices > 0]


def clear_at(requester: RequesterParams, gammas: np.ndarray, available: float, prices: np.ndarray):
    """Owner's revenue-maximizing grid price; returns (price index, demand matrix)."""
    if gammas.size == 0:
        return 0, np.zeros((0, prices.size))
    kd = spectral_efficiency(requester, gammas)
    demand = np.maximum(0.0, requester.omega / (prices[None, :] * LN2) - 1.0 / kd[:, None])
    revenue = prices * np.minimum(available, demand.sum(axis=0))
    return int(np.argmax(revenue)), demand


def ration(demand: np.ndarray, available: float) -> np.ndarray:
    """Proportional rationing with sum(allocations) <= available guaranteed."""
    total = demand.sum()
    if total <= available:
        return demand.copy()
    alloc = demand * (available / total)
    while alloc.sum() > available or math.fsum(alloc) > available:
        alloc = np.nextafter(alloc, 0.0)
    return alloc


def clear_onsite_market(config: MarketConfig, onsite: OnsiteParams, rng: np.random.Generator,
                        lam: float | None = None) -> OnsiteEpisodeResult:
    """Draw one on-site episode and clear it.

    ``lam`` overrides the local-user mean of ``config``.
    """
    env, own, req = config.environment, config.owner, config.requester
    n_c = int(rng.poisson(env.local_user_mean_lambda if lam is None else lam))
    m = int(rng.poisson(onsite.n_requesters_mean))
    gammas = np.atleast_1d(sample_snr(env, rng, m)) if m else np.zeros(0)
    available = available_spectrum(env, own, n_c)

    prices = price_grid(config, onsite)
    idx, demand = clear_at(req, gammas, available, prices)
    price = float(prices[idx])
    alloc = ration(demand[:, idx], available) if m else np.zeros(0)
    return OnsiteEpisodeResult(
        n_c=n_c,
        requester_snrs=tuple(float(g) for g in gammas),
        available=available,
        clearing_price=price,
        allocations=tuple(float(a) for a in alloc),
        failures=tuple(bool(a < onsite.r_qos) for a in alloc),
        owner_profit=price * float(alloc.sum()),
    )


def episodes_to_csv(episodes: list[OnsiteEpisodeResult]) -> str:
    """One row per episode."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["episode", "n_c", "n_requesters", "available", "clearing_price",
                     "allocated", "failures", "owner_profit"])
    for i, ep in enumerate(episodes):
        writer.writerow([i, ep.n_c, ep.n_requesters, fmt(ep.available), fmt(ep.clearing_price),
                         fmt(sum(ep.allocations)), sum(ep.failures), fmt(ep.owner_profit)])
    return buf.getvalue()
