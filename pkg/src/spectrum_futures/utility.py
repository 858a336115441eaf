"""Utility and trading-failure risk for the spectrum owner and requester.

Every risk has two evaluators: a closed-form ``analytic`` path and a
``monte_carlo`` path that samples the random environment directly. The
negotiation layer uses the analytic path only; Monte Carlo exists to
cross-check it.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .model import (
    EnvironmentParams,
    OwnerParams,
    RequesterParams,
    RiskEstimate,
    db_to_linear,
    make_rng,
    poisson_cdf,
)

LN2 = math.log(2.0)
Z95 = 1.959963984540054
QUADRATURE_ORDER = 64


class DomainError(ValueError):
    """An argument lies outside the domain of the model."""


class InfeasiblePriceError(ValueError):
    """The owner's expected utility is not positive, so its risk is undefined."""


def _check_amount(env: EnvironmentParams, amount: float) -> None:
    if not 0.0 <= amount <= env.total_bandwidth_W:
        raise DomainError(f"amount {amount} outside [0, {env.total_bandwidth_W}]")


# --- owner --------------------------------------------------------------------

def owner_utility(owner: OwnerParams, env: EnvironmentParams, price: float, amount: float, n_c):
    """Owner profit for ``n_c`` local users when selling ``amount`` MHz at ``price``.

    Uses the expanded affine form ``n_c*(c1 - c2*B_req) + p*r + c2*k_c*(W - r)``.
    With no local users there is no degradation cost and only the selling
    revenue ``p*r`` remains. ``n_c`` may be an integer array.
    """
    _check_amount(env, amount)
    base = price * amount + owner.c2 * owner.k_c * (env.total_bandwidth_W - amount)
    if isinstance(n_c, np.ndarray):
        u = n_c * owner.slope_in_users + base
        return np.where(n_c == 0, price * amount, u)
    if n_c == 0:
        return price * amount
    return n_c * owner.slope_in_users + base


def owner_expected_utility(owner: OwnerParams, env: EnvironmentParams, price: float, amount: float) -> float:
    """E[U_b] over n_c ~ Poisson(lambda).

    Affinity on n_c >= 1 gives the exact closed form
    ``a*lam + b*(1 - e^-lam) + e^-lam * p*r``.
    """
    _check_amount(env, amount)
    lam = env.local_user_mean_lambda
    p0 = math.exp(-lam)
    base = price * amount + owner.c2 * owner.k_c * (env.total_bandwidth_W - amount)
    return owner.slope_in_users * lam + base * -math.expm1(-lam) + p0 * price * amount


def owner_risk(
    owner: OwnerParams,
    env: EnvironmentParams,
    price: float,
    amount: float,
    method: str = "analytic",
    rng: np.random.Generator | None = None,
    samples: int = 100_000,
) -> RiskEstimate:
    """Pr{U_b(n_c) <= rho_b * E[U_b]}.

    Raises InfeasiblePriceError when E[U_b] <= 0.
    """
    mean = owner_expected_utility(owner, env, price, amount)
    if mean <= 0:
        raise InfeasiblePriceError(f"owner expected utility {mean:.6g} <= 0 at p={price}, r={amount}")
    threshold = owner.rho_b * mean

    if method == "monte_carlo":
        rng = rng if rng is not None else make_rng(0)
        n_c = rng.poisson(env.local_user_mean_lambda, samples)
        hits = np.count_nonzero(owner_utility(owner, env, price, amount, n_c) <= threshold)
        return _mc_estimate(hits, samples)
    if method != "analytic":
        raise ValueError(f"unknown method {method!r}")

    lam = env.local_user_mean_lambda
    a = owner.slope_in_users
    u = lambda k: owner_utility(owner, env, price, amount, k)  # noqa: E731

    # Poisson mass beyond k_cap is below 1e-12 for any lam
    k_cap = int(lam + 40.0 * math.sqrt(lam) + 50.0)
    risk = math.exp(-lam) if price * amount <= threshold else 0.0
    if a > 0:
        # risky users: 1 <= k <= k_hi
        k_hi = min(_clamped_floor((threshold - u(1)) / a + 1), k_cap)
        if k_hi < k_cap:
            while u(k_hi + 1) <= threshold:
                k_hi += 1
            while k_hi >= 1 and u(k_hi) > threshold:
                k_hi -= 1
        if k_hi >= 1:
            risk += poisson_cdf(k_hi, lam) - poisson_cdf(0, lam)
    elif a < 0:
        # risky users: k >= k_lo >= 1
        k_lo = max(1, _clamped_ceil((threshold - u(1)) / a + 1))
        if k_lo <= k_cap:
            while k_lo > 1 and u(k_lo - 1) <= threshold:
                k_lo -= 1
            while u(k_lo) > threshold:
                k_lo += 1
            risk += 1.0 - poisson_cdf(k_lo - 1, lam)
    elif u(1) <= threshold:
        risk += -math.expm1(-lam)
    return RiskEstimate(min(max(risk, 0.0), 1.0), "analytic")


def _clamped_floor(x: float) -> int:
    if not math.isfinite(x):
        return 10**7 if x > 0 else 0
    return int(min(max(math.floor(x), 0), 10**7))


def _clamped_ceil(x: float) -> int:
    if not math.isfinite(x):
        return 10**7 if x > 0 else 1
    return int(min(max(math.ceil(x), 1), 10**7))


def _mc_estimate(hits: int, samples: int) -> RiskEstimate:
    value = hits / samples
    half = Z95 * math.sqrt(value * (1.0 - value) / samples)
    return RiskEstimate(value, "monte_carlo", half, samples)


# --- requester ----------------------------------------------------------------

def modulation_gap(ber_target: float) -> float:
    """K = 1.5 / ln(0.2 / BER_target) for adaptive M-QAM."""
    if not 0.0 < ber_target < 0.2:
        raise DomainError(f"ber_target {ber_target} must lie in (0, 0.2)")
    return 1.5 / math.log(0.2 / ber_target)


def spectral_efficiency(requester: RequesterParams, gamma):
    """k_d = log2(1 + K*gamma) for linear SNR ``gamma`` (scalar or array)."""
    k = modulation_gap(requester.ber_target)
    if isinstance(gamma, np.ndarray):
        return np.log2(1.0 + k * gamma)
    if not gamma > 0:
        raise DomainError("gamma must be > 0")
    return math.log2(1.0 + k * gamma)


def requester_utility(requester: RequesterParams, price: float, amount, gamma):
    """omega*log2(1 + k_d*r) - p*r."""
    if np.any(np.asarray(amount) < 0):
        raise DomainError("amount must be >= 0")
    kd = spectral_efficiency(requester, gamma)
    if isinstance(kd, np.ndarray) or isinstance(amount, np.ndarray):
        return requester.omega * np.log2(1.0 + kd * amount) - price * amount
    return requester.omega * math.log2(1.0 + kd * amount) - price * amount


@lru_cache(maxsize=8)
def _legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def snr_quadrature(env: EnvironmentParams, order: int = QUADRATURE_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (linear SNR) and weights summing to 1 for the uniform-dB law."""
    x, w = _legendre(order)
    lo, hi = env.snr_low_db, env.snr_high_db
    nodes_db = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    return db_to_linear(nodes_db), 0.5 * w


def requester_expected_utility(requester: RequesterParams, env: EnvironmentParams, price: float, amount):
    """E[U_d] over the SNR law by 64-point Gauss-Legendre quadrature in dB.

    ``amount`` may be an array; the result then has the same shape.
    """
    gammas, weights = snr_quadrature(env)
    kd = spectral_efficiency(requester, gammas)
    r = np.asarray(amount, dtype=float)
    if np.any(r < 0):
        raise DomainError("amount must be >= 0")
    revenue = requester.omega * np.log2(1.0 + kd * r[..., None])
    out = np.sum(revenue * weights, axis=-1) - price * r
    return float(out) if out.ndim == 0 else out


def requester_risk(
    requester: RequesterParams,
    env: EnvironmentParams,
    price: float,
    amount: float,
    method: str = "analytic",
    rng: np.random.Generator | None = None,
    samples: int = 100_000,
) -> RiskEstimate:
    """Pr{U_d(gamma) <= delta_d}, the chance utility stays within delta_d of zero."""
    if amount < 0:
        raise DomainError("amount must be >= 0")
    margin = requester.delta_d

    if method == "monte_carlo":
        rng = rng if rng is not None else make_rng(0)
        gamma_db = rng.uniform(env.snr_low_db, env.snr_high_db, samples)
        u = requester_utility(requester, price, float(amount), db_to_linear(gamma_db))
        return _mc_estimate(int(np.count_nonzero(u <= margin)), samples)
    if method != "analytic":
        raise ValueError(f"unknown method {method!r}")

    if amount == 0:
        return RiskEstimate(1.0 if margin >= 0 else 0.0, "analytic")
    gamma_db = critical_snr_db(requester, price, amount)
    span = env.snr_high_db - env.snr_low_db
    value = (gamma_db - env.snr_low_db) / span
    return RiskEstimate(min(max(value, 0.0), 1.0), "analytic")


def critical_snr_db(requester: RequesterParams, price: float, amount: float) -> float:
    """SNR (dB) at which U_d equals the margin delta_d; -inf if never below.

    Inverts the utility: k* = (2^((p*r + delta)/omega) - 1)/r, then
    gamma* = (2^k* - 1)/K. Computed in log space so huge k* stays finite.
    """
    x = (price * amount + requester.delta_d) / requester.omega
    if x <= 0:
        return -math.inf
    try:
        kd_star = math.expm1(x * LN2) / amount
    except OverflowError:
        return math.inf
    y = kd_star * LN2
    if y == 0.0:
        return -math.inf
    if math.isinf(y):
        return math.inf
    if y > 30.0:
        log10_num = y / math.log(10.0) + math.log10(-math.expm1(-y))
    else:
        log10_num = math.log10(math.expm1(y))
    return 10.0 * (log10_num - math.log10(modulation_gap(requester.ber_target)))
