import math

import numpy as np
import pytest

from spectrum_futures.model import (
    EnvironmentParams,
    MarketConfig,
    NegotiationParams,
    OwnerParams,
    RequesterParams,
    paper_default,
)
from spectrum_futures.utility import owner_expected_utility, requester_utility

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def cfg() -> MarketConfig:
    return paper_default()


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance criterion."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE.append((criterion, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}")


def _logu(rng, center, factor=2.0):
    return float(center * math.exp(rng.uniform(-math.log(factor), math.log(factor))))


def random_risk_case(rng: np.random.Generator):
    """Parameters drawn log-uniformly around the defaults, plus a (price, amount)."""
    while True:
        lo = float(rng.uniform(5, 12))
        env = EnvironmentParams(
            total_bandwidth_W=_logu(rng, 30.0),
            local_user_mean_lambda=_logu(rng, 8.0, 3.0),
            snr_low_db=lo,
            snr_high_db=lo + float(rng.uniform(4, 16)),
        )
        owner = OwnerParams(
            c1=_logu(rng, 2.0), c2=_logu(rng, 1.0), b_req=_logu(rng, 1.0), k_c=_logu(rng, 2.0),
            rho_b=float(rng.uniform(0.3, 0.97)), t_b=0.2, p_min=0.1,
        )
        req = RequesterParams(
            omega=_logu(rng, 10.0), ber_target=float(10 ** rng.uniform(-5, -1.5)),
            delta_d=0.0 if rng.random() < 0.5 else float(rng.uniform(0, 5)),
        )
        amount = float(rng.uniform(0.2, 1.0)) * env.total_bandwidth_W
        if rng.random() < 0.5:
            price = _logu(rng, 3.0, 8.0)
        else:
            # price that puts the requester's break-even SNR inside the range
            gamma = 10 ** (rng.uniform(env.snr_low_db, env.snr_high_db) / 10)
            price = (requester_utility(req, 0.0, amount, gamma) - req.delta_d) / amount
        if price >= 0 and owner_expected_utility(owner, env, price, amount) > 0:
            return owner, req, env, price, amount


def random_market(rng: np.random.Generator) -> MarketConfig:
    """A small random market for negotiation equivalence runs."""
    lo = float(rng.uniform(6, 12))
    return MarketConfig(
        environment=EnvironmentParams(
            total_bandwidth_W=float(rng.choice([8.0, 10.0, 15.0, 20.0])),
            local_user_mean_lambda=_logu(rng, 8.0, 3.0),
            snr_low_db=lo,
            snr_high_db=lo + float(rng.uniform(5, 15)),
        ),
        owner=OwnerParams(
            c1=_logu(rng, 2.0), c2=_logu(rng, 1.0), b_req=_logu(rng, 1.0), k_c=_logu(rng, 2.0),
            rho_b=float(rng.uniform(0.3, 0.97)), t_b=float(rng.uniform(0.02, 0.6)),
            p_min=float(rng.choice([0.1, 0.5, 1.0])),
        ),
        requester=RequesterParams(
            omega=_logu(rng, 10.0), ber_target=float(10 ** rng.uniform(-5, -2)),
            t_d=float(rng.uniform(0.02, 0.6)),
            delta_d=0.0 if rng.random() < 0.6 else float(rng.uniform(0, 3)),
        ),
        negotiation=NegotiationParams(
            price_step=float(rng.choice([0.25, 0.5])),
            amount_step=float(rng.choice([0.5, 1.0])),
            max_iterations=int(rng.choice([200, 1000])),
        ),
    )
