import csv
import io
import math

import numpy as np
import pytest

from conftest import random_market
from spectrum_futures.model import MarketConfig, make_rng
from spectrum_futures.negotiation import (
    MAX_ITERATIONS,
    NO_FEASIBLE_PRICE,
    NO_OVERLAP,
    AmountRange,
    brute_force_negotiate,
    negotiate,
    owner_acceptable_range,
    owner_infeasible_limit,
    requester_acceptable_range,
    requester_best_response,
)
from spectrum_futures.utility import (
    InfeasiblePriceError,
    owner_expected_utility,
    owner_risk,
    requester_expected_utility,
    requester_risk,
)


def scan_range(grid, accept, value):
    """Plain-loop reference: the contiguous accepted block around the best accepted point."""
    best = None
    for i, r in enumerate(grid):
        if accept(r) and (best is None or value(r) > value(grid[best])):
            best = i
    if best is None:
        return AmountRange.empty()
    lo = best
    while lo > 0 and accept(grid[lo - 1]):
        lo -= 1
    hi = best
    while hi + 1 < len(grid) and accept(grid[hi + 1]):
        hi += 1
    return AmountRange(float(grid[lo]), float(grid[hi]), True)


def owner_accepts(cfg, p):
    def accept(r):
        try:
            return owner_risk(cfg.owner, cfg.environment, p, float(r)).value <= cfg.owner.t_b
        except InfeasiblePriceError:
            return False
    return accept


def test_amount_range_intersect_and_mask():
    a, b = AmountRange(1, 5, True), AmountRange(3, 8, True)
    assert a.intersect(b) == AmountRange(3, 5, True)
    assert AmountRange(1, 2, True).intersect(AmountRange(3, 4, True)).feasible is False
    assert a.intersect(AmountRange.empty()).feasible is False
    assert a.mask(np.arange(7.0)).tolist() == [False, True, True, True, True, True, False]
    assert not AmountRange.empty().mask(np.arange(3.0)).any()


def test_owner_range_full_when_tolerance_is_one(cfg):
    c = cfg.replace(owner__t_b=1.0)
    assert owner_acceptable_range(c, 1.0) == AmountRange(0.0, 30.0, True)


def test_owner_range_empty_when_tolerance_is_zero():
    # negative slope: every amount carries positive shortfall probability
    c = MarketConfig().replace(owner__c1=0.5, owner__rho_b=0.95, owner__t_b=0.0)
    assert owner_acceptable_range(c, 1.0).feasible is False


def test_requester_range_empty_when_tolerance_is_zero(cfg):
    c = cfg.replace(requester__t_d=0.0, requester__delta_d=50.0)
    assert requester_acceptable_range(c, 1.0).feasible is False


@pytest.mark.parametrize("seed", range(8))
def test_ranges_match_plain_scan(seed):
    cfg = random_market(make_rng(seed, 77))
    grid = cfg.amount_grid()
    own, req, env = cfg.owner, cfg.requester, cfg.environment
    for p in (cfg.price_at(0), cfg.price_at(5), cfg.price_at(20)):
        expected = scan_range(grid, owner_accepts(cfg, p),
                              lambda r: owner_expected_utility(own, env, p, float(r)))
        assert owner_acceptable_range(cfg, p) == expected
        expected = scan_range(grid,
                              lambda r: requester_risk(req, env, p, float(r)).value <= req.t_d,
                              lambda r: requester_expected_utility(req, env, p, float(r)))
        assert requester_acceptable_range(cfg, p) == expected


def test_best_response_singleton_and_empty(cfg):
    assert requester_best_response(cfg, 2.0, AmountRange(4.5, 4.5, True))[0] == 4.5
    with pytest.raises(ValueError):
        requester_best_response(cfg, 2.0, AmountRange.empty())


def test_best_response_free_spectrum_takes_the_most(cfg):
    assert requester_best_response(cfg, 0.0, AmountRange(0, 30, True))[0] == 30.0


def test_best_response_interior_optimum(cfg):
    amount, eu = requester_best_response(cfg, 1.0, AmountRange(2, 10, True))
    grid = np.arange(4, 21) * 0.5
    values = [requester_expected_utility(cfg.requester, cfg.environment, 1.0, float(r)) for r in grid]
    assert amount == grid[int(np.argmax(values))]
    assert eu == pytest.approx(max(values), rel=1e-14)


def test_default_negotiation(cfg):
    contract, trace = negotiate(cfg)
    assert trace.termination == NO_OVERLAP
    assert contract is not None and contract is trace.outcome
    assert contract.owner_risk.value <= cfg.owner.t_b
    assert contract.requester_risk.value <= cfg.requester.t_d
    assert contract.owner_expected_utility > 0
    assert contract == brute_force_negotiate(cfg)


@pytest.mark.parametrize("seed", range(6))
def test_negotiate_matches_brute_force(seed):
    cfg = random_market(make_rng(seed, 13))
    contract, _ = negotiate(cfg)
    assert contract == brute_force_negotiate(cfg)


def test_trace_integrity(cfg):
    contract, trace = negotiate(cfg)
    prices = [it.price for it in trace.iterations]
    assert prices == [cfg.price_at(k) for k in range(len(prices))]
    for it in trace.iterations:
        assert it.overlap == it.owner_range.intersect(it.requester_range)
        assert (it.requester_choice is None) == (not it.overlap.feasible)
    assert not trace.iterations[-1].overlap.feasible
    signed = [it for it in trace.iterations if it.price == contract.price]
    assert signed and signed[0].requester_choice == contract.amount


def test_trace_csv(cfg):
    _, trace = negotiate(cfg)
    rows = list(csv.reader(io.StringIO(trace.to_csv())))
    assert rows[0] == ["price", "owner_lo", "owner_hi", "req_lo", "req_hi", "choice", "req_eu"]
    assert len(rows) == len(trace.iterations) + 1
    assert rows[-1][5] == "" and "\r" not in trace.to_csv()


def test_infeasible_configuration_terminates():
    c = MarketConfig().replace(owner__c1=0.5, owner__rho_b=0.99, owner__t_b=0.0, requester__t_d=0.0)
    contract, trace = negotiate(c)
    assert contract is None
    assert trace.termination == NO_FEASIBLE_PRICE
    assert len(trace.iterations) <= owner_infeasible_limit(c) + 1
    assert brute_force_negotiate(c) is None


def test_owner_never_feasible_hits_limit(cfg):
    # requester always feasible, so only the owner-side limit can stop the sweep
    c = cfg.replace(environment__total_bandwidth_W=1.0, owner__c1=0.5, owner__rho_b=0.95, owner__t_b=0.0,
                    requester__t_d=1.0)
    contract, trace = negotiate(c)
    assert contract is None and trace.termination == NO_FEASIBLE_PRICE
    assert len(trace.iterations) == owner_infeasible_limit(c) == 10
    assert brute_force_negotiate(c) is None


def test_max_iterations_cap(cfg):
    c = cfg.replace(negotiation__max_iterations=3)
    contract, trace = negotiate(c)
    assert trace.termination == MAX_ITERATIONS and len(trace.iterations) == 3
    assert contract == brute_force_negotiate(c)


def test_negotiation_is_pure(cfg):
    a, ta = negotiate(cfg)
    b, tb = negotiate(cfg)
    assert a == b and ta.to_csv() == tb.to_csv()


def test_looser_requester_tolerance_never_shrinks_its_range(cfg):
    for p in (1.0, 5.0, 12.0):
        tight = requester_acceptable_range(cfg.replace(requester__t_d=0.05), p)
        loose = requester_acceptable_range(cfg.replace(requester__t_d=0.4), p)
        if tight.feasible:
            assert loose.feasible and loose.lower <= tight.lower and loose.upper >= tight.upper


def test_contract_price_rises_with_requester_tolerance(cfg):
    prices = []
    for t in (0.05, 0.2, 0.5):
        contract, _ = negotiate(cfg.replace(requester__t_d=t))
        prices.append(contract.price)
    assert prices == sorted(prices)
    assert not any(math.isnan(p) for p in prices)


@pytest.mark.parametrize("seed", range(12))
def test_relaxing_requester_tolerance_keeps_owner_utility(seed):
    cfg = random_market(make_rng(seed, 99))
    before, _ = negotiate(cfg)
    after, _ = negotiate(cfg.replace(requester__t_d=min(1.0, cfg.requester.t_d * 1.5 + 0.05)))
    if before is not None:
        assert after is not None
        assert after.owner_expected_utility >= before.owner_expected_utility


def test_relaxing_owner_tolerance_can_lower_owner_utility():
    # a tight owner range forces larger purchases; once relaxed, the requester buys less
    cfg = random_market(make_rng(52, 99))
    tight, _ = negotiate(cfg)
    loose, _ = negotiate(cfg.replace(owner__t_b=min(1.0, cfg.owner.t_b * 1.5 + 0.05)))
    assert (tight.price, tight.amount) == (21.85, 1.5)
    assert (loose.price, loose.amount) == (19.85, 1.0)
    assert loose.owner_expected_utility < tight.owner_expected_utility
