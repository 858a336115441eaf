"""Iterative forward-contract negotiation between spectrum owner and requester.

The owner announces prices ``p_min, p_min + dp, ...``. At each price both
sides report the amount range they can accept within their risk tolerance;
when the ranges overlap the requester picks its expected-utility-maximizing
amount. The owner then signs the accepted (price, amount) pair that
maximizes its own expected utility.

Amounts live on the grid ``0, step, ..., <= W``. Only analytic risk
evaluators are used, so a negotiation is a pure function of its config.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ForwardContract, MarketConfig, fmt
from .utility import (
    InfeasiblePriceError,
    owner_expected_utility,
    owner_risk,
    requester_expected_utility,
    requester_risk,
)

NO_OVERLAP = "no_overlap"
MAX_ITERATIONS = "max_iterations"
NO_FEASIBLE_PRICE = "no_feasible_price"


@dataclass(frozen=True)
class AmountRange:
    lower: float = math.nan
    upper: float = math.nan
    feasible: bool = False

    @classmethod
    def empty(cls) -> "AmountRange":
        return cls()

    def intersect(self, other: "AmountRange") -> "AmountRange":
        if not (self.feasible and other.feasible):
            return AmountRange.empty()
        lo, hi = max(self.lower, other.lower), min(self.upper, other.upper)
        return AmountRange(lo, hi, True) if lo <= hi else AmountRange.empty()

    def mask(self, grid: np.ndarray) -> np.ndarray:
        if not self.feasible:
            return np.zeros(grid.shape, dtype=bool)
        return (grid >= self.lower) & (grid <= self.upper)


@dataclass(frozen=True)
class Iteration:
    price: float
    owner_range: AmountRange
    requester_range: AmountRange
    overlap: AmountRange
    requester_choice: float | None = None
    requester_expected_utility: float | None = None


@dataclass
class NegotiationTrace:
    iterations: list[Iteration] = field(default_factory=list)
    outcome: ForwardContract | None = None
    termination: str = MAX_ITERATIONS

    def to_csv(self) -> str:
        """One row per announced price; empty cells mark empty ranges."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["price", "owner_lo", "owner_hi", "req_lo", "req_hi", "choice", "req_eu"])
        for it in self.iterations:
            writer.writerow([
                fmt(it.price),
                *_range_cells(it.owner_range),
                *_range_cells(it.requester_range),
                fmt(it.requester_choice),
                fmt(it.requester_expected_utility),
            ])
        return buf.getvalue()


def _range_cells(r: AmountRange) -> list[str]:
    return [fmt(r.lower), fmt(r.upper)] if r.feasible else ["", ""]


# --- per-price ranges ---------------------------------------------------------

def owner_feasibility(config: MarketConfig, price: float) -> tuple[np.ndarray, np.ndarray]:
    """Per grid point: (risk within T_b and E[U_b] > 0, owner expected utility)."""
    own, env = config.owner, config.environment
    grid = config.amount_grid()
    ok = np.zeros(grid.size, dtype=bool)
    eu = np.empty(grid.size)
    for i, r in enumerate(grid):
        eu[i] = owner_expected_utility(own, env, price, float(r))
        try:
            ok[i] = owner_risk(own, env, price, float(r)).value <= own.t_b
        except InfeasiblePriceError:
            ok[i] = False
    return ok, eu


def requester_feasibility(config: MarketConfig, price: float) -> tuple[np.ndarray, np.ndarray]:
    """Per grid point: (risk within T_d, requester expected utility)."""
    req, env = config.requester, config.environment
    grid = config.amount_grid()
    ok = np.array([requester_risk(req, env, price, float(r)).value <= req.t_d for r in grid])
    return ok, requester_expected_utility(req, env, price, grid)


def _block_around_best(grid: np.ndarray, ok: np.ndarray, utility: np.ndarray) -> AmountRange:
    """Contiguous feasible block containing the best feasible grid point.

    Ties in utility go to the smaller amount.
    """
    if not ok.any():
        return AmountRange.empty()
    best = int(np.argmax(np.where(ok, utility, -np.inf)))
    lo = hi = best
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    while hi < grid.size - 1 and ok[hi + 1]:
        hi += 1
    return AmountRange(float(grid[lo]), float(grid[hi]), True)


def owner_acceptable_range(config: MarketConfig, price: float) -> AmountRange:
    """Amounts the owner accepts at ``price`` under its risk tolerance."""
    ok, eu = owner_feasibility(config, price)
    return _block_around_best(config.amount_grid(), ok, eu)


def requester_acceptable_range(config: MarketConfig, price: float) -> AmountRange:
    """Amounts the requester accepts at ``price`` under its risk tolerance."""
    ok, eu = requester_feasibility(config, price)
    return _block_around_best(config.amount_grid(), ok, eu)


def requester_best_response(
    config: MarketConfig, price: float, overlap: AmountRange, _eu: np.ndarray | None = None
) -> tuple[float, float]:
    """Grid amount in ``overlap`` maximizing requester expected utility.

    Ties go to the smaller amount. Raises ValueError for an empty overlap.
    """
    if not overlap.feasible:
        raise ValueError("requester_best_response called with an empty overlap")
    grid = config.amount_grid()
    if _eu is None:
        _eu = requester_expected_utility(config.requester, config.environment, price, grid)
    masked = np.where(overlap.mask(grid), _eu, -np.inf)
    i = int(np.argmax(masked))
    return float(grid[i]), float(_eu[i])


# --- Algorithm ----------------------------------------------------------------

def _sign(config: MarketConfig, price: float, amount: float, req_eu: float) -> ForwardContract:
    own, req, env = config.owner, config.requester, config.environment
    return ForwardContract(
        price=price,
        amount=amount,
        owner_risk=owner_risk(own, env, price, amount),
        requester_risk=requester_risk(req, env, price, amount),
        owner_expected_utility=owner_expected_utility(own, env, price, amount),
        requester_expected_utility=req_eu,
    )


def _best_candidate(config: MarketConfig, candidates: list[tuple[float, float, float]]):
    """Owner-optimal (price, amount, req_eu); ties -> lower price, then lower amount."""
    own, env = config.owner, config.environment
    return min(
        candidates,
        key=lambda c: (-owner_expected_utility(own, env, c[0], c[1]), c[0], c[1]),
    )


def owner_infeasible_limit(config: MarketConfig) -> int:
    """Consecutive owner-infeasible prices tolerated before giving up (W / dp)."""
    return max(1, math.ceil(config.environment.total_bandwidth_W / config.negotiation.price_step))


def negotiate(config: MarketConfig) -> tuple[ForwardContract | None, NegotiationTrace]:
    """Run the price sweep and return the signed contract (or None) with its trace.

    Stops at the first non-overlapping price after an overlap was seen. Before
    any overlap it stops once the requester range is empty (requester risk
    only grows with price) or the owner range has been empty for W/dp
    consecutive prices. ``max_iterations`` caps the sweep in all cases.
    """
    grid = config.amount_grid()
    trace = NegotiationTrace()
    candidates: list[tuple[float, float, float]] = []
    seen_overlap = False
    owner_empty_run = 0
    limit = owner_infeasible_limit(config)

    for k in range(config.negotiation.max_iterations):
        price = config.price_at(k)
        o_ok, o_eu = owner_feasibility(config, price)
        r_ok, r_eu = requester_feasibility(config, price)
        o_rng = _block_around_best(grid, o_ok, o_eu)
        r_rng = _block_around_best(grid, r_ok, r_eu)
        overlap = o_rng.intersect(r_rng)

        if overlap.feasible:
            amount, eu = requester_best_response(config, price, overlap, r_eu)
            candidates.append((price, amount, eu))
            trace.iterations.append(Iteration(price, o_rng, r_rng, overlap, amount, eu))
            seen_overlap = True
            continue

        trace.iterations.append(Iteration(price, o_rng, r_rng, overlap))
        if seen_overlap:
            trace.termination = NO_OVERLAP
            break
        if not r_rng.feasible:
            trace.termination = NO_FEASIBLE_PRICE
            break
        owner_empty_run = owner_empty_run + 1 if not o_rng.feasible else 0
        if owner_empty_run >= limit:
            trace.termination = NO_FEASIBLE_PRICE
            break
    else:
        trace.termination = MAX_ITERATIONS

    if candidates:
        price, amount, eu = _best_candidate(config, candidates)
        trace.outcome = _sign(config, price, amount, eu)
    return trace.outcome, trace


def brute_force_negotiate(config: MarketConfig) -> ForwardContract | None:
    """Exhaustive reference for :func:`negotiate`.

    Evaluates both risks at every (price, amount) grid pair, derives the
    sweep's stopping price from the full feasibility table, and returns the
    owner-optimal pair among the requester's best responses.
    """
    own, req, env = config.owner, config.requester, config.environment
    grid = config.amount_grid()
    n = grid.size
    limit = owner_infeasible_limit(config)

    accepted: list[tuple[float, float, float]] = []
    any_overlap = False
    owner_empty_run = 0
    for k in range(config.negotiation.max_iterations):
        price = config.price_at(k)
        owner_ok = np.zeros(n, dtype=bool)
        owner_val = np.full(n, -np.inf)
        req_ok = np.zeros(n, dtype=bool)
        for j in range(n):
            r = float(grid[j])
            owner_val[j] = owner_expected_utility(own, env, price, r)
            if owner_val[j] > 0:
                owner_ok[j] = owner_risk(own, env, price, r).value <= own.t_b
            req_ok[j] = requester_risk(req, env, price, r).value <= req.t_d
        req_val = requester_expected_utility(req, env, price, grid)

        owner_block = _runs_containing_best(owner_ok, owner_val)
        req_block = _runs_containing_best(req_ok, req_val)
        both = owner_block & req_block
        if both.any():
            any_overlap = True
            idx = np.flatnonzero(both)
            values = req_val[idx]
            j = int(idx[np.flatnonzero(values == values.max())[0]])
            accepted.append((price, float(grid[j]), float(req_val[j])))
            continue
        if any_overlap or not req_ok.any():
            break
        owner_empty_run = 0 if owner_ok.any() else owner_empty_run + 1
        if owner_empty_run >= limit:
            break

    if not accepted:
        return None
    best_key = None
    best = None
    for price, amount, eu in accepted:
        key = (owner_expected_utility(own, env, price, amount), -price, -amount)
        if best_key is None or key > best_key:
            best_key, best = key, (price, amount, eu)
    return _sign(config, *best)


def _runs_containing_best(ok: np.ndarray, value: np.ndarray) -> np.ndarray:
    """Boolean mask of the maximal run of True in ``ok`` holding its best value."""
    mask = np.zeros(ok.size, dtype=bool)
    if not ok.any():
        return mask
    vals = np.where(ok, value, -np.inf)
    top = vals.max()
    best = int(np.flatnonzero(vals == top)[0])
    # label runs of consecutive feasible points
    edges = np.diff(np.concatenate(([0], ok.astype(np.int8))))
    labels = np.cumsum(edges == 1) * ok
    return labels == labels[best]
