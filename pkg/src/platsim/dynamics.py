"""Per-timestep market dynamics: query, match, transact, and epoch close-out.

``run_epoch`` is geometry-agnostic: callers hand it the query points and the
precomputed query-by-seller utility matrix, so the same loop serves both the
full model (exponential utility on the unit square) and the linear-utility
toy translation used to verify the equilibrium oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    NONE,
    PLATFORM,
    WORLD,
    AgentState,
    EpochLedger,
    FeeSchedule,
    LatentPoint,
    TxRecord,
    transaction_seller_surplus,
)
from .marketgen import Market
from .matching import Matcher


class QueryEvent(NamedTuple):
    t: int
    buyer: int
    query_point: LatentPoint


class TransactionOutcome(NamedTuple):
    world_candidate: int | None
    platform_candidate: int | None
    chosen: int | None
    channel: str
    buyer_surplus: float


@dataclass
class EngineState:
    market: Market
    buyer_states: list[AgentState]
    seller_states: list[AgentState]

    @staticmethod
    def fresh(market: Market) -> "EngineState":
        return EngineState(
            market=market,
            buyer_states=[AgentState() for _ in market.buyers],
            seller_states=[AgentState() for _ in market.sellers],
        )


def arrival_order(n_buyers: int, T: int) -> list[int]:
    """Round-robin arrivals in ascending buyer id, fixed across epochs."""
    return [t % n_buyers for t in range(T)]


def gaussian_queries(
    market: Market, order: Sequence[int], rng: np.random.Generator
) -> list[LatentPoint]:
    """Draw one clipped Gaussian query per arrival around buyer locations."""
    locs = np.array(
        [(market.buyers[b].location.taste, market.buyers[b].location.price_level) for b in order]
    )
    stds = np.array([market.buyers[b].query_stddev for b in order])[:, None]
    raw = rng.normal(size=(len(order), 2)) * stds + locs
    clipped = np.clip(raw, 0.0, 1.0)
    return [LatentPoint(float(x), float(y)) for x, y in clipped]


def exp_utility_matrix(
    queries: Sequence[LatentPoint], market: Market, c: float
) -> list[list[float]]:
    q = np.asarray(queries, dtype=float)
    s = np.array([(sp.location.taste, sp.location.price_level) for sp in market.sellers])
    dist = np.hypot(q[:, None, 0] - s[None, :, 0], q[:, None, 1] - s[None, :, 1])
    return np.exp(-c * dist).tolist()


def world_choice(
    buyer_known: Sequence[int],
    utilities: Sequence[float],
    friction: float,
    prices: Sequence[float],
    seller_bankrupt: Sequence[bool],
    budget_remaining: float,
) -> tuple[int | None, float, int | None, float]:
    """Best off-platform option for one query.

    Returns (candidate, world_surplus, best, best_utility): ``best`` is the
    budget-feasible utility-argmax known seller before the friction screen;
    ``candidate`` survives only when its utility strictly beats the friction.
    Ties break to the lowest seller id.
    """
    if friction < 0:
        raise ValueError("friction must be nonnegative")
    best: int | None = None
    best_u = 0.0
    for s in buyer_known:
        if seller_bankrupt[s] or prices[s] > budget_remaining:
            continue
        u = utilities[s]
        if best is None or u > best_u:
            best, best_u = s, u
    if best is None:
        return None, 0.0, None, 0.0
    if best_u > friction:
        return best, best_u - friction, best, best_u
    return None, 0.0, best, best_u


def buyer_transact(
    buyer: int,
    buyer_state: AgentState,
    seller_states: Sequence[AgentState],
    prices: Sequence[float],
    cost_fractions: Sequence[float],
    fees: FeeSchedule,
    world_option: tuple[int | None, float],
    platform_option: tuple[int | None, float],
    seller_on_platform: Sequence[bool],
) -> TransactionOutcome:
    """Resolve one query into a transaction (or none) and apply its effects.

    The platform wins ties in positive surplus; the chosen seller cannot
    decline.  Budgets decrement by the chosen seller's price and the seller
    books its margin via :func:`transaction_seller_surplus`.
    """
    world_candidate, world_surplus = world_option
    platform_candidate, platform_utility = platform_option
    if platform_candidate is not None:
        if not buyer_state.on_platform:
            raise ValueError("platform option offered to an off-platform buyer")
        if seller_states[platform_candidate].bankrupt or not seller_on_platform[platform_candidate]:
            raise ValueError("platform option points at an ineligible seller")
    if platform_candidate is not None and platform_utility > 0 and platform_utility >= world_surplus:
        chosen, channel, surplus = platform_candidate, PLATFORM, platform_utility
    elif world_candidate is not None and world_surplus > 0:
        chosen, channel, surplus = world_candidate, WORLD, world_surplus
    else:
        return TransactionOutcome(world_candidate, platform_candidate, None, NONE, 0.0)
    buyer_state.budget_remaining -= prices[chosen]
    seller_state = seller_states[chosen]
    margin = transaction_seller_surplus(
        prices[chosen], cost_fractions[chosen], fees.referral_rate, channel
    )
    if channel == PLATFORM:
        buyer_state.epoch_surplus_platform += surplus
        buyer_state.platform_tx_count += 1
        seller_state.platform_tx_count += 1
        seller_state.epoch_surplus_platform += margin
    else:
        buyer_state.epoch_surplus_world += surplus
        buyer_state.world_tx_count += 1
        seller_state.world_tx_count += 1
        seller_state.epoch_surplus_world += margin
    return TransactionOutcome(world_candidate, platform_candidate, chosen, channel, surplus)


def run_epoch(
    state: EngineState,
    fees: FeeSchedule,
    matcher: Matcher | None,
    friction: float,
    queries: Sequence[LatentPoint],
    utilities: Sequence[Sequence[float]],
    epoch: int,
    order: Sequence[int] | None = None,
) -> EpochLedger:
    """Execute one epoch of round-robin arrivals and finalize its ledger.

    Subscriptions for the epoch must already be decided; ``matcher`` is None
    when the platform is absent.  Deterministic given the query sample.
    """
    market = state.market
    n_buyers = len(market.buyers)
    if len(queries) < n_buyers:
        raise ValueError("epoch must contain at least one arrival per buyer")
    if order is None:
        order = arrival_order(n_buyers, len(queries))
    prices = [s.price for s in market.sellers]
    costs = [s.cost_fraction for s in market.sellers]
    bankrupt = [st.bankrupt for st in state.seller_states]
    known = [sorted(b.known_sellers) for b in market.buyers]
    for b, spec in enumerate(market.buyers):
        state.buyer_states[b].reset_epoch(spec.epoch_budget)
    for st in state.seller_states:
        if not st.bankrupt:
            st.reset_epoch()
    seller_on = [st.on_platform for st in state.seller_states]
    ledger = EpochLedger(
        epoch=epoch,
        friction=friction,
        fees=fees,
        strategy=(matcher.strategy.rule, matcher.strategy.threshold) if matcher else None,
        buyer_on_platform=[st.on_platform for st in state.buyer_states],
        seller_on_platform=seller_on,
        seller_bankrupt_at_start=bankrupt,
        utilities=[list(row) for row in utilities],
    )
    for t, buyer in enumerate(order):
        buyer_state = state.buyer_states[buyer]
        u_row = ledger.utilities[t]
        w_candidate, w_surplus, w_best, w_best_u = world_choice(
            known[buyer], u_row, friction, prices, bankrupt, buyer_state.budget_remaining
        )
        p_candidate: int | None = None
        p_utility = 0.0
        if matcher is not None and buyer_state.on_platform:
            rec = matcher.recommend(u_row)
            if rec is not None and prices[rec] <= buyer_state.budget_remaining:
                p_candidate = rec
                p_utility = u_row[rec]
        outcome = buyer_transact(
            buyer,
            buyer_state,
            state.seller_states,
            prices,
            costs,
            fees,
            (w_candidate, w_surplus),
            (p_candidate, p_utility),
            seller_on,
        )
        if outcome.channel == PLATFORM and matcher is not None:
            matcher.transacted(outcome.chosen)
        ledger.records.append(
            TxRecord(
                t=t,
                buyer=buyer,
                query=queries[t],
                world_best=w_best,
                world_best_utility=w_best_u,
                world_candidate=w_candidate,
                platform_candidate=p_candidate,
                platform_utility=p_utility,
                chosen=outcome.chosen,
                channel=outcome.channel,
                buyer_surplus=outcome.buyer_surplus,
            )
        )
    return ledger.finalize(market.sellers)


def close_epoch(state: EngineState, ledger: EpochLedger) -> EngineState:
    """Apply end-of-epoch bankruptcy accounting to seller states."""
    if not ledger.finalized:
        raise ValueError("close_epoch requires a finalized ledger")
    for s, spec in enumerate(state.market.sellers):
        st = state.seller_states[s]
        if st.bankrupt:
            continue
        if ledger.seller_surplus[s] <= 0.0:
            st.consecutive_nonpositive_epochs += 1
        else:
            st.consecutive_nonpositive_epochs = 0
        if st.consecutive_nonpositive_epochs >= spec.shutdown_threshold:
            st.bankrupt = True
            st.on_platform = False
    return state
