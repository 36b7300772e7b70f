"""Epoch-boundary subscription machinery.

Agents compare a counterfactual surplus estimate for joining versus staying
off the platform, add a logarithmic inertia bonus for repeating their last
choice, and draw the decision from a discrete-choice logit.  Estimates
replay the previous epoch's realized queries under the newly posted fees and
friction, holding everyone else's decisions fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import AgentState, EpochLedger, FeeSchedule
from .marketgen import Market
from .matching import UPDATE_ON_TRANSACTION, Matcher, MatchingStrategy


class SubscriptionEstimate(NamedTuple):
    xi_world: float
    xi_platform: float


def inertia_bonus(state: AgentState) -> tuple[float, float]:
    """Additive (platform, world) bonuses from the signed inertia counter."""
    chi = state.inertia
    if chi == 0:
        raise ValueError("inertia must never be zero")
    on = 1 if state.on_platform else 0
    sigma_p = on * math.log(chi) if chi > 0 else 0.0
    sigma_w = (1 - on) * math.log(-chi) if chi < 0 else 0.0
    return sigma_p, sigma_w


def subscribe_probability(estimate: SubscriptionEstimate, bonuses: tuple[float, float]) -> float:
    """Logit probability of subscribing, computed in log space."""
    d = (estimate.xi_platform + bonuses[0]) - (estimate.xi_world + bonuses[1])
    if not math.isfinite(d):
        raise ValueError("adjusted surpluses must be finite")
    if d >= 0:
        return 1.0 / (1.0 + math.exp(-d))
    e = math.exp(d)
    return e / (1.0 + e)


def subscribe_decision(
    estimate: SubscriptionEstimate, bonuses: tuple[float, float], rng: np.random.Generator
) -> bool:
    return rng.random() < subscribe_probability(estimate, bonuses)


def update_inertia(state: AgentState, subscribed: bool) -> AgentState:
    """Advance the streak counter: +1 on a repeat, reset to +/-1 on a switch."""
    chi = state.inertia
    if chi == 0:
        raise ValueError("inertia must never be zero")
    if chi > 0:
        state.inertia = chi + 1 if subscribed else -1
    else:
        state.inertia = chi - 1 if not subscribed else 1
    return state


class CounterfactualContext:
    """Shared scratch state for one wake round over a finalized ledger.

    Precomputes per-record lookups and, for myopic strategies, a vectorized
    top-two utility table so per-seller re-matching is O(T).
    """

    def __init__(self, ledger: EpochLedger, market: Market, update_mode: str = UPDATE_ON_TRANSACTION):
        if not ledger.finalized:
            raise ValueError("counterfactual estimates need a finalized ledger")
        self.ledger = ledger
        self.market = market
        self.update_mode = update_mode
        self.n_sellers = len(market.sellers)
        self.records = ledger.records
        self.u = ledger.utilities
        self.subscribed = [s for s in range(self.n_sellers) if ledger.seller_on_platform[s]]
        raw = ledger.strategy
        self.strategy = MatchingStrategy(raw[0], raw[1]) if raw else MatchingStrategy.myopic()
        self.buyer_records: dict[int, list[int]] = {b: [] for b in range(len(market.buyers))}
        self.by_world_best: dict[int, list[int]] = {s: [] for s in range(self.n_sellers)}
        self.by_platform_candidate: dict[int, list[int]] = {s: [] for s in range(self.n_sellers)}
        self.platform_rows: list[int] = []
        for i, rec in enumerate(self.records):
            self.buyer_records[rec.buyer].append(i)
            if rec.world_best is not None:
                self.by_world_best[rec.world_best].append(i)
            if rec.platform_candidate is not None:
                self.by_platform_candidate[rec.platform_candidate].append(i)
            if ledger.buyer_on_platform[rec.buyer]:
                self.platform_rows.append(i)
        self._top2: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None

    @property
    def myopic(self) -> bool:
        return self.strategy.threshold == 1.0

    def _top_two(self):
        if self._top2 is None:
            sub = np.array(self.subscribed)
            usub = np.asarray(self.u, dtype=float)[:, sub]
            order = np.argsort(-usub, axis=1, kind="stable")
            first = sub[order[:, 0]]
            first_u = np.take_along_axis(usub, order[:, :1], axis=1)[:, 0]
            if len(sub) > 1:
                second = sub[order[:, 1]]
                second_u = np.take_along_axis(usub, order[:, 1:2], axis=1)[:, 0]
            else:
                second = np.full(len(self.records), -1)
                second_u = np.zeros(len(self.records))
            self._top2 = (first, first_u, second, second_u)
        return self._top2

    def _world_surplus(self, i: int, friction: float) -> float:
        rec = self.records[i]
        if rec.world_best is None:
            return 0.0
        return max(rec.world_best_utility - friction, 0.0)

    def rematch(
        self, subscribed: Sequence[int], friction: float, rows: Sequence[int] | None = None
    ) -> dict[int, int | None]:
        """Re-run the epoch's matching over ``rows`` with a modified seller set.

        ``rows`` defaults to every on-platform-buyer record.  The seller-aware
        tracker replays with simulated buyer choices under the new friction.
        """
        rows = self.platform_rows if rows is None else rows
        out: dict[int, int | None] = {}
        if not subscribed:
            return {i: None for i in rows}
        sub_set = set(subscribed)
        base = set(self.subscribed)
        if self.myopic and not base and len(sub_set) == 1:
            only = next(iter(sub_set))
            return {i: only for i in rows}
        if self.myopic and base and len(sub_set.symmetric_difference(base)) <= 1:
            first, first_u, second, second_u = self._top_two()
            removed = base - sub_set
            added = sub_set - base
            for i in rows:
                if removed:
                    r = next(iter(removed))
                    pick = int(first[i]) if first[i] != r else (int(second[i]) if second[i] >= 0 else None)
                elif added:
                    a = next(iter(added))
                    ua = self.u[i][a]
                    if ua > first_u[i] or (ua == first_u[i] and a < first[i]):
                        pick = a
                    else:
                        pick = int(first[i])
                else:
                    pick = int(first[i])
                out[i] = pick
            return out
        matcher = Matcher(
            self.market.sellers, sorted(sub_set), self.ledger.fees, self.strategy, self.update_mode
        )
        for i in rows:
            pick = matcher.recommend(self.u[i])
            out[i] = pick
            if pick is not None and self.update_mode == UPDATE_ON_TRANSACTION:
                u_p = self.u[i][pick]
                if u_p > 0 and u_p >= self._world_surplus(i, friction):
                    matcher.transacted(pick)
        return out


def _platform_wins(u_p: float, u_w: float) -> bool:
    return u_p > 0 and u_p >= u_w


def estimate_buyer(
    ctx: CounterfactualContext, buyer_id: int, new_fees: FeeSchedule, new_friction: float
) -> SubscriptionEstimate:
    if buyer_id not in ctx.buyer_records:
        raise ValueError(f"buyer {buyer_id} absent from the ledger")
    rows = ctx.buyer_records[buyer_id]
    xi_w = sum(ctx._world_surplus(i, new_friction) for i in rows)
    if ctx.ledger.buyer_on_platform[buyer_id]:
        total = 0.0
        for i in rows:
            total += max(ctx._world_surplus(i, new_friction), ctx.records[i].platform_utility)
        xi_p = -new_fees.buyer_subscription + total
    else:
        matches = ctx.rematch(ctx.subscribed, new_friction, rows=rows)
        total = 0.0
        for i in rows:
            pick = matches[i]
            u_p = ctx.u[i][pick] if pick is not None else 0.0
            total += max(ctx._world_surplus(i, new_friction), u_p)
        xi_p = -new_fees.buyer_subscription + total
    return SubscriptionEstimate(xi_world=xi_w, xi_platform=xi_p)


def estimate_seller(
    ctx: CounterfactualContext, seller_id: int, new_fees: FeeSchedule, new_friction: float
) -> SubscriptionEstimate:
    if not 0 <= seller_id < ctx.n_sellers:
        raise ValueError(f"seller {seller_id} absent from the ledger")
    spec = ctx.market.sellers[seller_id]
    margin_world = spec.price * (1.0 - spec.cost_fraction)
    margin_platform = spec.price * (1.0 - spec.cost_fraction - new_fees.referral_rate)
    on = ctx.ledger.seller_on_platform[seller_id]
    ledger = ctx.ledger

    def world_wins(i: int, u_p: float) -> bool:
        u_w = ctx._world_surplus(i, new_friction)
        return u_w > 0 and not _platform_wins(u_p, u_w)

    if on:
        remaining = [s for s in ctx.subscribed if s != seller_id]
        rematched = ctx.rematch(remaining, new_friction)
        n_w_off = 0
        for i in ctx.by_world_best[seller_id]:
            pick = rematched.get(i)
            u_p = ctx.u[i][pick] if pick is not None else 0.0
            if world_wins(i, u_p):
                n_w_off += 1
        xi_w = n_w_off * margin_world
        n_p = sum(
            1
            for i in ctx.by_platform_candidate[seller_id]
            if _platform_wins(ctx.u[i][seller_id], ctx._world_surplus(i, new_friction))
        )
        n_w = sum(
            1 for i in ctx.by_world_best[seller_id] if world_wins(i, ctx.records[i].platform_utility)
        )
        xi_p = -new_fees.seller_subscription + n_p * margin_platform + n_w * margin_world
    else:
        joined = sorted(ctx.subscribed + [seller_id])
        rematched = ctx.rematch(joined, new_friction)
        n_p = 0
        for i, pick in rematched.items():
            if pick == seller_id and _platform_wins(ctx.u[i][seller_id], ctx._world_surplus(i, new_friction)):
                n_p += 1
        n_w = 0
        for i in ctx.by_world_best[seller_id]:
            if ledger.buyer_on_platform[ctx.records[i].buyer]:
                pick = rematched.get(i)
                u_p = ctx.u[i][pick] if pick is not None else 0.0
            else:
                u_p = 0.0
            if world_wins(i, u_p):
                n_w += 1
        xi_p = -new_fees.seller_subscription + n_p * margin_platform + n_w * margin_world
        n_w_off = sum(
            1 for i in ctx.by_world_best[seller_id] if world_wins(i, ctx.records[i].platform_utility)
        )
        xi_w = n_w_off * margin_world
    return SubscriptionEstimate(xi_world=xi_w, xi_platform=xi_p)


def estimate(
    kind: str,
    agent_id: int,
    prev_ledger: EpochLedger,
    new_fees: FeeSchedule,
    new_friction: float,
    market: Market,
    update_mode: str = UPDATE_ON_TRANSACTION,
    ctx: CounterfactualContext | None = None,
) -> SubscriptionEstimate:
    """Counterfactual (off-platform, on-platform) surplus for one agent."""
    if ctx is None:
        ctx = CounterfactualContext(prev_ledger, market, update_mode)
    if kind == "buyer":
        return estimate_buyer(ctx, agent_id, new_fees, new_friction)
    if kind == "seller":
        return estimate_seller(ctx, agent_id, new_fees, new_friction)
    raise ValueError(f"unknown agent kind {kind!r}")


@dataclass
class WakeOutcome:
    buyer_subscriptions: list[bool]
    seller_subscriptions: list[bool]
    woke_buyers: list[bool]
    woke_sellers: list[bool]


def wake_and_decide(
    buyer_states: list[AgentState],
    seller_states: list[AgentState],
    market: Market,
    prev_ledger: EpochLedger,
    new_fees: FeeSchedule,
    new_friction: float,
    rng: np.random.Generator,
    p_wake: float = 1.0,
    sleepers_accrue: bool = True,
    update_mode: str = UPDATE_ON_TRANSACTION,
) -> WakeOutcome:
    """Run one simultaneous subscription round and apply it atomically.

    Agents wake i.i.d. with probability ``p_wake``; sleepers repeat their
    previous choice (and, by default, keep accruing inertia for it).
    Bankrupt sellers never wake and never subscribe.
    """
    ctx = CounterfactualContext(prev_ledger, market, update_mode)
    buyer_dec: list[tuple[bool, bool]] = []
    for b, st in enumerate(buyer_states):
        woke = rng.random() < p_wake
        if woke:
            est = estimate_buyer(ctx, b, new_fees, new_friction)
            sub = subscribe_decision(est, inertia_bonus(st), rng)
        else:
            sub = st.on_platform
        buyer_dec.append((sub, woke))
    seller_dec: list[tuple[bool, bool]] = []
    for s, st in enumerate(seller_states):
        if st.bankrupt:
            seller_dec.append((False, False))
            continue
        woke = rng.random() < p_wake
        if woke:
            est = estimate_seller(ctx, s, new_fees, new_friction)
            sub = subscribe_decision(est, inertia_bonus(st), rng)
        else:
            sub = st.on_platform
        seller_dec.append((sub, woke))
    for st, (sub, woke) in zip(buyer_states, buyer_dec):
        if woke or sleepers_accrue:
            update_inertia(st, sub)
        st.on_platform = sub
    for st, (sub, woke) in zip(seller_states, seller_dec):
        if st.bankrupt:
            continue
        if woke or sleepers_accrue:
            update_inertia(st, sub)
        st.on_platform = sub
    return WakeOutcome(
        buyer_subscriptions=[d[0] for d in buyer_dec],
        seller_subscriptions=[d[0] for d in seller_dec],
        woke_buyers=[d[1] for d in buyer_dec],
        woke_sellers=[d[1] for d in seller_dec],
    )
