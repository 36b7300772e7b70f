"""Platform query-matching strategies: myopic, seller-aware, profit-driven.

A strategy is a (rule, threshold) pair.  The threshold eta keeps every
candidate whose utility reaches eta times the myopic optimum; the rule picks
among candidates.  eta = 1 collapses both rules to myopic matching.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import FeeSchedule, LatentPoint, SellerSpec, matching_utility

SELLER_AWARE = "seller_aware"
PROFIT_DRIVEN = "profit_driven"
RULES = (SELLER_AWARE, PROFIT_DRIVEN)

THRESHOLD_TICKS = 11  # eta on a 0.1 grid over [0, 1]

UPDATE_ON_TRANSACTION = "post_transaction"
UPDATE_ON_RECOMMENDATION = "on_recommendation"


@dataclass(frozen=True)
class MatchingStrategy:
    rule: str
    threshold: float

    def __post_init__(self) -> None:
        if self.rule not in RULES:
            raise ValueError(f"unknown matching rule {self.rule!r}")
        tick = round(self.threshold * 10)
        if not 0 <= tick <= 10 or abs(self.threshold - tick / 10.0) > 1e-9:
            raise ValueError(f"threshold must sit on the 0.1 grid in [0, 1], got {self.threshold}")

    @property
    def threshold_tick(self) -> int:
        return round(self.threshold * 10)

    @staticmethod
    def myopic() -> "MatchingStrategy":
        return MatchingStrategy(SELLER_AWARE, 1.0)


def all_strategies() -> list[MatchingStrategy]:
    """The 21 distinct strategies: both rules coincide at eta = 1."""
    out = [MatchingStrategy(SELLER_AWARE, t / 10.0) for t in range(11)]
    out.extend(MatchingStrategy(PROFIT_DRIVEN, t / 10.0) for t in range(10))
    return out


def select_candidate(
    utilities: Sequence[float],
    subscribed: Sequence[int],
    prices: Sequence[float],
    strategy: MatchingStrategy,
    tracker: dict[int, float],
) -> int | None:
    """Pick the recommended seller for one query.

    ``utilities`` is indexed by seller id; ``subscribed`` lists the eligible
    (subscribed, non-bankrupt) seller ids.  Ties inside the rule go to the
    buyer (highest utility), then to the lowest seller id.
    """
    if not subscribed:
        return None
    u_star = max(utilities[s] for s in subscribed)
    floor = strategy.threshold * u_star
    candidates = [s for s in subscribed if utilities[s] >= floor]
    if not candidates:
        # Only reachable with negative utilities (linear toy translation);
        # the myopic optimum always qualifies.
        candidates = [s for s in subscribed if utilities[s] == u_star]
    if len(candidates) == 1:
        return candidates[0]
    if strategy.rule == SELLER_AWARE:
        below = [s for s in candidates if tracker[s] <= 0.0]
        pool = below if below else candidates
        # Closest to break-even among loss-makers, otherwise smallest surplus
        # overall; either way the buyer breaks remaining ties.
        target = max(tracker[s] for s in pool) if below else min(tracker[s] for s in pool)
        level = [s for s in pool if tracker[s] == target]
    else:
        top_price = max(prices[s] for s in candidates)
        level = [s for s in candidates if prices[s] == top_price]
    if len(level) == 1:
        return level[0]
    best_u = max(utilities[s] for s in level)
    return min(s for s in level if utilities[s] == best_u)


def recommend(
    query: LatentPoint,
    subscribed_sellers: Sequence[SellerSpec],
    strategy: MatchingStrategy,
    tracker: dict[int, float],
    fees: FeeSchedule,
    c: float = 2.0,
) -> int | None:
    """Functional form of the per-query strategy over seller specs.

    The tracker maps seller id to its running platform surplus for the
    epoch; callers report completed transactions back via the tracker (see
    :class:`SurplusTracker`).
    """
    fees.validate()
    if not subscribed_sellers:
        return None
    max_id = max(s.id for s in subscribed_sellers)
    utilities = [0.0] * (max_id + 1)
    prices = [0.0] * (max_id + 1)
    for spec in subscribed_sellers:
        utilities[spec.id] = matching_utility(query, spec.location, c)
        prices[spec.id] = spec.price
    ids = sorted(s.id for s in subscribed_sellers)
    return select_candidate(utilities, ids, prices, strategy, tracker)


def myopic(query: LatentPoint, subscribed_sellers: Sequence[SellerSpec], c: float = 2.0) -> int | None:
    """Recommend the utility-argmax subscribed seller; ties to lowest id."""
    best_id: int | None = None
    best_u = -1.0
    for spec in sorted(subscribed_sellers, key=lambda s: s.id):
        u = matching_utility(query, spec.location, c)
        if u > best_u:
            best_id, best_u = spec.id, u
    return best_id


class SurplusTracker:
    """Running per-seller platform-surplus estimate for the matching rules.

    Initialized to minus the seller subscription fee for subscribed sellers
    and zero otherwise; bumped by the seller's per-transaction net margin.
    """

    def __init__(self, sellers: Sequence[SellerSpec], subscribed: Sequence[int], fees: FeeSchedule):
        self.values: dict[int, float] = {s.id: 0.0 for s in sellers}
        for sid in subscribed:
            self.values[sid] = -fees.seller_subscription
        self._margin = {
            s.id: s.price * (1.0 - s.cost_fraction - fees.referral_rate) for s in sellers
        }

    def record(self, seller_id: int) -> None:
        self.values[seller_id] += self._margin[seller_id]


class Matcher:
    """Per-epoch matcher binding a strategy, tracker, and eligible sellers."""

    def __init__(
        self,
        sellers: Sequence[SellerSpec],
        subscribed: Sequence[int],
        fees: FeeSchedule,
        strategy: MatchingStrategy,
        update_mode: str = UPDATE_ON_TRANSACTION,
    ):
        if update_mode not in (UPDATE_ON_TRANSACTION, UPDATE_ON_RECOMMENDATION):
            raise ValueError(f"unknown tracker update mode {update_mode!r}")
        self.strategy = strategy
        self.subscribed = sorted(subscribed)
        self.prices = [0.0] * (max((s.id for s in sellers), default=-1) + 1)
        for s in sellers:
            self.prices[s.id] = s.price
        self.tracker = SurplusTracker(sellers, self.subscribed, fees)
        self.update_mode = update_mode

    def recommend(self, utilities: Sequence[float]) -> int | None:
        pick = select_candidate(utilities, self.subscribed, self.prices, self.strategy, self.tracker.values)
        if pick is not None and self.update_mode == UPDATE_ON_RECOMMENDATION:
            self.tracker.record(pick)
        return pick

    def transacted(self, seller_id: int) -> None:
        if self.update_mode == UPDATE_ON_TRANSACTION:
            self.tracker.record(seller_id)
