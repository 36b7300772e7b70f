"""Domain types and accounting identities shared by the whole engine.

All money and surplus amounts are plain 64-bit floats in one abstract unit.
The exact-arithmetic counterpart used by the toy-economy solver lives in
``platsim.oracle``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

PLATFORM = "platform"
WORLD = "world"
NONE = "none"

CHANNELS = (PLATFORM, WORLD, NONE)


class LatentPoint(NamedTuple):
    """A point in the two-dimensional latent space: taste and price level."""

    taste: float
    price_level: float

    def distance(self, other: "LatentPoint") -> float:
        return math.hypot(self.taste - other.taste, self.price_level - other.price_level)


def clip_point(taste: float, price_level: float) -> LatentPoint:
    """Clip both coordinates into [0, 1] componentwise."""
    return LatentPoint(min(max(taste, 0.0), 1.0), min(max(price_level, 0.0), 1.0))


def matching_utility(q: LatentPoint, s: LatentPoint, c: float = 2.0) -> float:
    """Matching quality of pairing query ``q`` with seller location ``s``.

    Decays exponentially in euclidean distance at rate ``c``; equals 1 only
    when the points coincide, and is always strictly positive.
    """
    if c <= 0:
        raise ValueError(f"utility decay rate must be positive, got {c}")
    return math.exp(-c * q.distance(s))


def transaction_seller_surplus(
    price: float, cost_fraction: float, referral_rate: float, channel: str
) -> float:
    """Net profit a seller books on one transaction over the given channel.

    Platform transactions pay the referral fee out of the sale price; world
    transactions do not.  May be negative when cost fraction plus referral
    rate exceed 1 (the seller cannot decline a transaction).
    """
    if channel == PLATFORM:
        return price * (1.0 - cost_fraction - referral_rate)
    if channel == WORLD:
        return price * (1.0 - cost_fraction)
    if channel == NONE:
        return 0.0
    raise ValueError(f"unknown channel {channel!r}")


@dataclass(frozen=True)
class BuyerSpec:
    id: int
    location: LatentPoint
    query_stddev: float
    known_sellers: frozenset[int]
    epoch_budget: float

    def __post_init__(self) -> None:
        if self.query_stddev < 0:
            raise ValueError("query_stddev must be nonnegative")
        if self.epoch_budget < 0:
            raise ValueError("epoch_budget must be nonnegative")


@dataclass(frozen=True)
class SellerSpec:
    id: int
    location: LatentPoint
    cost_fraction: float
    shutdown_threshold: int
    # Per-epoch fixed operating cost.  Zero in the full model; the toy
    # economy used for oracle verification sets it to the query multiplier.
    fixed_cost: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.cost_fraction < 1.0:
            raise ValueError("cost_fraction must lie in [0, 1)")
        if self.shutdown_threshold < 1:
            raise ValueError("shutdown_threshold must be >= 1")

    @property
    def price(self) -> float:
        return self.location.price_level


class FeeSchedule(NamedTuple):
    buyer_subscription: float
    seller_subscription: float
    referral_rate: float

    @staticmethod
    def zero() -> "FeeSchedule":
        return FeeSchedule(0.0, 0.0, 0.0)

    def validate(self) -> "FeeSchedule":
        if self.buyer_subscription < 0 or self.seller_subscription < 0:
            raise ValueError("subscription fees must be nonnegative")
        if not 0.0 <= self.referral_rate <= 1.0:
            raise ValueError("referral rate must lie in [0, 1]")
        return self


@dataclass
class AgentState:
    """Mutable per-agent state; buyers and sellers share the shape."""

    on_platform: bool = False
    inertia: int = 1
    budget_remaining: float = 0.0
    bankrupt: bool = False
    consecutive_nonpositive_epochs: int = 0
    epoch_surplus_world: float = 0.0
    epoch_surplus_platform: float = 0.0
    platform_tx_count: int = 0
    world_tx_count: int = 0

    def reset_epoch(self, budget: float = 0.0) -> None:
        self.budget_remaining = budget
        self.epoch_surplus_world = 0.0
        self.epoch_surplus_platform = 0.0
        self.platform_tx_count = 0
        self.world_tx_count = 0


class TxRecord(NamedTuple):
    """One query/transaction event.

    ``world_best`` is the budget-feasible utility-argmax known seller before
    the friction screen (what counterfactual estimates re-evaluate), while
    ``world_candidate`` is the post-screen option the buyer could actually
    pick at the recorded friction.
    """

    t: int
    buyer: int
    query: LatentPoint
    world_best: int | None
    world_best_utility: float
    world_candidate: int | None
    platform_candidate: int | None
    platform_utility: float
    chosen: int | None
    channel: str
    buyer_surplus: float


@dataclass
class EpochLedger:
    """Every transaction, fee, and surplus decomposition of one epoch."""

    epoch: int
    friction: float
    fees: FeeSchedule
    strategy: tuple[str, float] | None
    buyer_on_platform: list[bool]
    seller_on_platform: list[bool]
    seller_bankrupt_at_start: list[bool]
    records: list[TxRecord] = field(default_factory=list)
    # Raw per-timestep utility rows (one row per record, one column per
    # seller); kept so counterfactual replays never re-derive geometry.
    utilities: list[list[float]] = field(default_factory=list)

    buyer_world_surplus: list[float] = field(default_factory=list)
    buyer_platform_surplus: list[float] = field(default_factory=list)
    buyer_surplus: list[float] = field(default_factory=list)
    seller_world_surplus: list[float] = field(default_factory=list)
    seller_platform_surplus: list[float] = field(default_factory=list)
    seller_surplus: list[float] = field(default_factory=list)
    seller_platform_tx: list[int] = field(default_factory=list)
    seller_world_tx: list[int] = field(default_factory=list)
    revenue_buyer_subscriptions: float = 0.0
    revenue_seller_subscriptions: float = 0.0
    revenue_referrals: float = 0.0
    finalized: bool = False

    def n_buyers(self) -> int:
        return len(self.buyer_on_platform)

    def n_sellers(self) -> int:
        return len(self.seller_on_platform)

    def finalize(self, sellers: Sequence[SellerSpec]) -> "EpochLedger":
        """Close the epoch: fold transaction records into the channel splits."""
        nb, ns = self.n_buyers(), self.n_sellers()
        b_world = [0.0] * nb
        b_plat_match = [0.0] * nb
        n_p = [0] * ns
        n_w = [0] * ns
        for rec in self.records:
            if rec.channel == PLATFORM:
                b_plat_match[rec.buyer] += rec.buyer_surplus
                n_p[rec.chosen] += 1
            elif rec.channel == WORLD:
                b_world[rec.buyer] += rec.buyer_surplus
                n_w[rec.chosen] += 1

        fees = self.fees
        self.buyer_world_surplus = b_world
        self.buyer_platform_surplus = [
            b_plat_match[b] - (fees.buyer_subscription if self.buyer_on_platform[b] else 0.0)
            for b in range(nb)
        ]
        self.buyer_surplus = [
            self.buyer_world_surplus[b] + self.buyer_platform_surplus[b] for b in range(nb)
        ]
        self.seller_platform_tx = n_p
        self.seller_world_tx = n_w
        self.seller_world_surplus = [
            n_w[s] * sellers[s].price * (1.0 - sellers[s].cost_fraction) for s in range(ns)
        ]
        self.seller_platform_surplus = [
            n_p[s] * sellers[s].price * (1.0 - sellers[s].cost_fraction - fees.referral_rate)
            - (fees.seller_subscription if self.seller_on_platform[s] else 0.0)
            for s in range(ns)
        ]
        self.seller_surplus = [
            self.seller_world_surplus[s]
            + self.seller_platform_surplus[s]
            - (0.0 if self.seller_bankrupt_at_start[s] else sellers[s].fixed_cost)
            for s in range(ns)
        ]
        self.revenue_buyer_subscriptions = fees.buyer_subscription * sum(self.buyer_on_platform)
        self.revenue_seller_subscriptions = fees.seller_subscription * sum(self.seller_on_platform)
        self.revenue_referrals = sum(
            n_p[s] * sellers[s].price * fees.referral_rate for s in range(ns)
        )
        self.finalized = True
        return self

    @property
    def platform_revenue(self) -> float:
        return (
            self.revenue_buyer_subscriptions
            + self.revenue_seller_subscriptions
            + self.revenue_referrals
        )


class LedgerNotFinalized(RuntimeError):
    pass


def epoch_totals(ledger: EpochLedger) -> tuple[float, float, float, float]:
    """Return (buyer surplus, seller surplus, platform revenue, welfare).

    Welfare is the sum of the three components; raises on an open ledger.
    """
    if not ledger.finalized:
        raise LedgerNotFinalized("epoch_totals requires a finalized ledger")
    buyers = sum(ledger.buyer_surplus)
    sellers = sum(ledger.seller_surplus)
    revenue = ledger.platform_revenue
    return buyers, sellers, revenue, buyers + sellers + revenue


def replay_totals(ledger: EpochLedger, sellers: Sequence[SellerSpec]) -> tuple[float, float, float, float]:
    """Recompute epoch totals from raw transaction records alone.

    Folds the records with the same per-agent decomposition the ledger
    uses, so agreement is bit-exact rather than within rounding slack.
    """
    nb, ns = ledger.n_buyers(), ledger.n_sellers()
    fees = ledger.fees
    b_world = [0.0] * nb
    b_platform = [0.0] * nb
    n_p = [0] * ns
    n_w = [0] * ns
    for rec in ledger.records:
        if rec.channel == PLATFORM:
            b_platform[rec.buyer] += rec.buyer_surplus
            n_p[rec.chosen] += 1
        elif rec.channel == WORLD:
            b_world[rec.buyer] += rec.buyer_surplus
            n_w[rec.chosen] += 1
    buyers = sum(
        b_world[b] + (b_platform[b] - (fees.buyer_subscription if ledger.buyer_on_platform[b] else 0.0))
        for b in range(nb)
    )
    seller_total = sum(
        n_w[s] * sellers[s].price * (1.0 - sellers[s].cost_fraction)
        + (
            n_p[s] * sellers[s].price * (1.0 - sellers[s].cost_fraction - fees.referral_rate)
            - (fees.seller_subscription if ledger.seller_on_platform[s] else 0.0)
        )
        - (0.0 if ledger.seller_bankrupt_at_start[s] else sellers[s].fixed_cost)
        for s in range(ns)
    )
    revenue = (
        fees.buyer_subscription * sum(ledger.buyer_on_platform)
        + fees.seller_subscription * sum(ledger.seller_on_platform)
        + sum(n_p[s] * sellers[s].price * fees.referral_rate for s in range(ns))
    )
    return buyers, seller_total, revenue, buyers + seller_total + revenue


def ids_ascending(specs: Iterable[BuyerSpec] | Iterable[SellerSpec]) -> list[int]:
    return sorted(spec.id for spec in specs)
