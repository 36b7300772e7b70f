"""Samplers for market structures, knowledge matrices, and shock schedules.

Every sampler is a pure function of (parameters, seed); seeds are split
hierarchically so varying e.g. the knowledge seed never perturbs locations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BuyerSpec, LatentPoint, SellerSpec, clip_point

UNIFORM = "uniform"
CORE_NICHE = "core_niche"
TWO_CORE = "two_core"

STRUCTURE_KINDS = (UNIFORM, CORE_NICHE, TWO_CORE)

_REJECTION_GUARD = 10**6

SELLER_CLASSES = ("core", "niche", "cheap", "other")


@dataclass(frozen=True)
class MarketStructure:
    kind: str = CORE_NICHE
    core_mean: tuple[float, float] = (0.5, 0.4)
    core_std: float = 0.2
    two_core_means: tuple[tuple[float, float], tuple[float, float]] = ((0.7, 0.3), (0.3, 0.7))
    two_core_std: float = 0.17

    def __post_init__(self) -> None:
        if self.kind not in STRUCTURE_KINDS:
            raise ValueError(f"unknown market structure {self.kind!r}; expected one of {STRUCTURE_KINDS}")


@dataclass(frozen=True)
class ShockSchedule:
    """Per-epoch world frictions with pre/shock/post stage labels."""

    frictions: tuple[float, ...]
    stages: tuple[str, ...]
    intensity: float

    def __post_init__(self) -> None:
        if len(self.frictions) != len(self.stages):
            raise ValueError("frictions and stages must have equal length")

    def friction(self, epoch: int) -> float:
        # Epochs are 1-based; epoch 0 is the warm-up and anything past the
        # schedule reuses the post-shock base level.
        if epoch < 1 or epoch > len(self.frictions):
            return self.frictions[-1] if self.frictions else 0.1
        return self.frictions[epoch - 1]

    def stage(self, epoch: int) -> str:
        if epoch < 1:
            return "pre"
        if epoch > len(self.stages):
            return "post"
        return self.stages[epoch - 1]


@dataclass
class Market:
    """An instantiated market: agents, knowledge, and the structure used."""

    structure: MarketStructure
    buyers: list[BuyerSpec]
    sellers: list[SellerSpec]
    knowledge: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))

    def known_ids(self, buyer_id: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.knowledge[buyer_id]).tolist())


def _truncated_gaussian(rng: np.random.Generator, mean: tuple[float, float], std: float) -> LatentPoint:
    for _ in range(_REJECTION_GUARD):
        x, y = rng.normal(mean, std)
        if 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0:
            return LatentPoint(float(x), float(y))
    raise RuntimeError("truncated-Gaussian rejection sampler exceeded its guard")


def _sample_locations(structure: MarketStructure, n: int, rng: np.random.Generator) -> list[LatentPoint]:
    if structure.kind == UNIFORM:
        pts = rng.uniform(0.0, 1.0, size=(n, 2))
        return [LatentPoint(float(x), float(y)) for x, y in pts]
    if structure.kind == CORE_NICHE:
        return [_truncated_gaussian(rng, structure.core_mean, structure.core_std) for _ in range(n)]
    # Two-Core: half the agents per core; an odd count puts the extra agent
    # in the first core.
    first = n - n // 2
    pts = []
    for i in range(n):
        mean = structure.two_core_means[0] if i < first else structure.two_core_means[1]
        pts.append(_truncated_gaussian(rng, mean, structure.two_core_std))
    return pts


def sample_market(
    structure: MarketStructure,
    n_buyers: int,
    n_sellers: int,
    seed: int | np.random.SeedSequence,
    arrivals_per_epoch: int = 10,
    query_variance: float = 0.02,
    cost_fraction_range: tuple[float, float] = (0.2, 0.4),
    shutdown_threshold: int = 2,
) -> tuple[list[BuyerSpec], list[SellerSpec]]:
    """Draw buyer and seller specs for the given structure.

    Buyer budgets follow the price-preference rule: epoch budget equals the
    buyer's price level times its arrivals per epoch.  Knowledge sets start
    empty; attach them with :func:`sample_knowledge`.
    """
    if n_buyers < 1 or n_sellers < 1:
        raise ValueError("n_buyers and n_sellers must be positive")
    rng = np.random.default_rng(seed)
    sigma_q = math.sqrt(query_variance)
    buyer_locs = _sample_locations(structure, n_buyers, rng)
    seller_locs = _sample_locations(structure, n_sellers, rng)
    omegas = rng.uniform(cost_fraction_range[0], cost_fraction_range[1], size=n_sellers)
    buyers = [
        BuyerSpec(
            id=b,
            location=loc,
            query_stddev=sigma_q,
            known_sellers=frozenset(),
            epoch_budget=loc.price_level * arrivals_per_epoch,
        )
        for b, loc in enumerate(buyer_locs)
    ]
    sellers = [
        SellerSpec(
            id=s,
            location=loc,
            cost_fraction=float(omegas[s]),
            shutdown_threshold=shutdown_threshold,
        )
        for s, loc in enumerate(seller_locs)
    ]
    return buyers, sellers


def sample_knowledge(
    n_buyers: int, n_sellers: int, rho: float, seed: int | np.random.SeedSequence
) -> np.ndarray:
    """Boolean buyers x sellers matrix with i.i.d. Bernoulli(rho) entries."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    return rng.random(size=(n_buyers, n_sellers)) < rho


def sample_shock_schedule(
    K: int = 12,
    pre: int = 3,
    post: int = 3,
    I_min: float = 0.8,
    I_max: float = 1.0,
    base_friction: float = 0.1,
    seed: int | np.random.SeedSequence = 0,
) -> ShockSchedule:
    """Draw one episode's friction path: base, lognormal shock, base.

    The shock stage draws Lognormal(0, 0.5) frictions scaled by an episode
    intensity I ~ U[I_min, I_max]; a degenerate zero draw falls back to the
    base friction so every epoch keeps a positive friction.
    """
    if pre < 3 or post < 3:
        raise ValueError("pre and post stages must each cover at least 3 epochs")
    if pre + post >= K:
        raise ValueError(f"pre+post ({pre + post}) must leave at least one shock epoch of K={K}")
    if base_friction <= 0:
        raise ValueError("base friction must be positive")
    rng = np.random.default_rng(seed)
    intensity = float(rng.uniform(I_min, I_max))
    n_shock = K - pre - post
    draws = rng.lognormal(mean=0.0, sigma=0.5, size=n_shock)
    frictions = [base_friction] * pre
    stages = ["pre"] * pre
    for d in draws:
        mu = intensity * float(d)
        frictions.append(mu if mu > 0 else base_friction)
        stages.append("shock")
    frictions.extend([base_friction] * post)
    stages.extend(["post"] * post)
    return ShockSchedule(tuple(frictions), tuple(stages), intensity)


def _nearby_buyers(seller: SellerSpec, buyers: list[BuyerSpec], radius: float) -> int:
    return sum(1 for b in buyers if b.location.distance(seller.location) <= radius)


def seller_class(
    seller: SellerSpec,
    market: Market,
    cheap_rule: str = "quartile",
    cheap_cutoff: float = 0.2,
) -> str:
    """Classify a seller as cheap, core, niche, or other.

    Cheap takes precedence when classes overlap.  Core/niche need a centered
    structure; uniform markets only ever report cheap/other.
    """
    prices = [s.price for s in market.sellers]
    if cheap_rule == "quartile":
        cheap = seller.price <= float(np.quantile(prices, 0.25))
    elif cheap_rule == "cutoff":
        cheap = seller.price < cheap_cutoff
    else:
        raise ValueError(f"unknown cheap rule {cheap_rule!r}")
    if cheap:
        return "cheap"
    structure = market.structure
    if structure.kind == UNIFORM:
        return "other"
    if structure.kind == CORE_NICHE:
        center = LatentPoint(*structure.core_mean)
        sigma = structure.core_std
    else:
        means = [LatentPoint(*m) for m in structure.two_core_means]
        center = min(means, key=lambda m: seller.location.distance(m))
        sigma = structure.two_core_std
    dist = seller.location.distance(center)
    nearby = _nearby_buyers(seller, market.buyers, sigma)
    if dist <= sigma and nearby >= 2:
        return "core"
    if dist > 2.0 * sigma and nearby <= 1:
        return "niche"
    return "other"
