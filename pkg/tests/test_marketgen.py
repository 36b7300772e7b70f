import math

import numpy as np
import pytest

from platsim.core import LatentPoint, SellerSpec
from platsim.marketgen import (
    CORE_NICHE,
    TWO_CORE,
    UNIFORM,
    Market,
    MarketStructure,
    sample_knowledge,
    sample_market,
    sample_shock_schedule,
    seller_class,
)


def test_sample_market_deterministic_under_seed():
    structure = MarketStructure(kind=UNIFORM)
    a = sample_market(structure, 8, 6, seed=42)
    b = sample_market(structure, 8, 6, seed=42)
    assert a == b
    c = sample_market(structure, 8, 6, seed=43)
    assert a != c


def test_sample_market_rejects_nonpositive_counts():
    with pytest.raises(ValueError):
        sample_market(MarketStructure(kind=UNIFORM), 0, 5, seed=1)
    with pytest.raises(ValueError):
        sample_market(MarketStructure(kind=UNIFORM), 5, -1, seed=1)


def test_sample_market_defaults():
    buyers, sellers = sample_market(MarketStructure(kind=UNIFORM), 5, 5, seed=0, arrivals_per_epoch=10)
    for b in buyers:
        assert 0.0 <= b.location.taste <= 1.0
        assert b.query_stddev == pytest.approx(math.sqrt(0.02))
        assert b.epoch_budget == pytest.approx(b.location.price_level * 10)
    for s in sellers:
        assert 0.2 <= s.cost_fraction <= 0.4
        assert s.shutdown_threshold == 2


def test_core_niche_locations_concentrate_near_center():
    buyers, sellers = sample_market(MarketStructure(kind=CORE_NICHE), 5000, 5000, seed=7)
    pts = np.array([(a.location.taste, a.location.price_level) for a in buyers + sellers])
    mean = pts.mean(axis=0)
    # Truncation pulls the mean slightly off (0.5, 0.4); 0.02 absorbs it.
    assert abs(mean[0] - 0.5) < 0.02
    assert abs(mean[1] - 0.4) < 0.02
    assert pts.min() >= 0.0 and pts.max() <= 1.0


def test_two_core_split_assignment():
    # Well-separated cores make the half-and-half construction visible in
    # the sampled points themselves.
    structure = MarketStructure(
        kind=TWO_CORE, two_core_means=((0.1, 0.1), (0.9, 0.9)), two_core_std=0.05
    )
    m1 = LatentPoint(*structure.two_core_means[0])
    m2 = LatentPoint(*structure.two_core_means[1])
    _, sellers = sample_market(structure, 2, 10, seed=3)
    near_first = sum(1 for s in sellers if s.location.distance(m1) < s.location.distance(m2))
    assert near_first == 5
    _, odd = sample_market(structure, 2, 7, seed=3)
    near_first_odd = sum(1 for s in odd if s.location.distance(m1) < s.location.distance(m2))
    assert near_first_odd == 4  # extra agent goes to the first core


def test_two_core_default_split_statistics():
    structure = MarketStructure(kind=TWO_CORE)
    m1 = LatentPoint(*structure.two_core_means[0])
    m2 = LatentPoint(*structure.two_core_means[1])
    _, sellers = sample_market(structure, 2, 10000, seed=3)
    near_first = sum(1 for s in sellers if s.location.distance(m1) < s.location.distance(m2))
    assert abs(near_first / 10000 - 0.5) < 0.03


@pytest.mark.parametrize("rho,expected", [(0.0, 0.0), (1.0, 1.0)])
def test_sample_knowledge_degenerate(rho, expected):
    matrix = sample_knowledge(6, 7, rho, seed=1)
    assert matrix.shape == (6, 7)
    assert matrix.mean() == expected


def test_sample_knowledge_density():
    total = 0.0
    n = 200
    for seed in range(n):
        total += sample_knowledge(10, 10, 0.2, seed=seed).mean()
    # 20000 Bernoulli(0.2) draws; three standard errors.
    se = math.sqrt(0.2 * 0.8 / (100 * n))
    assert abs(total / n - 0.2) < 3 * se


def test_sample_knowledge_rejects_bad_rho():
    with pytest.raises(ValueError):
        sample_knowledge(2, 2, 1.5, seed=0)


def test_shock_schedule_default_shape():
    sched = sample_shock_schedule(K=12, pre=3, post=3, I_min=0.8, I_max=1.0, seed=5)
    assert len(sched.frictions) == 12
    assert sched.stages[:3] == ("pre",) * 3
    assert sched.stages[-3:] == ("post",) * 3
    assert sched.stages[3:9] == ("shock",) * 6
    assert all(f == 0.1 for f in sched.frictions[:3])
    assert all(f == 0.1 for f in sched.frictions[-3:])
    assert all(f > 0 for f in sched.frictions)
    assert 0.8 <= sched.intensity <= 1.0


def test_shock_schedule_degenerate_intensity_falls_back_to_base():
    sched = sample_shock_schedule(K=12, pre=3, post=3, I_min=0.0, I_max=0.0, seed=5)
    assert all(f == 0.1 for f in sched.frictions)


def test_shock_schedule_rejects_infeasible_stages():
    with pytest.raises(ValueError):
        sample_shock_schedule(K=6, pre=3, post=3, seed=0)
    with pytest.raises(ValueError):
        sample_shock_schedule(K=12, pre=2, post=3, seed=0)


def test_shock_schedule_mean_matches_lognormal_formula():
    total, count = 0.0, 0
    for seed in range(2000):
        sched = sample_shock_schedule(K=12, pre=3, post=3, I_min=0.8, I_max=1.0, seed=seed)
        shock = [f for f, s in zip(sched.frictions, sched.stages) if s == "shock"]
        total += sum(shock)
        count += len(shock)
    expected = 0.9 * math.exp(0.5**2 / 2)
    assert abs(total / count - expected) / expected < 0.05


def _market_for_classes():
    structure = MarketStructure(kind=CORE_NICHE)
    buyers, sellers = sample_market(structure, 10, 10, seed=9)
    return Market(structure=structure, buyers=buyers, sellers=sellers)


def test_seller_class_cheap_takes_precedence():
    market = _market_for_classes()
    cheapest = min(market.sellers, key=lambda s: s.price)
    assert seller_class(cheapest, market) == "cheap"


def test_seller_class_core_by_construction():
    structure = MarketStructure(kind=CORE_NICHE)
    center = LatentPoint(*structure.core_mean)
    buyers, _ = sample_market(structure, 10, 10, seed=9)
    # Place the seller at the center with an expensive price so the cheap
    # rule cannot shadow the core label; center buyers are plentiful.
    seller = SellerSpec(0, LatentPoint(center.taste, center.price_level), 0.3, 2)
    market = Market(structure=structure, buyers=buyers, sellers=[seller] + [
        SellerSpec(i, LatentPoint(0.9, 0.05 * i), 0.3, 2) for i in range(1, 5)
    ])
    assert seller_class(seller, market) == "core"


def test_seller_class_uniform_only_cheap_or_other():
    structure = MarketStructure(kind=UNIFORM)
    buyers, sellers = sample_market(structure, 10, 10, seed=11)
    market = Market(structure=structure, buyers=buyers, sellers=sellers)
    labels = {seller_class(s, market) for s in sellers}
    assert labels <= {"cheap", "other"}


def test_seller_class_deterministic():
    market = _market_for_classes()
    first = [seller_class(s, market) for s in market.sellers]
    second = [seller_class(s, market) for s in market.sellers]
    assert first == second


def test_seller_class_cutoff_rule():
    market = _market_for_classes()
    labels = [seller_class(s, market, cheap_rule="cutoff", cheap_cutoff=0.2) for s in market.sellers]
    for s, label in zip(market.sellers, labels):
        assert (label == "cheap") == (s.price < 0.2) or label != "cheap"
