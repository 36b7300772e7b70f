import numpy as np
import pytest

from platsim.core import FeeSchedule, LatentPoint, SellerSpec, matching_utility
from platsim.matching import (
    PROFIT_DRIVEN,
    SELLER_AWARE,
    Matcher,
    MatchingStrategy,
    all_strategies,
    myopic,
    recommend,
)


def _sellers(locs_prices):
    return [
        SellerSpec(i, LatentPoint(x, p), 0.3, 2) for i, (x, p) in enumerate(locs_prices)
    ]


def _tracker(sellers, value=0.0):
    return {s.id: value for s in sellers}


def test_strategy_grid_and_count():
    strategies = all_strategies()
    assert len(strategies) == 21
    assert len(set(strategies)) == 21
    # eta = 1 appears once; the duplicate profit-driven row is dropped.
    assert sum(1 for s in strategies if s.threshold == 1.0) == 1


def test_strategy_rejects_off_grid_threshold():
    with pytest.raises(ValueError):
        MatchingStrategy(SELLER_AWARE, 0.55)
    with pytest.raises(ValueError):
        MatchingStrategy("greedy", 0.5)


def test_recommend_eta_one_is_utility_argmax():
    sellers = _sellers([(0.1, 0.9), (0.45, 0.2), (0.8, 0.5)])
    query = LatentPoint(0.5, 0.35)
    for rule in (SELLER_AWARE, PROFIT_DRIVEN):
        pick = recommend(query, sellers, MatchingStrategy(rule, 1.0), _tracker(sellers), FeeSchedule.zero())
        assert pick == myopic(query, sellers)


def test_recommend_seller_aware_prefers_closest_to_break_even():
    # Two co-located candidates so both clear any threshold; trackers below
    # zero pick the one closest to break-even.
    sellers = _sellers([(0.5, 0.4), (0.5, 0.6)])
    tracker = {0: -2.0, 1: -2.0 + 0.3}
    pick = recommend(
        LatentPoint(0.5, 0.5), sellers, MatchingStrategy(SELLER_AWARE, 0.5), tracker, FeeSchedule.zero()
    )
    assert pick == 1


def test_recommend_seller_aware_all_above_break_even_picks_min():
    sellers = _sellers([(0.5, 0.4), (0.5, 0.6)])
    tracker = {0: 0.7, 1: 0.2}
    pick = recommend(
        LatentPoint(0.5, 0.5), sellers, MatchingStrategy(SELLER_AWARE, 0.5), tracker, FeeSchedule.zero()
    )
    assert pick == 1


def test_recommend_profit_driven_picks_most_expensive():
    sellers = _sellers([(0.5, 0.4), (0.52, 0.9)])
    pick = recommend(
        LatentPoint(0.5, 0.5), sellers, MatchingStrategy(PROFIT_DRIVEN, 0.0),
        _tracker(sellers), FeeSchedule(0.0, 0.0, 0.1),
    )
    assert pick == 1


def test_recommend_empty_subscription_returns_none():
    assert recommend(LatentPoint(0.5, 0.5), [], MatchingStrategy.myopic(), {}, FeeSchedule.zero()) is None


def test_recommend_rejects_bad_fees():
    sellers = _sellers([(0.5, 0.4)])
    with pytest.raises(ValueError):
        recommend(LatentPoint(0.5, 0.5), sellers, MatchingStrategy.myopic(), _tracker(sellers), FeeSchedule(-1.0, 0.0, 0.0))


def test_myopic_single_seller_and_tie_rule():
    sellers = _sellers([(0.4, 0.5)])
    assert myopic(LatentPoint(0.9, 0.9), sellers) == 0
    tied = _sellers([(0.4, 0.5), (0.6, 0.5)])
    assert myopic(LatentPoint(0.5, 0.5), tied) == 0  # equidistant -> lowest id


def test_recommend_matches_myopic_on_random_queries():
    rng = np.random.default_rng(2024)
    sellers = _sellers([(x, p) for x, p in rng.random((8, 2))])
    tracker = _tracker(sellers, value=-1.0)
    strategy = MatchingStrategy(SELLER_AWARE, 1.0)
    for _ in range(1000):
        q = LatentPoint(*rng.random(2))
        assert recommend(q, sellers, strategy, tracker, FeeSchedule.zero()) == myopic(q, sellers)


def test_recommended_seller_meets_threshold():
    rng = np.random.default_rng(7)
    sellers = _sellers([(x, p) for x, p in rng.random((6, 2))])
    for strategy in all_strategies():
        tracker = {s.id: float(rng.normal()) for s in sellers}
        for _ in range(50):
            q = LatentPoint(*rng.random(2))
            pick = recommend(q, sellers, strategy, tracker, FeeSchedule(0.2, 0.2, 0.1))
            u_star = max(matching_utility(q, s.location) for s in sellers)
            assert pick is not None
            assert matching_utility(q, sellers[pick].location) >= strategy.threshold * u_star


def test_seller_aware_never_much_worse_than_myopic():
    rng = np.random.default_rng(77)
    sellers = _sellers([(x, p) for x, p in rng.random((6, 2))])
    strategy = MatchingStrategy(SELLER_AWARE, 0.6)
    tracker = {s.id: float(rng.normal()) for s in sellers}
    for _ in range(300):
        q = LatentPoint(*rng.random(2))
        pick = recommend(q, sellers, strategy, tracker, FeeSchedule.zero())
        best = matching_utility(q, sellers[myopic(q, sellers)].location)
        assert matching_utility(q, sellers[pick].location) >= 0.6 * best


def test_matcher_tracker_matches_ledger_platform_surplus():
    # Tracker initialized at -P_S and bumped per transaction must equal the
    # seller's platform epoch surplus from the accounting identities.
    sellers = _sellers([(0.2, 0.5), (0.7, 0.8)])
    fees = FeeSchedule(0.0, 1.4, 0.1)
    matcher = Matcher(sellers, [0, 1], fees, MatchingStrategy(SELLER_AWARE, 0.5))
    tx_counts = {0: 3, 1: 1}
    for sid, n in tx_counts.items():
        for _ in range(n):
            matcher.transacted(sid)
    for s in sellers:
        expected = (
            tx_counts[s.id] * s.price * (1 - s.cost_fraction - fees.referral_rate)
            - fees.seller_subscription
        )
        assert matcher.tracker.values[s.id] == pytest.approx(expected, abs=1e-12)


def test_matcher_update_on_recommendation_mode():
    sellers = _sellers([(0.2, 0.5), (0.7, 0.8)])
    fees = FeeSchedule(0.0, 0.0, 0.0)
    matcher = Matcher(sellers, [0, 1], fees, MatchingStrategy.myopic(), update_mode="on_recommendation")
    before = dict(matcher.tracker.values)
    pick = matcher.recommend([0.9, 0.1])
    assert pick == 0
    assert matcher.tracker.values[0] > before[0]
