import numpy as np
import pytest

from platsim.core import (
    NONE,
    PLATFORM,
    WORLD,
    AgentState,
    BuyerSpec,
    FeeSchedule,
    LatentPoint,
    SellerSpec,
    epoch_totals,
    replay_totals,
)
from platsim.dynamics import (
    EngineState,
    arrival_order,
    buyer_transact,
    close_epoch,
    exp_utility_matrix,
    gaussian_queries,
    run_epoch,
    world_choice,
)
from platsim.marketgen import Market, MarketStructure
from platsim.matching import Matcher, MatchingStrategy


def _market(n_buyers=3, n_sellers=3, rho=1.0, seed=5):
    rng = np.random.default_rng(seed)
    buyers = []
    for b in range(n_buyers):
        loc = LatentPoint(float(rng.random()), float(0.3 + 0.6 * rng.random()))
        known = frozenset(range(n_sellers)) if rho == 1.0 else frozenset(
            s for s in range(n_sellers) if rng.random() < rho
        )
        buyers.append(BuyerSpec(b, loc, 0.1, known, epoch_budget=loc.price_level * 20))
    sellers = [
        SellerSpec(s, LatentPoint(float(rng.random()), float(0.2 + 0.6 * rng.random())), 0.3, 2)
        for s in range(n_sellers)
    ]
    return Market(structure=MarketStructure(kind="uniform"), buyers=buyers, sellers=sellers)


def test_arrival_order_round_robin():
    order = arrival_order(10, 100)
    counts = {b: order.count(b) for b in range(10)}
    assert all(c == 10 for c in counts.values())
    assert order[:10] == list(range(10))


def test_world_choice_no_known_sellers():
    assert world_choice([], [0.5, 0.5], 0.1, [0.5, 0.5], [False, False], 1.0) == (None, 0.0, None, 0.0)


def test_world_choice_distance_zero():
    candidate, surplus, best, best_u = world_choice([0], [1.0], 0.1, [0.5], [False], 1.0)
    assert (candidate, best) == (0, 0)
    assert surplus == pytest.approx(0.9)
    assert best_u == 1.0


def test_world_choice_friction_screen():
    candidate, surplus, best, best_u = world_choice([0], [0.5], 0.6, [0.5], [False], 1.0)
    assert candidate is None and surplus == 0.0
    assert best == 0 and best_u == 0.5  # pre-screen argmax survives for replay


def test_world_choice_skips_bankrupt_and_over_budget():
    candidate, _, _, _ = world_choice([0, 1], [0.9, 0.8], 0.1, [0.5, 0.4], [True, False], 1.0)
    assert candidate == 1
    candidate, _, _, _ = world_choice([0, 1], [0.9, 0.8], 0.1, [2.0, 0.4], [False, False], 1.0)
    assert candidate == 1


def test_world_choice_tie_breaks_to_lowest_id():
    candidate, _, _, _ = world_choice([0, 1], [0.8, 0.8], 0.1, [0.5, 0.5], [False, False], 1.0)
    assert candidate == 0


def _transact(world, platform, on_platform=True):
    buyer_state = AgentState(on_platform=on_platform, budget_remaining=5.0)
    seller_states = [AgentState(on_platform=True), AgentState(on_platform=True)]
    outcome = buyer_transact(
        0,
        buyer_state,
        seller_states,
        prices=[0.5, 0.7],
        cost_fractions=[0.3, 0.3],
        fees=FeeSchedule(0.0, 0.0, 0.1),
        world_option=world,
        platform_option=platform,
        seller_on_platform=[True, True],
    )
    return outcome, buyer_state, seller_states


def test_buyer_transact_both_none():
    outcome, _, _ = _transact((None, 0.0), (None, 0.0))
    assert outcome.channel == NONE and outcome.buyer_surplus == 0.0


def test_buyer_transact_platform_beats_world():
    outcome, buyer, sellers = _transact((0, 0.3), (1, 0.8))
    assert outcome.channel == PLATFORM and outcome.chosen == 1
    assert outcome.buyer_surplus == pytest.approx(0.8)
    assert buyer.budget_remaining == pytest.approx(5.0 - 0.7)
    assert sellers[1].platform_tx_count == 1
    assert sellers[1].epoch_surplus_platform == pytest.approx(0.7 * (1 - 0.3 - 0.1))


def test_buyer_transact_equal_surplus_prefers_platform():
    outcome, _, _ = _transact((0, 0.8), (1, 0.8))
    assert outcome.channel == PLATFORM


def test_buyer_transact_world_wins():
    outcome, buyer, sellers = _transact((0, 0.9), (1, 0.2))
    assert outcome.channel == WORLD and outcome.chosen == 0
    assert sellers[0].world_tx_count == 1
    assert sellers[0].epoch_surplus_world == pytest.approx(0.5 * 0.7)


def test_buyer_transact_rejects_ineligible_platform_candidate():
    buyer_state = AgentState(on_platform=True, budget_remaining=5.0)
    with pytest.raises(ValueError):
        buyer_transact(
            0, buyer_state, [AgentState(bankrupt=True)], [0.5], [0.3],
            FeeSchedule.zero(), (None, 0.0), (0, 0.5), [True],
        )
    buyer_state = AgentState(on_platform=False)
    with pytest.raises(ValueError):
        buyer_transact(
            0, buyer_state, [AgentState(on_platform=True)], [0.5], [0.3],
            FeeSchedule.zero(), (None, 0.0), (0, 0.5), [True],
        )


def _run(market, fees=FeeSchedule.zero(), friction=0.1, T=30, subscribe_all=True, strategy=None, seed=0):
    state = EngineState.fresh(market)
    for st in state.buyer_states + state.seller_states:
        st.on_platform = subscribe_all
    rng = np.random.default_rng(seed)
    order = arrival_order(len(market.buyers), T)
    queries = gaussian_queries(market, order, rng)
    utilities = exp_utility_matrix(queries, market, 2.0)
    matcher = None
    if subscribe_all:
        matcher = Matcher(
            market.sellers, [s.id for s in market.sellers], fees,
            strategy or MatchingStrategy.myopic(),
        )
    ledger = run_epoch(state, fees, matcher, friction, queries, utilities, epoch=1, order=order)
    return state, ledger


def test_run_epoch_each_buyer_arrives_equally():
    market = _market()
    _, ledger = _run(market, T=30)
    counts = {b: 0 for b in range(3)}
    for rec in ledger.records:
        counts[rec.buyer] += 1
    assert all(c == 10 for c in counts.values())


def test_run_epoch_high_friction_forces_platform_channel():
    market = _market(rho=1.0)
    _, ledger = _run(market, friction=10.0)
    channels = {rec.channel for rec in ledger.records}
    assert WORLD not in channels
    assert PLATFORM in channels


def test_run_epoch_no_platform_pure_world():
    market = _market()
    _, ledger = _run(market, subscribe_all=False)
    assert all(rec.channel in (WORLD, NONE) for rec in ledger.records)
    assert ledger.platform_revenue == 0.0


def test_run_epoch_counts_match_ledger_records():
    market = _market()
    state, ledger = _run(market, fees=FeeSchedule(0.2, 0.4, 0.1))
    n_platform = sum(1 for r in ledger.records if r.channel == PLATFORM)
    n_world = sum(1 for r in ledger.records if r.channel == WORLD)
    assert sum(ledger.seller_platform_tx) == n_platform
    assert sum(ledger.seller_world_tx) == n_world
    assert sum(st.platform_tx_count for st in state.seller_states) == n_platform


def test_run_epoch_budget_never_negative_and_decrements_by_price():
    market = _market()
    state, ledger = _run(market)
    for b, st in enumerate(state.buyer_states):
        spent = sum(
            market.sellers[r.chosen].price
            for r in ledger.records
            if r.buyer == b and r.channel != NONE
        )
        assert st.budget_remaining == pytest.approx(market.buyers[b].epoch_budget - spent)
        assert st.budget_remaining >= -1e-12


def test_run_epoch_myopic_platform_wins_only_when_at_least_world():
    market = _market()
    _, ledger = _run(market, friction=0.3)
    for rec in ledger.records:
        if rec.channel == PLATFORM:
            world_surplus = max(rec.world_best_utility - 0.3, 0.0) if rec.world_best is not None else 0.0
            assert rec.platform_utility >= world_surplus


def test_run_epoch_replay_reproduces_totals():
    market = _market()
    _, ledger = _run(market, fees=FeeSchedule(0.4, 0.6, 0.2))
    assert epoch_totals(ledger) == pytest.approx(replay_totals(ledger, market.sellers), abs=0.0)


def test_run_epoch_deterministic():
    market = _market()
    _, a = _run(market, seed=9)
    _, b = _run(market, seed=9)
    assert a.records == b.records


def test_close_epoch_bankruptcy_after_two_nonpositive_epochs():
    market = _market()
    state = EngineState.fresh(market)
    # Seller 0 books zero surplus while a positive-fee subscription drains it.
    for round_ in range(2):
        rng = np.random.default_rng(100 + round_)
        order = arrival_order(3, 30)
        queries = gaussian_queries(market, order, rng)
        utilities = exp_utility_matrix(queries, market, 2.0)
        for st in state.seller_states:
            st.on_platform = not st.bankrupt
        for st in state.buyer_states:
            st.on_platform = False
        fees = FeeSchedule(0.0, 5.0, 0.0)
        matcher = Matcher(market.sellers, [s.id for s in market.sellers if not state.seller_states[s.id].bankrupt], fees, MatchingStrategy.myopic())
        ledger = run_epoch(state, fees, matcher, 10.0, queries, utilities, epoch=round_ + 1, order=order)
        close_epoch(state, ledger)
    assert all(st.bankrupt for st in state.seller_states)


def test_close_epoch_positive_surplus_resets_counter():
    market = _market()
    state = EngineState.fresh(market)
    state.seller_states[0].consecutive_nonpositive_epochs = 1
    for st in state.buyer_states + state.seller_states:
        st.on_platform = True
    rng = np.random.default_rng(3)
    order = arrival_order(3, 60)
    queries = gaussian_queries(market, order, rng)
    utilities = exp_utility_matrix(queries, market, 2.0)
    matcher = Matcher(market.sellers, [0, 1, 2], FeeSchedule.zero(), MatchingStrategy.myopic())
    ledger = run_epoch(state, FeeSchedule.zero(), matcher, 0.1, queries, utilities, epoch=1, order=order)
    close_epoch(state, ledger)
    for s, st in enumerate(state.seller_states):
        if ledger.seller_surplus[s] > 0:
            assert st.consecutive_nonpositive_epochs == 0


def test_bankrupt_seller_receives_nothing_later():
    market = _market()
    state = EngineState.fresh(market)
    state.seller_states[0].bankrupt = True
    for st in state.buyer_states:
        st.on_platform = True
    for s, st in enumerate(state.seller_states):
        st.on_platform = s != 0
    rng = np.random.default_rng(4)
    order = arrival_order(3, 30)
    queries = gaussian_queries(market, order, rng)
    utilities = exp_utility_matrix(queries, market, 2.0)
    matcher = Matcher(market.sellers, [1, 2], FeeSchedule.zero(), MatchingStrategy.myopic())
    ledger = run_epoch(state, FeeSchedule.zero(), matcher, 0.1, queries, utilities, epoch=1, order=order)
    assert ledger.seller_platform_tx[0] == 0
    assert ledger.seller_world_tx[0] == 0
    assert ledger.seller_surplus[0] == 0.0
