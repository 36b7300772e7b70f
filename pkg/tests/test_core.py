import math

import pytest

from platsim.core import (
    NONE,
    PLATFORM,
    WORLD,
    EpochLedger,
    FeeSchedule,
    LatentPoint,
    LedgerNotFinalized,
    SellerSpec,
    TxRecord,
    clip_point,
    epoch_totals,
    matching_utility,
    replay_totals,
    transaction_seller_surplus,
)


def test_matching_utility_identity_case():
    p = LatentPoint(0.3, 0.7)
    assert matching_utility(p, p) == 1.0
    assert matching_utility(p, p, c=17.0) == 1.0


def test_matching_utility_known_distance():
    q = LatentPoint(0.0, 0.0)
    s = LatentPoint(0.3, 0.4)  # distance 0.5
    assert matching_utility(q, s, c=2.0) == pytest.approx(math.exp(-1.0), abs=1e-12)


def test_matching_utility_exponent_algebra():
    q = LatentPoint(0.1, 0.9)
    s = LatentPoint(0.8, 0.25)
    u2 = matching_utility(q, s, c=2.0)
    u4 = matching_utility(q, s, c=4.0)
    assert u4 == pytest.approx(u2**2, rel=1e-12)


def test_matching_utility_decreases_with_distance():
    q = LatentPoint(0.5, 0.5)
    utilities = [
        matching_utility(q, LatentPoint(0.5 + d, 0.5)) for d in (0.0, 0.1, 0.2, 0.4, 0.5)
    ]
    assert all(0.0 < u <= 1.0 for u in utilities)
    assert utilities == sorted(utilities, reverse=True)


def test_matching_utility_rejects_bad_decay():
    with pytest.raises(ValueError):
        matching_utility(LatentPoint(0, 0), LatentPoint(1, 1), c=0.0)


def test_clip_point():
    assert clip_point(-0.5, 1.5) == LatentPoint(0.0, 1.0)
    assert clip_point(0.25, 0.75) == LatentPoint(0.25, 0.75)


@pytest.mark.parametrize(
    "channel,expected",
    [(PLATFORM, 0.5 * (1 - 0.3 - 0.1)), (WORLD, 0.5 * 0.7), (NONE, 0.0)],
)
def test_transaction_seller_surplus(channel, expected):
    assert transaction_seller_surplus(0.5, 0.3, 0.1, channel) == pytest.approx(expected)


def test_transaction_seller_surplus_can_go_negative():
    assert transaction_seller_surplus(1.0, 0.5, 0.6, PLATFORM) < 0


def _ledger(fees, buyer_on, seller_on, records, sellers, bankrupt=None):
    ledger = EpochLedger(
        epoch=1,
        friction=0.1,
        fees=fees,
        strategy=None,
        buyer_on_platform=buyer_on,
        seller_on_platform=seller_on,
        seller_bankrupt_at_start=bankrupt or [False] * len(seller_on),
        records=records,
    )
    return ledger.finalize(sellers)


def test_epoch_totals_empty_epoch_zero_fees():
    sellers = [SellerSpec(0, LatentPoint(0.5, 0.5), 0.3, 2)]
    ledger = _ledger(FeeSchedule.zero(), [False, False], [False], [], sellers)
    assert epoch_totals(ledger) == (0.0, 0.0, 0.0, 0.0)


def test_epoch_totals_rejects_unfinalized():
    ledger = EpochLedger(
        epoch=1,
        friction=0.1,
        fees=FeeSchedule.zero(),
        strategy=None,
        buyer_on_platform=[True],
        seller_on_platform=[True],
        seller_bankrupt_at_start=[False],
    )
    with pytest.raises(LedgerNotFinalized):
        epoch_totals(ledger)


def test_epoch_totals_revenue_matches_toy_case_two_instance():
    # Two subscribed buyers at (1+eps)m and one seller at 3m with m=100,
    # eps=0.01 book exactly 502 of subscription revenue.
    m, eps = 100, 0.01
    fees = FeeSchedule((1 + eps) * m, 3 * m, 0.0)
    sellers = [SellerSpec(0, LatentPoint(0.5, 0.5), 0.3, 2)]
    ledger = _ledger(fees, [True, True], [True], [], sellers)
    _, _, revenue, _ = epoch_totals(ledger)
    assert revenue == pytest.approx(502.0, abs=1e-12)


def test_welfare_identity_and_replay_on_handmade_ledger():
    sellers = [
        SellerSpec(0, LatentPoint(0.2, 0.4), 0.25, 2),
        SellerSpec(1, LatentPoint(0.8, 0.9), 0.35, 2),
    ]
    fees = FeeSchedule(0.4, 0.8, 0.1)
    q = LatentPoint(0.5, 0.5)
    records = [
        TxRecord(0, 0, q, 1, 0.8, 1, 0, 0.9, 0, PLATFORM, 0.9),
        TxRecord(1, 1, q, 1, 0.7, 1, None, 0.0, 1, WORLD, 0.6),
        TxRecord(2, 0, q, None, 0.0, None, None, 0.0, None, NONE, 0.0),
    ]
    ledger = _ledger(fees, [True, False], [True, False], records, sellers)
    totals = epoch_totals(ledger)
    replayed = replay_totals(ledger, sellers)
    assert totals == pytest.approx(replayed, abs=0.0)
    buyers, sellers_total, revenue, welfare = totals
    assert welfare == buyers + sellers_total + revenue


def test_buyer_surplus_decomposition():
    sellers = [SellerSpec(0, LatentPoint(0.2, 0.4), 0.25, 2)]
    fees = FeeSchedule(0.4, 0.0, 0.0)
    q = LatentPoint(0.5, 0.5)
    records = [
        TxRecord(0, 0, q, 0, 0.8, 0, 0, 0.9, 0, PLATFORM, 0.9),
        TxRecord(1, 0, q, 0, 0.7, 0, None, 0.0, 0, WORLD, 0.6),
    ]
    ledger = _ledger(fees, [True], [True], records, sellers)
    assert ledger.buyer_world_surplus[0] == pytest.approx(0.6)
    assert ledger.buyer_platform_surplus[0] == pytest.approx(0.9 - 0.4)
    assert ledger.buyer_surplus[0] == pytest.approx(
        ledger.buyer_world_surplus[0] + ledger.buyer_platform_surplus[0]
    )


def test_bankrupt_seller_pays_no_fixed_cost():
    sellers = [SellerSpec(0, LatentPoint(0.2, 0.4), 0.25, 2, fixed_cost=5.0)]
    ledger = _ledger(FeeSchedule.zero(), [False], [False], [], sellers, bankrupt=[True])
    assert ledger.seller_surplus[0] == 0.0
