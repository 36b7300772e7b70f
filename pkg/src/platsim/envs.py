"""Platform decision environments: fee-setting and matching POMDPs.

Wires the dynamics, subscription, and matching modules into an episode
state machine (reset/step), applies regulation regimes to action spaces and
rewards, and builds the platform's partial observation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .config import MarketConfig
from .core import (
    PLATFORM,
    AgentState,
    EpochLedger,
    FeeSchedule,
    epoch_totals,
)
from .dynamics import (
    EngineState,
    arrival_order,
    close_epoch,
    exp_utility_matrix,
    gaussian_queries,
    run_epoch,
)
from .marketgen import Market, ShockSchedule
from .matching import Matcher, MatchingStrategy, all_strategies
from .subscription import wake_and_decide

FEE_SETTING = "fee_setting"
MATCHING = "matching"
MODES = (FEE_SETTING, MATCHING)

LAISSEZ_FAIRE = "laissez_faire"
SURPLUS_AWARE = "surplus_aware"
TAX = "tax"
FEE_CAP = "fee_cap"
FEE_FREEZE = "fee_freeze"
REGIME_KINDS = (LAISSEZ_FAIRE, SURPLUS_AWARE, TAX, FEE_CAP, FEE_FREEZE)

TAX_CATEGORIES = ("buyer_subs", "seller_subs", "referrals", "all_seller_fees")

DISCOUNT = 0.99


class ActionError(ValueError):
    pass


@dataclass(frozen=True)
class RegulationRegime:
    kind: str = LAISSEZ_FAIRE
    alpha: float = 0.4
    tax_category: str = "referrals"
    tax_rate: float = 0.20
    cap_buyer: float | None = None
    cap_seller: float | None = None
    cap_referral: float | None = None
    frozen_fees: FeeSchedule = FeeSchedule(1.2, 2.0, 0.1)

    def __post_init__(self) -> None:
        if self.kind not in REGIME_KINDS:
            raise ValueError(f"unknown regime {self.kind!r}; expected one of {REGIME_KINDS}")
        if self.tax_category not in TAX_CATEGORIES:
            raise ValueError(f"unknown tax category {self.tax_category!r}")

    @staticmethod
    def laissez_faire() -> "RegulationRegime":
        return RegulationRegime(kind=LAISSEZ_FAIRE)

    @staticmethod
    def surplus_aware(alpha: float = 0.4) -> "RegulationRegime":
        return RegulationRegime(kind=SURPLUS_AWARE, alpha=alpha)

    @staticmethod
    def tax(category: str, rate: float = 0.20) -> "RegulationRegime":
        return RegulationRegime(kind=TAX, tax_category=category, tax_rate=rate)

    @staticmethod
    def fee_cap(
        cap_buyer: float = 2.0, cap_seller: float = 2.0, cap_referral: float = 0.1
    ) -> "RegulationRegime":
        return RegulationRegime(
            kind=FEE_CAP, cap_buyer=cap_buyer, cap_seller=cap_seller, cap_referral=cap_referral
        )

    @staticmethod
    def fee_freeze(fees: FeeSchedule = FeeSchedule(1.2, 2.0, 0.1)) -> "RegulationRegime":
        return RegulationRegime(kind=FEE_FREEZE, frozen_fees=fees)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["frozen_fees"] = list(self.frozen_fees)
        return d

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "RegulationRegime":
        data = dict(data)
        if "frozen_fees" in data:
            data["frozen_fees"] = FeeSchedule(*data["frozen_fees"])
        return RegulationRegime(**data)


def fee_action_space(regime: RegulationRegime, config: MarketConfig) -> list[FeeSchedule]:
    """Every fee triple the platform may post under the regime."""
    if regime.kind == FEE_FREEZE:
        return [regime.frozen_fees]
    grid = config.fee_grid
    cb = regime.cap_buyer if regime.kind == FEE_CAP else None
    cs = regime.cap_seller if regime.kind == FEE_CAP else None
    cr = regime.cap_referral if regime.kind == FEE_CAP else None
    return [
        FeeSchedule(pb, ps, pr)
        for pb in grid.subscription_levels(cb)
        for ps in grid.subscription_levels(cs)
        for pr in grid.referral_levels(cr)
    ]


def validate_fees(fees: FeeSchedule, regime: RegulationRegime, config: MarketConfig) -> FeeSchedule:
    """Check a fee triple sits on the grid and satisfies the active regime."""
    if regime.kind == FEE_FREEZE:
        if any(abs(a - b) > 1e-9 for a, b in zip(fees, regime.frozen_fees)):
            raise ActionError(f"fees are frozen at {tuple(regime.frozen_fees)}")
        return regime.frozen_fees
    grid = config.fee_grid
    for value, tick, cap in (
        (fees.buyer_subscription, grid.subscription_tick, regime.cap_buyer),
        (fees.seller_subscription, grid.subscription_tick, regime.cap_seller),
        (fees.referral_rate, grid.referral_tick, regime.cap_referral),
    ):
        if value < -1e-12:
            raise ActionError("fees must be nonnegative")
        if abs(value - round(value / tick) * tick) > 1e-9:
            raise ActionError(f"fee {value} is off the {tick} grid")
        if regime.kind == FEE_CAP and cap is not None and value > cap + 1e-9:
            raise ActionError(f"fee {value} exceeds the regime cap {cap}")
    if fees.buyer_subscription > grid.subscription_max + 1e-9 or fees.seller_subscription > grid.subscription_max + 1e-9:
        raise ActionError("subscription fee above the grid maximum")
    if fees.referral_rate > grid.referral_max + 1e-9:
        raise ActionError("referral rate above the grid maximum")
    return fees


@dataclass(frozen=True)
class RewardBreakdown:
    base: float
    tax: float
    bonus: float

    @property
    def total(self) -> float:
        return self.base - self.tax + self.bonus


def _tax_amount(
    regime: RegulationRegime, buyer_subs: float, seller_subs: float, referrals: float
) -> float:
    if regime.kind != TAX:
        return 0.0
    category = {
        "buyer_subs": buyer_subs,
        "seller_subs": seller_subs,
        "referrals": referrals,
        "all_seller_fees": seller_subs + referrals,
    }[regime.tax_category]
    return regime.tax_rate * category


def reward(
    ledger: EpochLedger,
    regime: RegulationRegime,
    mode: str = FEE_SETTING,
    next_subscription_revenue: tuple[float, float] | None = None,
) -> RewardBreakdown:
    """Platform reward for one epoch under the regime.

    Fee-setting mode rewards the epoch's own revenue.  Matching mode shifts
    subscription revenue attribution one epoch earlier: the reward combines
    this epoch's referrals with the subscription revenue just collected for
    the next epoch, so ``next_subscription_revenue`` must be supplied.
    """
    if not ledger.finalized:
        raise ValueError("reward requires a finalized ledger")
    if mode == FEE_SETTING:
        buyer_subs = ledger.revenue_buyer_subscriptions
        seller_subs = ledger.revenue_seller_subscriptions
        referrals = ledger.revenue_referrals
    elif mode == MATCHING:
        if next_subscription_revenue is None:
            raise ValueError("matching-mode reward needs next-epoch subscription revenue")
        buyer_subs, seller_subs = next_subscription_revenue
        referrals = ledger.revenue_referrals
    else:
        raise ValueError(f"unknown mode {mode!r}")
    base = buyer_subs + seller_subs + referrals
    tax = _tax_amount(regime, buyer_subs, seller_subs, referrals)
    bonus = 0.0
    if regime.kind == SURPLUS_AWARE:
        on_platform_surplus = sum(ledger.buyer_platform_surplus) + sum(ledger.seller_platform_surplus)
        bonus = regime.alpha * on_platform_surplus
    return RewardBreakdown(base=base, tax=tax, bonus=bonus)


def observation_layout(
    n_buyers: int, n_sellers: int, mode: str, observe_time: bool = True
) -> list[tuple[str, int]]:
    fields_ = [
        ("buyers_on_platform", n_buyers),
        ("sellers_on_platform", n_sellers),
        ("buyer_platform_tx", n_buyers),
        ("buyer_platform_surplus", n_buyers),
        ("seller_platform_tx", n_sellers),
        ("seller_platform_surplus", n_sellers),
        ("match_matrix", n_buyers * n_sellers),
        ("tx_matrix", n_buyers * n_sellers),
        ("fees", 3),
    ]
    if mode == MATCHING:
        fields_.append(("strategy", 2))
    fields_.append(("friction", 1))
    if observe_time:
        fields_.append(("time", 3))
    return fields_


def layout_descriptor(layout: list[tuple[str, int]]) -> dict[str, Any]:
    offsets = []
    pos = 0
    for name, length in layout:
        offsets.append({"name": name, "offset": pos, "length": length})
        pos += length
    return {"fields": offsets, "length": pos}


_STAGE_CODE = {"pre": 0.0, "shock": 1.0, "post": 2.0, "flat": 0.0}

_RULE_CODE = {"seller_aware": 0.0, "profit_driven": 1.0}


def build_observation(
    buyer_states: Sequence[AgentState],
    seller_states: Sequence[AgentState],
    reference: EpochLedger,
    fees: FeeSchedule,
    strategy: MatchingStrategy,
    friction: float,
    mode: str,
    epoch: int,
    stage: str,
    remaining: int,
    observe_time: bool = True,
) -> list[float]:
    """Flatten the platform's partial view into the documented layout.

    Reads only platform-visible state: subscription flags, the reference
    epoch's on-platform activity, posted fees/strategy, and the friction.
    Knowledge sets, world counterparties, budgets, and inertia never enter.
    """
    nb, ns = len(buyer_states), len(seller_states)
    obs: list[float] = []
    obs.extend(1.0 if st.on_platform else 0.0 for st in buyer_states)
    obs.extend(1.0 if st.on_platform else 0.0 for st in seller_states)
    b_tx = [0.0] * nb
    match_matrix = [0.0] * (nb * ns)
    tx_matrix = [0.0] * (nb * ns)
    for rec in reference.records:
        if rec.platform_candidate is not None:
            match_matrix[rec.buyer * ns + rec.platform_candidate] += 1.0
        if rec.channel == PLATFORM:
            b_tx[rec.buyer] += 1.0
            tx_matrix[rec.buyer * ns + rec.chosen] += 1.0
    obs.extend(b_tx)
    obs.extend(float(x) for x in reference.buyer_platform_surplus)
    obs.extend(float(x) for x in reference.seller_platform_tx)
    obs.extend(float(x) for x in reference.seller_platform_surplus)
    obs.extend(match_matrix)
    obs.extend(tx_matrix)
    obs.extend(float(x) for x in fees)
    if mode == MATCHING:
        obs.extend((_RULE_CODE[strategy.rule], strategy.threshold))
    obs.append(float(friction))
    if observe_time:
        obs.extend((float(epoch), _STAGE_CODE.get(stage, 0.0), float(remaining)))
    return obs


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    friction: float
    fees: FeeSchedule
    strategy: tuple[str, float] | None
    buyer_subscriptions: list[bool]
    seller_subscriptions: list[bool]
    new_bankruptcies: list[int]
    totals: tuple[float, float, float, float]
    reward: RewardBreakdown | None


@dataclass
class EpisodeRecord:
    config_digest: str
    seed: int
    mode: str
    regime: dict[str, Any]
    epochs: list[EpochRecord] = field(default_factory=list)
    ledgers: list[EpochLedger] = field(default_factory=list)
    observations: list[list[float]] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    boundary_subscriptions: tuple[list[bool], list[bool]] | None = None
    final_buyer_states: list[AgentState] = field(default_factory=list)
    final_seller_states: list[AgentState] = field(default_factory=list)

    def discounted_return(self, gamma: float = DISCOUNT) -> float:
        return sum(r * gamma**k for k, r in enumerate(self.rewards))

    def welfare(self) -> float:
        return sum(rec.totals[3] for rec in self.epochs if rec.epoch >= 1)

    def revenue(self) -> float:
        return sum(rec.totals[2] for rec in self.epochs if rec.epoch >= 1)

    def ledger_digest(self) -> str:
        h = hashlib.sha256()
        for ledger in self.ledgers:
            for rec in ledger.records:
                h.update(repr(rec).encode())
            h.update(repr(epoch_totals(ledger)).encode())
        return h.hexdigest()


class EpisodeRunner:
    """State machine for one episode: warm-up, then one decision per epoch.

    In fee-setting mode each step posts a fee triple before subscriptions;
    in matching mode fees are fixed by the regime and each step picks the
    epoch's matching strategy after subscriptions resolve.
    """

    def __init__(
        self,
        config: MarketConfig,
        mode: str,
        regime: RegulationRegime,
        seed: int,
        fixed_fees: FeeSchedule | None = None,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.config = config
        self.mode = mode
        self.regime = regime
        self.seed = int(seed)
        if mode == MATCHING:
            if regime.kind == FEE_FREEZE:
                self.fixed_fees = regime.frozen_fees
            elif fixed_fees is not None:
                self.fixed_fees = validate_fees(fixed_fees, regime, config)
            else:
                self.fixed_fees = FeeSchedule.zero()
        else:
            self.fixed_fees = fixed_fees
        self.done = True
        self.k = 0

    # -- episode lifecycle -------------------------------------------------

    def reset(self) -> list[float]:
        cfg = self.config
        self.market: Market = cfg.build_market()
        self.schedule: ShockSchedule = cfg.build_shock_schedule()
        self.state = EngineState.fresh(self.market)
        ss = np.random.SeedSequence(self.seed)
        init_ss, query_ss, subs_ss = ss.spawn(3)
        self._query_rng = np.random.default_rng(query_ss)
        self._subs_rng = np.random.default_rng(subs_ss)
        self._init_inertia(np.random.default_rng(init_ss))
        self.record = EpisodeRecord(
            config_digest=cfg.digest(),
            seed=self.seed,
            mode=self.mode,
            regime=self.regime.to_dict(),
        )
        self.done = False
        self.k = 0
        self.current_fees = FeeSchedule.zero()
        self.current_strategy = MatchingStrategy.myopic()
        warmup = self._run_epoch(
            fees=FeeSchedule.zero(),
            strategy=MatchingStrategy.myopic(),
            friction=cfg.base_friction,
            epoch=0,
            stage="warmup",
            compute_reward=False,
        )
        self.k = 1
        if self.mode == MATCHING and cfg.platform_enabled:
            self._wake(self.fixed_fees, self.schedule.friction(1))
            self.current_fees = self.fixed_fees
        obs = self._observe()
        self.record.observations.append(obs)
        return obs

    def step(self, action: FeeSchedule | MatchingStrategy) -> tuple[list[float], float, bool, dict]:
        if self.done:
            raise ActionError("step called on a finished episode; reset first")
        cfg = self.config
        k = self.k
        friction = self.schedule.friction(k)
        stage = self.schedule.stage(k)
        if self.mode == FEE_SETTING:
            if not isinstance(action, FeeSchedule):
                raise ActionError("fee-setting mode expects a fee triple")
            fees = validate_fees(action, self.regime, cfg)
            if cfg.platform_enabled:
                self._wake(fees, friction)
            self.current_fees = fees
            ledger = self._run_epoch(
                fees=fees,
                strategy=MatchingStrategy.myopic(),
                friction=friction,
                epoch=k,
                stage=stage,
            )
            breakdown = reward(ledger, self.regime, FEE_SETTING)
        else:
            if not isinstance(action, MatchingStrategy):
                raise ActionError("matching mode expects a matching strategy")
            self.current_strategy = action
            ledger = self._run_epoch(
                fees=self.fixed_fees,
                strategy=action,
                friction=friction,
                epoch=k,
                stage=stage,
            )
            next_friction = self.schedule.friction(k + 1) if k < cfg.epochs else cfg.base_friction
            if cfg.platform_enabled:
                outcome = self._wake(self.fixed_fees, next_friction)
                next_rev = (
                    self.fixed_fees.buyer_subscription * sum(outcome.buyer_subscriptions),
                    self.fixed_fees.seller_subscription * sum(outcome.seller_subscriptions),
                )
                if k == cfg.epochs:
                    self.record.boundary_subscriptions = (
                        outcome.buyer_subscriptions,
                        outcome.seller_subscriptions,
                    )
            else:
                next_rev = (0.0, 0.0)
            breakdown = reward(ledger, self.regime, MATCHING, next_subscription_revenue=next_rev)
        self.record.epochs[-1].reward = breakdown
        self.record.rewards.append(breakdown.total)
        self.k += 1
        self.done = self.k > cfg.epochs
        if self.done:
            self.record.final_buyer_states = [dataclasses.replace(s) for s in self.state.buyer_states]
            self.record.final_seller_states = [dataclasses.replace(s) for s in self.state.seller_states]
        obs = self._observe()
        self.record.observations.append(obs)
        info = {"epoch": k, "stage": stage, "friction": friction}
        if self.done:
            info["ledger_digest"] = self.record.ledger_digest()
        return obs, breakdown.total, self.done, info

    # -- internals ----------------------------------------------------------

    def _init_inertia(self, rng: np.random.Generator) -> None:
        bound = self.config.initial_inertia_bound
        enabled = self.config.platform_enabled
        for st in list(self.state.buyer_states) + list(self.state.seller_states):
            draw = int(rng.integers(1, 2 * bound + 1))
            chi = draw if draw <= bound else -(draw - bound)
            st.inertia = chi
            st.on_platform = bool(enabled and chi > 0)

    def _wake(self, fees: FeeSchedule, friction: float):
        return wake_and_decide(
            self.state.buyer_states,
            self.state.seller_states,
            self.market,
            self.record.ledgers[-1],
            fees,
            friction,
            self._subs_rng,
            p_wake=self.config.wake_probability,
            sleepers_accrue=self.config.sleepers_accrue_inertia,
            update_mode=self.config.tracker_update,
        )

    def _run_epoch(
        self,
        fees: FeeSchedule,
        strategy: MatchingStrategy,
        friction: float,
        epoch: int,
        stage: str,
        compute_reward: bool = True,
    ) -> EpochLedger:
        cfg = self.config
        order = arrival_order(cfg.n_buyers, cfg.steps_per_epoch)
        queries = gaussian_queries(self.market, order, self._query_rng)
        utilities = exp_utility_matrix(queries, self.market, cfg.utility_decay)
        matcher = None
        if cfg.platform_enabled:
            subscribed = [
                s.id for s in self.market.sellers if self.state.seller_states[s.id].on_platform
            ]
            matcher = Matcher(self.market.sellers, subscribed, fees, strategy, cfg.tracker_update)
        bankrupt_before = [st.bankrupt for st in self.state.seller_states]
        ledger = run_epoch(self.state, fees, matcher, friction, queries, utilities, epoch, order)
        close_epoch(self.state, ledger)
        new_bankrupt = [
            s for s, st in enumerate(self.state.seller_states) if st.bankrupt and not bankrupt_before[s]
        ]
        self.record.ledgers.append(ledger)
        self.record.epochs.append(
            EpochRecord(
                epoch=epoch,
                stage=stage,
                friction=friction,
                fees=fees,
                strategy=(strategy.rule, strategy.threshold) if cfg.platform_enabled else None,
                buyer_subscriptions=list(ledger.buyer_on_platform),
                seller_subscriptions=list(ledger.seller_on_platform),
                new_bankruptcies=new_bankrupt,
                totals=epoch_totals(ledger),
                reward=None,
            )
        )
        return ledger

    def _observe(self) -> list[float]:
        cfg = self.config
        k = min(self.k, cfg.epochs)
        return build_observation(
            self.state.buyer_states,
            self.state.seller_states,
            self.record.ledgers[-1],
            self.current_fees,
            self.current_strategy,
            self.schedule.friction(self.k) if not self.done else self.schedule.friction(cfg.epochs),
            self.mode,
            epoch=k,
            stage=self.schedule.stage(k),
            remaining=max(cfg.epochs - self.k + 1, 0),
            observe_time=cfg.observe_time,
        )


# -- policies ----------------------------------------------------------------


class FixedFeePolicy:
    adaptive = False

    def __init__(self, fees: FeeSchedule):
        self.fees = fees

    def act(self, observation: list[float], epoch: int) -> FeeSchedule:
        return self.fees


class RandomFeePolicy:
    # Varies per epoch, so it drives the fee-setting surface.
    adaptive = True

    def __init__(self, space: list[FeeSchedule], seed: int):
        self.space = space
        self.rng = np.random.default_rng(seed)

    def act(self, observation: list[float], epoch: int) -> FeeSchedule:
        return self.space[int(self.rng.integers(len(self.space)))]


class FixedMatchingPolicy:
    adaptive = False

    def __init__(self, strategy: MatchingStrategy):
        self.strategy = strategy

    def act(self, observation: list[float], epoch: int) -> MatchingStrategy:
        return self.strategy


class MyopicMatchingPolicy(FixedMatchingPolicy):
    def __init__(self) -> None:
        super().__init__(MatchingStrategy.myopic())


class RandomMatchingPolicy:
    adaptive = True

    def __init__(self, seed: int):
        self.space = all_strategies()
        self.rng = np.random.default_rng(seed)

    def act(self, observation: list[float], epoch: int) -> MatchingStrategy:
        return self.space[int(self.rng.integers(len(self.space)))]


def run_episode(
    config: MarketConfig,
    fee_policy,
    matching_policy,
    regime: RegulationRegime,
    seed: int,
) -> EpisodeRecord:
    """Drive one full episode with in-process policies.

    Exactly one of the two policies may be adaptive; the adaptive surface
    determines which POMDP runs.  With two fixed policies the episode runs
    as a matching-mode rollout under the fee policy's schedule.
    """
    fee_adaptive = bool(getattr(fee_policy, "adaptive", False))
    match_adaptive = bool(getattr(matching_policy, "adaptive", False))
    if fee_adaptive and match_adaptive:
        raise ValueError("only one of fee_policy and matching_policy may be adaptive")
    if fee_adaptive:
        mode = FEE_SETTING
        if not isinstance(matching_policy, MyopicMatchingPolicy):
            raise ValueError("fee-setting mode requires the myopic matching policy")
        runner = EpisodeRunner(config, mode, regime, seed)
        policy = fee_policy
    else:
        mode = MATCHING
        fixed = fee_policy.act([], 1) if fee_policy is not None else FeeSchedule.zero()
        runner = EpisodeRunner(config, mode, regime, seed, fixed_fees=fixed)
        policy = matching_policy
    obs = runner.reset()
    done = False
    k = 1
    while not done:
        action = policy.act(obs, k)
        obs, _, done, _ = runner.step(action)
        k += 1
    return runner.record


def no_platform_config(config: MarketConfig) -> MarketConfig:
    return dataclasses.replace(config, platform_enabled=False)


def run_no_platform_episode(config: MarketConfig, seed: int) -> EpisodeRecord:
    cfg = no_platform_config(config)
    return run_episode(
        cfg,
        FixedFeePolicy(FeeSchedule.zero()),
        MyopicMatchingPolicy(),
        RegulationRegime.laissez_faire(),
        seed,
    )
