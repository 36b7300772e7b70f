"""Black-box fee search and fixed-strategy sweeps.

The fee grid is small enough that exhaustive evaluation (or random seeding
plus coordinate descent for larger grids) dominates at desk scale; all
candidate evaluations share one seed set as common random numbers.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import MarketConfig
from .core import FeeSchedule
from .envs import (
    EpisodeRecord,
    FixedFeePolicy,
    FixedMatchingPolicy,
    MyopicMatchingPolicy,
    RegulationRegime,
    fee_action_space,
    run_episode,
    run_no_platform_episode,
)
from .marketgen import SELLER_CLASSES, seller_class
from .matching import MatchingStrategy, all_strategies

REVENUE = "revenue"
WELFARE = "welfare"
SURPLUS_AWARE_OBJECTIVE = "surplus_aware"
OBJECTIVES = (REVENUE, WELFARE, SURPLUS_AWARE_OBJECTIVE)

# Budget preset mirroring the black-box search schedule used for the
# single-epoch baselines: 10 seeding points plus 50 local iterations,
# repeatable over up to 64 restarts.
BLACK_BOX_BUDGET = {"rounds": 64, "initial_points": 10, "iterations_per_round": 50}


@dataclass(frozen=True)
class OptimizeResult:
    fees: FeeSchedule
    value: float
    trace: tuple[tuple[FeeSchedule, float], ...]
    evaluations: int


def _objective_value(record: EpisodeRecord, objective: str, alpha: float) -> float:
    if objective == REVENUE:
        return record.revenue()
    if objective == WELFARE:
        return record.welfare()
    if objective == SURPLUS_AWARE_OBJECTIVE:
        bonus = 0.0
        for ledger in record.ledgers:
            if ledger.epoch >= 1:
                bonus += sum(ledger.buyer_platform_surplus) + sum(ledger.seller_platform_surplus)
        return record.revenue() + alpha * bonus
    raise ValueError(f"unknown objective {objective!r}")


def _require_single_epoch(config: MarketConfig) -> None:
    if config.epochs != 1:
        raise ValueError("fee optimization expects a single-epoch (plus warm-up) configuration")


def optimize_fees(
    config: MarketConfig,
    objective: str = REVENUE,
    budget: int | None = None,
    method: str = "exhaustive",
    n_seeds: int = 20,
    seed0: int = 0,
    alpha: float = 0.4,
    grid: Sequence[FeeSchedule] | None = None,
    regime: RegulationRegime | None = None,
) -> OptimizeResult:
    """Best fee triple on the grid for a single-epoch configuration.

    ``exhaustive`` scans the whole (possibly capped) grid; the
    ``random_then_local`` black-box stand-in seeds
    uniformly and then coordinate-descends on grid neighbors until the
    evaluation budget runs out.  Every candidate is scored as the mean
    objective over the same ``n_seeds`` episode seeds.
    """
    _require_single_epoch(config)
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    regime = regime or RegulationRegime.laissez_faire()
    space = list(grid) if grid is not None else fee_action_space(regime, config)
    seeds = [seed0 + i for i in range(n_seeds)]
    cache: dict[FeeSchedule, float] = {}
    trace: list[tuple[FeeSchedule, float]] = []

    def evaluate(fees: FeeSchedule) -> float:
        if fees in cache:
            return cache[fees]
        total = 0.0
        for s in seeds:
            record = run_episode(
                config, FixedFeePolicy(fees), MyopicMatchingPolicy(), regime, seed=s
            )
            total += _objective_value(record, objective, alpha)
        value = total / len(seeds)
        cache[fees] = value
        trace.append((fees, value))
        return value

    if method == "exhaustive":
        for fees in space:
            evaluate(fees)
    elif method == "random_then_local":
        if budget is None:
            budget = BLACK_BOX_BUDGET["initial_points"] + BLACK_BOX_BUDGET["iterations_per_round"]
        rng = np.random.default_rng(seed0)
        n_init = max(1, min(budget // 2, len(space)))
        order = rng.permutation(len(space))[:n_init]
        for idx in order:
            evaluate(space[int(idx)])
        # Coordinate descent on the tick lattice from the best seed point.
        axes = _grid_axes(space)
        current = max(cache, key=cache.get)
        improved = True
        while improved and len(cache) < budget:
            improved = False
            for dim in range(3):
                for direction in (-1, 1):
                    neighbor = _grid_step(current, dim, direction, axes)
                    if neighbor is None or len(cache) >= budget:
                        continue
                    if evaluate(neighbor) > cache[current]:
                        current = neighbor
                        improved = True
    else:
        raise ValueError(f"unknown method {method!r}")
    best = max(cache, key=cache.get)
    return OptimizeResult(fees=best, value=cache[best], trace=tuple(trace), evaluations=len(cache))


def _grid_axes(space: Sequence[FeeSchedule]) -> tuple[list[float], list[float], list[float]]:
    return (
        sorted({f.buyer_subscription for f in space}),
        sorted({f.seller_subscription for f in space}),
        sorted({f.referral_rate for f in space}),
    )


def _grid_step(fees: FeeSchedule, dim: int, direction: int, axes) -> FeeSchedule | None:
    axis = axes[dim]
    i = axis.index(fees[dim])
    j = i + direction
    if not 0 <= j < len(axis):
        return None
    values = list(fees)
    values[dim] = axis[j]
    return FeeSchedule(*values)


def desk_fee_grid(
    pb_max: float = 2.0, ps_max: float = 2.0, pr_max: float = 0.5, step: float = 0.4, pr_step: float = 0.1
) -> list[FeeSchedule]:
    """Coarse capped grid used by desk-scale sweeps."""
    pbs = [round(i * step, 10) for i in range(int(math.floor(pb_max / step + 1e-9)) + 1)]
    pss = [round(i * step, 10) for i in range(int(math.floor(ps_max / step + 1e-9)) + 1)]
    prs = [round(i * pr_step, 10) for i in range(int(math.floor(pr_max / pr_step + 1e-9)) + 1)]
    return [FeeSchedule(pb, ps, pr) for pb in pbs for ps in pss for pr in prs]


@dataclass(frozen=True)
class SweepPoint:
    rho: float
    mu: float
    ideal_welfare: float
    no_platform_welfare: float
    no_platform_buyer_surplus: float
    no_platform_seller_surplus: float
    platform_welfare: float
    platform_buyer_surplus: float
    platform_seller_surplus: float
    platform_revenue: float
    best_fees: FeeSchedule

    @property
    def no_platform_normalized(self) -> float:
        return self.no_platform_welfare / self.ideal_welfare if self.ideal_welfare else 0.0

    @property
    def platform_normalized(self) -> float:
        return self.platform_welfare / self.ideal_welfare if self.ideal_welfare else 0.0


def _episode_surpluses(record: EpisodeRecord) -> tuple[float, float]:
    buyers = sellers = 0.0
    for ep in record.epochs:
        if ep.epoch >= 1:
            buyers += ep.totals[0]
            sellers += ep.totals[1]
    return buyers, sellers


def sweep_value_of_platform(
    config: MarketConfig,
    rho_grid: Sequence[float],
    mu_grid: Sequence[float],
    n_seeds: int = 10,
    fee_grid: Sequence[FeeSchedule] | None = None,
    objective: str = REVENUE,
) -> list[SweepPoint]:
    """Welfare with and without an optimized platform over (rho, mu) points.

    Single-epoch, constant-friction runs; all values are normalized by the
    ideal welfare (full knowledge, zero friction, zero fees) computed over
    the same episode seeds.
    """
    if not rho_grid or not mu_grid:
        raise ValueError("rho_grid and mu_grid must be nonempty")
    fee_grid = list(fee_grid) if fee_grid is not None else desk_fee_grid()
    base = dataclasses.replace(config, epochs=1)
    out: list[SweepPoint] = []
    for rho in rho_grid:
        for mu in mu_grid:
            point_cfg = dataclasses.replace(base, rho=rho, constant_friction=mu)
            ideal_cfg = dataclasses.replace(base, rho=1.0, constant_friction=0.0)
            ideal = _mean_outcomes(ideal_cfg, None, n_seeds)
            noplat = _mean_outcomes(point_cfg, None, n_seeds)
            best = optimize_fees(
                point_cfg,
                objective=objective,
                method="exhaustive",
                n_seeds=n_seeds,
                grid=fee_grid,
            )
            plat = _mean_outcomes(point_cfg, best.fees, n_seeds)
            out.append(
                SweepPoint(
                    rho=rho,
                    mu=mu,
                    ideal_welfare=ideal["welfare"],
                    no_platform_welfare=noplat["welfare"],
                    no_platform_buyer_surplus=noplat["buyer_surplus"],
                    no_platform_seller_surplus=noplat["seller_surplus"],
                    platform_welfare=plat["welfare"],
                    platform_buyer_surplus=plat["buyer_surplus"],
                    platform_seller_surplus=plat["seller_surplus"],
                    platform_revenue=plat["revenue"],
                    best_fees=best.fees,
                )
            )
    return out


def _mean_outcomes(config: MarketConfig, fees: FeeSchedule | None, n_seeds: int) -> dict[str, float]:
    totals = {"welfare": 0.0, "buyer_surplus": 0.0, "seller_surplus": 0.0, "revenue": 0.0}
    for s in range(n_seeds):
        if fees is None:
            record = run_no_platform_episode(config, seed=s)
        else:
            record = run_episode(
                config,
                FixedFeePolicy(fees),
                MyopicMatchingPolicy(),
                RegulationRegime.laissez_faire(),
                seed=s,
            )
        buyers, sellers = _episode_surpluses(record)
        totals["welfare"] += record.welfare()
        totals["buyer_surplus"] += buyers
        totals["seller_surplus"] += sellers
        totals["revenue"] += record.revenue()
    return {k: v / n_seeds for k, v in totals.items()}


@dataclass(frozen=True)
class StrategyRow:
    strategy: MatchingStrategy
    welfare_mean: float
    welfare_se: float
    revenue_mean: float
    revenue_se: float
    bankruptcy_by_class: dict[str, float]


def _standard_error(values: Sequence[float]) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)


def sweep_matching_strategies(
    config: MarketConfig,
    fee_schedule: FeeSchedule,
    n_seeds: int = 10,
) -> list[StrategyRow]:
    """Evaluate all 21 fixed matching strategies under frozen fees."""
    regime = RegulationRegime.fee_freeze(fee_schedule)
    market = config.build_market()
    classes = [seller_class(s, market, config.cheap_rule, config.cheap_cutoff) for s in market.sellers]
    class_members = {c: [s.id for s in market.sellers if classes[s.id] == c] for c in SELLER_CLASSES}
    rows: list[StrategyRow] = []
    for strategy in all_strategies():
        welfare: list[float] = []
        revenue: list[float] = []
        bankrupt_frac: dict[str, list[float]] = {c: [] for c in SELLER_CLASSES}
        bankrupt_frac["all"] = []
        for s in range(n_seeds):
            record = run_episode(
                config, FixedFeePolicy(fee_schedule), FixedMatchingPolicy(strategy), regime, seed=s
            )
            welfare.append(record.welfare())
            revenue.append(record.revenue())
            bankrupt = {i for i, st in enumerate(record.final_seller_states) if st.bankrupt}
            bankrupt_frac["all"].append(len(bankrupt) / len(market.sellers))
            for c, members in class_members.items():
                if members:
                    bankrupt_frac[c].append(sum(1 for i in members if i in bankrupt) / len(members))
        rows.append(
            StrategyRow(
                strategy=strategy,
                welfare_mean=sum(welfare) / len(welfare),
                welfare_se=_standard_error(welfare),
                revenue_mean=sum(revenue) / len(revenue),
                revenue_se=_standard_error(revenue),
                bankruptcy_by_class={
                    c: (sum(v) / len(v) if v else float("nan")) for c, v in bankrupt_frac.items()
                },
            )
        )
    return rows
