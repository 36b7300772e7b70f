"""Episode configuration: a single JSON-compatible document.

The config is the unit of reproducibility: it pins the market sample, the
knowledge matrix, the shock process, and every behavioral constant, so that
(config, episode seed, policy) determines a run bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .core import BuyerSpec, FeeSchedule
from .marketgen import (
    Market,
    MarketStructure,
    ShockSchedule,
    sample_knowledge,
    sample_market,
    sample_shock_schedule,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FeeGrid:
    """Discretization of the fee action space, optionally capped."""

    subscription_tick: float = 0.2
    subscription_max: float = 10.0
    referral_tick: float = 0.1
    referral_max: float = 1.0

    def subscription_levels(self, cap: float | None = None) -> list[float]:
        top = self.subscription_max if cap is None else min(cap, self.subscription_max)
        n = int(math.floor(top / self.subscription_tick + 1e-9))
        return [round(i * self.subscription_tick, 10) for i in range(n + 1)]

    def referral_levels(self, cap: float | None = None) -> list[float]:
        top = self.referral_max if cap is None else min(cap, self.referral_max)
        n = int(math.floor(top / self.referral_tick + 1e-9))
        return [round(i * self.referral_tick, 10) for i in range(n + 1)]


@dataclass(frozen=True)
class MarketConfig:
    n_buyers: int = 10
    n_sellers: int = 10
    structure: MarketStructure = field(default_factory=MarketStructure)
    rho: float = 0.2
    epochs: int = 12
    steps_per_epoch: int = 100
    pre_epochs: int = 3
    post_epochs: int = 3
    intensity_min: float = 0.8
    intensity_max: float = 1.0
    base_friction: float = 0.1
    # Flat friction overrides the shock process entirely (single-epoch
    # baselines and the value-of-platform sweeps).
    constant_friction: float | None = None
    query_variance: float = 0.02
    utility_decay: float = 2.0
    cost_fraction_range: tuple[float, float] = (0.2, 0.4)
    shutdown_threshold: int = 2
    wake_probability: float = 1.0
    initial_inertia_bound: int = 3
    platform_enabled: bool = True
    fee_grid: FeeGrid = field(default_factory=FeeGrid)
    tracker_update: str = "post_transaction"
    sleepers_accrue_inertia: bool = True
    observe_time: bool = True
    cheap_rule: str = "quartile"
    cheap_cutoff: float = 0.2
    market_seed: int = 0
    knowledge_seed: int = 0
    shock_seed: int = 0

    def __post_init__(self) -> None:
        if self.steps_per_epoch < self.n_buyers:
            raise ConfigError("steps_per_epoch must be at least n_buyers")
        if not 0.0 <= self.wake_probability <= 1.0:
            raise ConfigError("wake_probability must lie in [0, 1]")
        if self.initial_inertia_bound < 1:
            raise ConfigError("initial_inertia_bound must be >= 1")

    @property
    def arrivals_per_buyer(self) -> int:
        return self.steps_per_epoch // self.n_buyers

    def buyer_arrivals(self, buyer_id: int) -> int:
        extra = 1 if buyer_id < self.steps_per_epoch % self.n_buyers else 0
        return self.arrivals_per_buyer + extra

    def build_market(self) -> Market:
        buyers, sellers = sample_market(
            self.structure,
            self.n_buyers,
            self.n_sellers,
            seed=self.market_seed,
            arrivals_per_epoch=self.arrivals_per_buyer,
            query_variance=self.query_variance,
            cost_fraction_range=self.cost_fraction_range,
            shutdown_threshold=self.shutdown_threshold,
        )
        knowledge = sample_knowledge(self.n_buyers, self.n_sellers, self.rho, self.knowledge_seed)
        buyers = [
            dataclasses.replace(
                b,
                known_sellers=frozenset(np.flatnonzero(knowledge[b.id]).tolist()),
                epoch_budget=b.location.price_level * self.buyer_arrivals(b.id),
            )
            for b in buyers
        ]
        return Market(structure=self.structure, buyers=buyers, sellers=sellers, knowledge=knowledge)

    def build_shock_schedule(self) -> ShockSchedule:
        if self.constant_friction is not None:
            return ShockSchedule(
                frictions=(self.constant_friction,) * self.epochs,
                stages=("flat",) * self.epochs,
                intensity=0.0,
            )
        return sample_shock_schedule(
            K=self.epochs,
            pre=self.pre_epochs,
            post=self.post_epochs,
            I_min=self.intensity_min,
            I_max=self.intensity_max,
            base_friction=self.base_friction,
            seed=self.shock_seed,
        )

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["structure"] = dataclasses.asdict(self.structure)
        d["fee_grid"] = dataclasses.asdict(self.fee_grid)
        return d

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "MarketConfig":
        data = dict(data)
        try:
            if "structure" in data:
                s = dict(data["structure"])
                if "core_mean" in s:
                    s["core_mean"] = tuple(s["core_mean"])
                if "two_core_means" in s:
                    s["two_core_means"] = tuple(tuple(m) for m in s["two_core_means"])
                data["structure"] = MarketStructure(**s)
            if "fee_grid" in data:
                data["fee_grid"] = FeeGrid(**data["fee_grid"])
            if "cost_fraction_range" in data:
                data["cost_fraction_range"] = tuple(data["cost_fraction_range"])
            return MarketConfig(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path) -> MarketConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    return MarketConfig.from_dict(data)


def save_config(config: MarketConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``dotted.path=value`` overrides to a config dict in place."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = data
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"override path {path!r} does not exist")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"override path {path!r} does not exist")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node[keys[-1]] = value
    return data


def buyer_budget(buyer: BuyerSpec) -> float:
    return buyer.epoch_budget


ZERO_FEES = FeeSchedule.zero()
