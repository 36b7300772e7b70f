"""Deterministic simulator of a platform-mediated two-sided market under shocks."""

from .config import MarketConfig
from .core import (
    AgentState,
    BuyerSpec,
    EpochLedger,
    FeeSchedule,
    LatentPoint,
    SellerSpec,
    epoch_totals,
    matching_utility,
    transaction_seller_surplus,
)
from .envs import EpisodeRunner, RegulationRegime, run_episode
from .marketgen import MarketStructure, ShockSchedule
from .matching import MatchingStrategy

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "BuyerSpec",
    "EpochLedger",
    "EpisodeRunner",
    "FeeSchedule",
    "LatentPoint",
    "MarketConfig",
    "MarketStructure",
    "MatchingStrategy",
    "RegulationRegime",
    "SellerSpec",
    "ShockSchedule",
    "epoch_totals",
    "matching_utility",
    "run_episode",
    "transaction_seller_surplus",
    "__version__",
]
