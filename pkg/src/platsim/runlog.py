"""Run logs: delimited transaction/epoch files plus a JSON manifest.

A run directory holds one manifest and two CSV files that accumulate one
row per transaction and one row per epoch across the episodes of the run.
Floats are written with ``repr`` so re-reading reproduces totals exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .config import MarketConfig
from .envs import EpisodeRecord
from .marketgen import Market, seller_class

SCHEMA_VERSION = 1

TRANSACTION_COLUMNS = [
    "episode",
    "epoch",
    "t",
    "buyer",
    "query_taste",
    "query_price",
    "world_best",
    "world_best_utility",
    "world_candidate",
    "platform_candidate",
    "platform_utility",
    "chosen",
    "channel",
    "buyer_surplus",
]

EPOCH_COLUMNS = [
    "episode",
    "epoch",
    "stage",
    "friction",
    "buyer_fee",
    "seller_fee",
    "referral_rate",
    "rule",
    "threshold",
    "buyer_surplus",
    "seller_surplus",
    "revenue_buyer_subs",
    "revenue_seller_subs",
    "revenue_referrals",
    "revenue",
    "tax",
    "reward",
    "welfare",
    "buyers_on",
    "sellers_on",
    "buyer_subscribers",
    "seller_subscribers",
    "bankrupt_total",
    "new_bankruptcies",
]


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunLogWriter:
    """Appends episode records to one run directory."""

    directory: Path
    config: MarketConfig
    meta: dict[str, Any]

    def __post_init__(self) -> None:
        self.directory = Path(self.directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._episodes: list[dict[str, Any]] = []
        self._tx_path = self.directory / "transactions.csv"
        self._epoch_path = self.directory / "epochs.csv"
        for path, cols in ((self._tx_path, TRANSACTION_COLUMNS), (self._epoch_path, EPOCH_COLUMNS)):
            if not path.exists():
                path.write_text(",".join(cols) + "\n")

    def append(self, record: EpisodeRecord) -> int:
        episode_index = len(self._episodes)
        with self._tx_path.open("a", newline="") as fh:
            writer = csv.writer(fh)
            for ledger in record.ledgers:
                for rec in ledger.records:
                    writer.writerow(
                        [
                            episode_index,
                            ledger.epoch,
                            rec.t,
                            rec.buyer,
                            _fmt(rec.query.taste),
                            _fmt(rec.query.price_level),
                            _fmt(rec.world_best),
                            _fmt(rec.world_best_utility),
                            _fmt(rec.world_candidate),
                            _fmt(rec.platform_candidate),
                            _fmt(rec.platform_utility),
                            _fmt(rec.chosen),
                            rec.channel,
                            _fmt(rec.buyer_surplus),
                        ]
                    )
        bankrupt_running = 0
        with self._epoch_path.open("a", newline="") as fh:
            writer = csv.writer(fh)
            for ep, ledger in zip(record.epochs, record.ledgers):
                bankrupt_running += len(ep.new_bankruptcies)
                buyers, sellers, _, welfare = ep.totals
                writer.writerow(
                    [
                        episode_index,
                        ep.epoch,
                        ep.stage,
                        _fmt(ep.friction),
                        _fmt(ep.fees.buyer_subscription),
                        _fmt(ep.fees.seller_subscription),
                        _fmt(ep.fees.referral_rate),
                        ep.strategy[0] if ep.strategy else "",
                        _fmt(ep.strategy[1]) if ep.strategy else "",
                        _fmt(buyers),
                        _fmt(sellers),
                        _fmt(ledger.revenue_buyer_subscriptions),
                        _fmt(ledger.revenue_seller_subscriptions),
                        _fmt(ledger.revenue_referrals),
                        _fmt(ledger.platform_revenue),
                        _fmt(ep.reward.tax if ep.reward else 0.0),
                        _fmt(ep.reward.total if ep.reward else 0.0),
                        _fmt(welfare),
                        sum(ep.buyer_subscriptions),
                        sum(ep.seller_subscriptions),
                        ";".join(str(b) for b, on in enumerate(ep.buyer_subscriptions) if on),
                        ";".join(str(s) for s, on in enumerate(ep.seller_subscriptions) if on),
                        bankrupt_running,
                        ";".join(str(s) for s in ep.new_bankruptcies),
                    ]
                )
        self._episodes.append(
            {
                "episode": episode_index,
                "seed": record.seed,
                "discounted_return": record.discounted_return(),
                "welfare": record.welfare(),
                "revenue": record.revenue(),
                "bankrupt_final": [
                    s for s, st in enumerate(record.final_seller_states) if st.bankrupt
                ],
            }
        )
        return episode_index

    def finalize(self) -> str:
        market = self.config.build_market()
        classes = [
            seller_class(s, market, self.config.cheap_rule, self.config.cheap_cutoff)
            for s in market.sellers
        ]
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "run_id": run_id(self.config, self.meta),
            "config_digest": self.config.digest(),
            "config": self.config.to_dict(),
            "meta": self.meta,
            "market": {
                "buyers": [
                    {
                        "id": b.id,
                        "taste": b.location.taste,
                        "price_level": b.location.price_level,
                        "epoch_budget": b.epoch_budget,
                    }
                    for b in market.buyers
                ],
                "sellers": [
                    {
                        "id": s.id,
                        "taste": s.location.taste,
                        "price_level": s.location.price_level,
                        "cost_fraction": s.cost_fraction,
                        "class": classes[s.id],
                    }
                    for s in market.sellers
                ],
            },
            "episodes": self._episodes,
        }
        (self.directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return manifest["run_id"]


def run_id(config: MarketConfig, meta: dict[str, Any]) -> str:
    blob = json.dumps({"config": config.to_dict(), "meta": meta}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def log_run(record: EpisodeRecord, sink: str | Path, config: MarketConfig, meta: dict[str, Any] | None = None) -> str:
    """Write a single-episode run directory; returns its run id."""
    meta = dict(meta or {})
    meta.setdefault("seed", record.seed)
    meta.setdefault("mode", record.mode)
    meta.setdefault("regime", record.regime)
    writer = RunLogWriter(Path(sink), config, meta)
    writer.append(record)
    return writer.finalize()


def read_manifest(run_dir: str | Path) -> dict[str, Any]:
    path = Path(run_dir) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise FileNotFoundError(f"cannot read manifest at {path}: {exc}") from exc


def read_rows(run_dir: str | Path, which: str) -> list[dict[str, str]]:
    path = Path(run_dir) / f"{which}.csv"
    try:
        with path.open(newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc}") from exc


def replay_epoch_totals(run_dir: str | Path) -> list[dict[str, float]]:
    """Recompute per-epoch welfare from raw transaction rows.

    Mirrors the engine's per-agent fold so re-read totals agree bit-exactly
    with the epochs file, using only the manifest's market snapshot plus the
    fees and subscription counts the transactions alone cannot carry.
    """
    manifest = read_manifest(run_dir)
    sellers = manifest["market"]["sellers"]
    n_buyers = len(manifest["market"]["buyers"])
    price = {s["id"]: s["price_level"] for s in sellers}
    cost = {s["id"]: s["cost_fraction"] for s in sellers}
    ids = sorted(price)
    epoch_rows = read_rows(run_dir, "epochs")
    tx_rows = read_rows(run_dir, "transactions")
    grouped: dict[tuple[int, int], list[dict[str, str]]] = {}
    for row in tx_rows:
        grouped.setdefault((int(row["episode"]), int(row["epoch"])), []).append(row)
    out = []
    for ep in epoch_rows:
        key = (int(ep["episode"]), int(ep["epoch"]))
        rows = grouped.get(key, [])
        referral_rate = float(ep["referral_rate"])
        buyer_fee = float(ep["buyer_fee"])
        seller_fee = float(ep["seller_fee"])
        b_world = [0.0] * n_buyers
        b_platform = [0.0] * n_buyers
        n_p = {s: 0 for s in ids}
        n_w = {s: 0 for s in ids}
        for row in rows:
            b = int(row["buyer"])
            if row["channel"] == "platform":
                b_platform[b] += float(row["buyer_surplus"])
                n_p[int(row["chosen"])] += 1
            elif row["channel"] == "world":
                b_world[b] += float(row["buyer_surplus"])
                n_w[int(row["chosen"])] += 1
        buyers_on = int(ep["buyers_on"])
        sellers_on = int(ep["sellers_on"])
        sub_b = {int(x) for x in ep["buyer_subscribers"].split(";") if x != ""}
        sub_s = {int(x) for x in ep["seller_subscribers"].split(";") if x != ""}
        buyer_total = sum(
            b_world[b] + (b_platform[b] - (buyer_fee if b in sub_b else 0.0))
            for b in range(n_buyers)
        )
        seller_total = sum(
            n_w[s] * price[s] * (1.0 - cost[s])
            + (
                n_p[s] * price[s] * (1.0 - cost[s] - referral_rate)
                - (seller_fee if s in sub_s else 0.0)
            )
            for s in ids
        )
        revenue = (
            buyer_fee * buyers_on
            + seller_fee * sellers_on
            + sum(n_p[s] * price[s] * referral_rate for s in ids)
        )
        out.append(
            {
                "episode": key[0],
                "epoch": key[1],
                "buyer_surplus": buyer_total,
                "seller_surplus": seller_total,
                "revenue": revenue,
                "welfare": buyer_total + seller_total + revenue,
            }
        )
    return out
