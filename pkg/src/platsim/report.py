"""Aggregate run logs into stage-level tables and figures.

Each report kind emits a delimited table plus a rendered PNG next to it.
Runs are grouped by shock stage (pre/shock/post) with standard errors taken
across episodes.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .runlog import read_manifest, read_rows

REPORT_KINDS = ("welfare_by_stage", "fees_by_stage", "agents_by_stage", "bankruptcy_by_class")

STAGES = ("pre", "shock", "post")

_CLASS_ROWS = ("all", "core", "niche", "cheap", "other")


class ReportError(ValueError):
    pass


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else float("nan")


def _se(values: Sequence[float]) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    m = _mean(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / (n - 1) / n)


def _check_compatible(manifests: list[dict]) -> None:
    keys = ("n_buyers", "n_sellers", "epochs", "steps_per_epoch")
    reference = {k: manifests[0]["config"][k] for k in keys}
    for m in manifests[1:]:
        got = {k: m["config"][k] for k in keys}
        if got != reference:
            raise ReportError(f"incompatible run configs: {reference} vs {got}")


def _load_runs(run_dirs: Sequence[str | Path]):
    if not run_dirs:
        raise ReportError("at least one run directory is required")
    manifests = [read_manifest(d) for d in run_dirs]
    _check_compatible(manifests)
    rows = []
    for i, d in enumerate(run_dirs):
        for row in read_rows(d, "epochs"):
            row["_run"] = str(i)
            rows.append(row)
    return manifests, rows


def _per_episode_stage_values(
    rows: Iterable[dict[str, str]], column: str, aggregate: str = "sum"
) -> dict[str, list[float]]:
    """Collect one value per (run, episode) per stage: summed or averaged."""
    buckets: dict[tuple[str, str, str], list[float]] = {}
    for row in rows:
        stage = row["stage"]
        if stage not in STAGES:
            continue
        key = (row["_run"], row["episode"], stage)
        buckets.setdefault(key, []).append(float(row[column]))
    out: dict[str, list[float]] = {s: [] for s in STAGES}
    for (run, episode, stage), values in sorted(buckets.items()):
        out[stage].append(sum(values) if aggregate == "sum" else _mean(values))
    return out


def _write_table(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def welfare_by_stage(run_dirs: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    _, rows = _load_runs(run_dirs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    components = ["buyer_surplus", "seller_surplus", "revenue", "tax", "welfare"]
    stage_stats = {c: _per_episode_stage_values(rows, c) for c in components}
    table_rows = []
    for stage in STAGES:
        row = [stage]
        for c in components:
            vals = stage_stats[c][stage]
            row.extend([_mean(vals), _se(vals)])
        table_rows.append(row)
    header = ["stage"]
    for c in components:
        header.extend([f"{c}_mean", f"{c}_se"])
    table = out_dir / "welfare_by_stage.csv"
    _write_table(table, header, table_rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(STAGES))
    bottoms = [0.0] * len(STAGES)
    for c, label in (("buyer_surplus", "buyer surplus"), ("seller_surplus", "seller surplus"), ("revenue", "platform revenue"), ("tax", "tax sink")):
        heights = [_mean(stage_stats[c][s]) for s in STAGES]
        if c == "revenue":
            taxes = [_mean(stage_stats["tax"][s]) for s in STAGES]
            heights = [h - t for h, t in zip(heights, taxes)]
            label = "platform reward"
        ax.bar(xs, heights, bottom=bottoms, label=label)
        bottoms = [b + h for b, h in zip(bottoms, heights)]
    ax.set_xticks(list(xs), STAGES)
    ax.set_ylabel("per-stage total")
    ax.set_title("Welfare decomposition by shock stage")
    ax.legend(fontsize=8)
    fig.tight_layout()
    figure = out_dir / "welfare_by_stage.png"
    fig.savefig(figure, dpi=150)
    plt.close(fig)
    return [table, figure]


def fees_by_stage(run_dirs: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    _, rows = _load_runs(run_dirs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fees = ["buyer_fee", "seller_fee", "referral_rate"]
    stats = {c: _per_episode_stage_values(rows, c, aggregate="mean") for c in fees}
    table_rows = []
    for stage in STAGES:
        row = [stage]
        for c in fees:
            vals = stats[c][stage]
            row.extend([_mean(vals), _se(vals)])
        table_rows.append(row)
    header = ["stage"]
    for c in fees:
        header.extend([f"{c}_mean", f"{c}_se"])
    table = out_dir / "fees_by_stage.csv"
    _write_table(table, header, table_rows)

    fig, axes = plt.subplots(1, 3, figsize=(9, 3), sharex=True)
    for ax, c, title in zip(axes, fees, ("buyer subscription", "seller subscription", "referral rate")):
        means = [_mean(stats[c][s]) for s in STAGES]
        errs = [_se(stats[c][s]) for s in STAGES]
        ax.bar(range(len(STAGES)), means, yerr=errs, capsize=3)
        ax.set_xticks(range(len(STAGES)), STAGES)
        ax.set_title(title, fontsize=9)
    fig.suptitle("Platform fees by shock stage")
    fig.tight_layout()
    figure = out_dir / "fees_by_stage.png"
    fig.savefig(figure, dpi=150)
    plt.close(fig)
    return [table, figure]


def agents_by_stage(run_dirs: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    _, rows = _load_runs(run_dirs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns = ["buyers_on", "sellers_on", "bankrupt_total"]
    stats = {c: _per_episode_stage_values(rows, c, aggregate="mean") for c in columns}
    table_rows = []
    for stage in STAGES:
        row = [stage]
        for c in columns:
            vals = stats[c][stage]
            row.extend([_mean(vals), _se(vals)])
        table_rows.append(row)
    header = ["stage"]
    for c in columns:
        header.extend([f"{c}_mean", f"{c}_se"])
    table = out_dir / "agents_by_stage.csv"
    _write_table(table, header, table_rows)

    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.25
    for i, (c, label) in enumerate(
        zip(columns, ("on-platform buyers", "on-platform sellers", "bankrupt sellers"))
    ):
        means = [_mean(stats[c][s]) for s in STAGES]
        errs = [_se(stats[c][s]) for s in STAGES]
        ax.bar([x + (i - 1) * width for x in range(len(STAGES))], means, width, yerr=errs, capsize=3, label=label)
    ax.set_xticks(range(len(STAGES)), STAGES)
    ax.set_ylabel("mean agents per epoch")
    ax.set_title("Agent states by shock stage")
    ax.legend(fontsize=8)
    fig.tight_layout()
    figure = out_dir / "agents_by_stage.png"
    fig.savefig(figure, dpi=150)
    plt.close(fig)
    return [table, figure]


def bankruptcy_by_class(run_dirs: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    manifests, _ = _load_runs(run_dirs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_class: dict[str, list[float]] = {c: [] for c in _CLASS_ROWS}
    for manifest in manifests:
        classes = {s["id"]: s["class"] for s in manifest["market"]["sellers"]}
        members = {c: [i for i, cl in classes.items() if cl == c] for c in _CLASS_ROWS if c != "all"}
        for episode in manifest["episodes"]:
            bankrupt = set(episode["bankrupt_final"])
            per_class["all"].append(len(bankrupt) / len(classes))
            for c, ids in members.items():
                if ids:
                    per_class[c].append(sum(1 for i in ids if i in bankrupt) / len(ids))
    table_rows = [
        [c, _mean(vals), _se(vals), len(vals)]
        for c, vals in per_class.items()
        if vals
    ]
    table = out_dir / "bankruptcy_by_class.csv"
    _write_table(table, ["seller_class", "bankrupt_freq_mean", "bankrupt_freq_se", "episodes"], table_rows)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    labels = [r[0] for r in table_rows]
    ax.bar(labels, [r[1] for r in table_rows], yerr=[r[2] for r in table_rows], capsize=3)
    ax.set_ylabel("bankruptcy frequency")
    ax.set_title("Seller bankruptcies by class")
    fig.tight_layout()
    figure = out_dir / "bankruptcy_by_class.png"
    fig.savefig(figure, dpi=150)
    plt.close(fig)
    return [table, figure]


_DISPATCH = {
    "welfare_by_stage": welfare_by_stage,
    "fees_by_stage": fees_by_stage,
    "agents_by_stage": agents_by_stage,
    "bankruptcy_by_class": bankruptcy_by_class,
}


def render(kind: str, run_dirs: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    if kind not in _DISPATCH:
        raise ReportError(f"unknown report kind {kind!r}; expected one of {REPORT_KINDS}")
    return _DISPATCH[kind](run_dirs, out_dir)
