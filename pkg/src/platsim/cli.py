"""Command-line entry point: experiment runner, reports, oracle, sweeps."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from .config import ConfigError, MarketConfig, apply_overrides
from .core import FeeSchedule
from .envs import (
    EpisodeRecord,
    FixedFeePolicy,
    FixedMatchingPolicy,
    MyopicMatchingPolicy,
    RandomFeePolicy,
    RandomMatchingPolicy,
    RegulationRegime,
    fee_action_space,
    run_episode,
)
from .matching import RULES, MatchingStrategy
from .optimizer import (
    desk_fee_grid,
    optimize_fees,
    sweep_matching_strategies,
    sweep_value_of_platform,
)
from .report import REPORT_KINDS, ReportError, render
from .runlog import RunLogWriter
from .server import load_run_config, serve

CASES = {
    "no_platform": None,
    "laissez_faire": RegulationRegime.laissez_faire,
    "surplus_aware": RegulationRegime.surplus_aware,
    "tax_buyer_subs": lambda: RegulationRegime.tax("buyer_subs"),
    "tax_seller_subs": lambda: RegulationRegime.tax("seller_subs"),
    "tax_referrals": lambda: RegulationRegime.tax("referrals"),
    "tax_all_seller_fees": lambda: RegulationRegime.tax("all_seller_fees"),
    "referral_cap": lambda: RegulationRegime.fee_cap(cap_buyer=10.0, cap_seller=10.0, cap_referral=0.1),
    "fee_cap_all": RegulationRegime.fee_cap,
    "fee_freeze": RegulationRegime.fee_freeze,
}


def _fail(message: str, code: int = 2) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _parse_fees(spec: str) -> FeeSchedule:
    values = {}
    for part in spec.split(","):
        key, _, raw = part.partition("=")
        values[key.strip().upper()] = float(raw)
    try:
        return FeeSchedule(values["P_B"], values["P_S"], values["P_R"])
    except KeyError as exc:
        raise ConfigError(f"fixed fee policy needs P_B, P_S, P_R; missing {exc}") from exc


def _parse_strategy(spec: str) -> MatchingStrategy:
    if spec == "myopic":
        return MatchingStrategy.myopic()
    rule, _, thr = spec.partition(":")
    if rule not in RULES:
        raise ConfigError(f"unknown matching rule {rule!r}; expected one of {RULES} or 'myopic'")
    return MatchingStrategy(rule, float(thr))


def _build_policies(args, config: MarketConfig, regime: RegulationRegime):
    policy = args.policy
    if policy.startswith("fixed:"):
        fee_policy = FixedFeePolicy(_parse_fees(policy[len("fixed:"):]))
    elif policy == "random":
        fee_policy = RandomFeePolicy(fee_action_space(regime, config), seed=args.seed)
    elif policy.startswith("grid-optimal"):
        base = dataclasses.replace(config, epochs=1, constant_friction=config.base_friction)
        result = optimize_fees(base, grid=desk_fee_grid(), n_seeds=args.opt_seeds, regime=None)
        print(f"grid-optimal fees: {tuple(result.fees)} (objective {result.value:.3f})")
        fee_policy = FixedFeePolicy(result.fees)
    else:
        raise ConfigError(f"unknown policy source {policy!r}; expected fixed:..., random, grid-optimal, external")
    if args.matching == "random":
        matching_policy = RandomMatchingPolicy(seed=args.seed)
    else:
        strategy = _parse_strategy(args.matching)
        matching_policy = (
            MyopicMatchingPolicy() if strategy == MatchingStrategy.myopic() else FixedMatchingPolicy(strategy)
        )
    return fee_policy, matching_policy


def _run_one(payload: dict) -> EpisodeRecord:
    config = MarketConfig.from_dict(payload["config"])
    regime = RegulationRegime.from_dict(payload["regime"])
    args = argparse.Namespace(**payload["args"])
    fee_policy, matching_policy = _build_policies(args, config, regime)
    return run_episode(config, fee_policy, matching_policy, regime, seed=payload["seed"])


def cmd_run(args) -> int:
    try:
        if args.config:
            config, regime, _ = load_run_config(args.config)
        else:
            config, regime = MarketConfig(), RegulationRegime.laissez_faire()
        if args.set:
            data = apply_overrides(config.to_dict(), args.set)
            config = MarketConfig.from_dict(data)
        if args.case is not None:
            if args.case not in CASES:
                return _fail(f"unknown case {args.case!r}; allowed: {', '.join(sorted(CASES))}")
            maker = CASES[args.case]
            if maker is None:
                config = dataclasses.replace(config, platform_enabled=False)
                regime = RegulationRegime.laissez_faire()
            else:
                regime = maker()
    except ConfigError as exc:
        return _fail(str(exc))

    if args.serve:
        transport, _, port = args.serve.partition(":")
        config_dir = Path(args.config).parent if args.config else Path(".")
        serve(transport, config_dir, port=int(port) if port else 0)
        return 0

    if args.policy == "external":
        return _fail("policy 'external' requires --serve {stdio|tcp:PORT}; external trainers drive the env server")

    seeds = [args.seed + i for i in range(args.episodes)]
    payload_base = {
        "config": config.to_dict(),
        "regime": regime.to_dict(),
        "args": {"policy": args.policy, "matching": args.matching, "seed": args.seed, "opt_seeds": args.opt_seeds},
    }
    try:
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                records = list(pool.map(_run_one, [dict(payload_base, seed=s) for s in seeds]))
        else:
            records = [_run_one(dict(payload_base, seed=s)) for s in seeds]
    except (ConfigError, ValueError) as exc:
        return _fail(str(exc))

    out = Path(args.out)
    meta = {
        "case": args.case or "laissez_faire",
        "policy": args.policy,
        "matching": args.matching,
        "seed": args.seed,
        "episodes": args.episodes,
        "mode": records[0].mode,
        "regime": regime.to_dict(),
    }
    writer = RunLogWriter(out, config, meta)
    for record in records:
        writer.append(record)
    run = writer.finalize()
    summary = {
        "run_id": run,
        "episodes": len(records),
        "mean_welfare": sum(r.welfare() for r in records) / len(records),
        "mean_revenue": sum(r.revenue() for r in records) / len(records),
        "mean_return": sum(r.discounted_return() for r in records) / len(records),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_report(args) -> int:
    try:
        paths = render(args.kind, args.run_dirs, args.out)
    except (ReportError, FileNotFoundError) as exc:
        return _fail(str(exc))
    for p in paths:
        print(p)
    return 0


def cmd_oracle(args) -> int:
    from .oracle import CASES as ORACLE_CASES
    from .oracle import SURPLUS_AWARE_CASE, ToyEconomy, solve_case

    try:
        eco = ToyEconomy.make(Fraction(args.m), Fraction(args.epsilon))
    except ValueError as exc:
        return _fail(str(exc))
    alpha = Fraction(args.alpha)
    results = {}
    for case in ORACLE_CASES:
        try:
            results[case] = solve_case(eco, case, alpha=alpha if case == SURPLUS_AWARE_CASE else None)
        except ValueError as exc:
            return _fail(str(exc))

    def fr(x: Fraction) -> str:
        return str(x) if x.denominator != 1 else str(x.numerator)

    headers = ["", *ORACLE_CASES]
    rows = [["welfare"], ["B1 surplus"], ["B2 surplus"], ["S1 surplus"], ["S2 surplus"], ["S1 state"], ["S2 state"], ["revenue"], ["fees (P_B, P_S)"]]
    for case in ORACLE_CASES:
        r = results[case]
        rows[0].append(fr(r.welfare))
        rows[1].append(fr(r.buyer_surplus["B1"]))
        rows[2].append(fr(r.buyer_surplus["B2"]))
        rows[3].append(fr(r.seller_surplus["S1"]))
        rows[4].append(fr(r.seller_surplus["S2"]))
        rows[5].append("bankrupt" if "S1" in r.bankrupt else f"{fr(r.seller_queries['S1'])} queries")
        rows[6].append("bankrupt" if "S2" in r.bankrupt else f"{fr(r.seller_queries['S2'])} queries")
        rows[7].append(fr(r.revenue))
        rows[8].append(f"({fr(r.fees[0])}, {fr(r.fees[1])})")
    widths = [max(len(str(row[i])) for row in [headers, *rows]) for i in range(len(headers))]
    for row in [headers, *rows]:
        print("  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)))
    return 0


def _parse_grid(spec: str) -> list[float]:
    if ":" in spec:
        lo, hi, step = (float(x) for x in spec.split(":"))
        out = []
        v = lo
        while v <= hi + 1e-9:
            out.append(round(v, 10))
            v += step
        return out
    return [float(x) for x in spec.split(",")]


def cmd_sweep(args) -> int:
    import csv

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = MarketConfig() if not args.config else load_run_config(args.config)[0]
    if args.kind == "value_of_platform":
        points = sweep_value_of_platform(
            config,
            rho_grid=_parse_grid(args.rho),
            mu_grid=_parse_grid(args.mu),
            n_seeds=args.opt_seeds,
        )
        table = out / "value_of_platform.csv"
        with table.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["rho", "mu", "ideal_welfare", "no_platform_welfare", "platform_welfare",
                 "no_platform_normalized", "platform_normalized", "platform_revenue",
                 "best_pb", "best_ps", "best_pr"]
            )
            for p in points:
                writer.writerow(
                    [p.rho, p.mu, p.ideal_welfare, p.no_platform_welfare, p.platform_welfare,
                     p.no_platform_normalized, p.platform_normalized, p.platform_revenue,
                     *p.best_fees]
                )
        figure = _plot_value_sweep(points, out)
        print(table)
        print(figure)
        return 0
    if args.kind == "matching":
        fees = _parse_fees(args.fees)
        rows = sweep_matching_strategies(config, fees, n_seeds=args.opt_seeds)
        table = out / "matching_strategies.csv"
        with table.open("w", newline="") as fh:
            writer = csv.writer(fh)
            classes = sorted(rows[0].bankruptcy_by_class)
            writer.writerow(["rule", "threshold", "welfare_mean", "welfare_se", "revenue_mean", "revenue_se",
                             *[f"bankrupt_{c}" for c in classes]])
            for row in rows:
                writer.writerow(
                    [row.strategy.rule, row.strategy.threshold, row.welfare_mean, row.welfare_se,
                     row.revenue_mean, row.revenue_se,
                     *[row.bankruptcy_by_class[c] for c in classes]]
                )
        print(table)
        return 0
    return _fail(f"unknown sweep kind {args.kind!r}")


def _plot_value_sweep(points, out_dir: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rhos = sorted({p.rho for p in points})
    mus = sorted({p.mu for p in points})
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    if len(rhos) > 1:
        mu0 = mus[0]
        sel = [p for p in points if p.mu == mu0]
        axes[0].plot([p.rho for p in sel], [p.no_platform_normalized for p in sel], "o-", label="no platform")
        axes[0].plot([p.rho for p in sel], [p.platform_normalized for p in sel], "s-", label="optimized platform")
        axes[0].set_xlabel("knowledge level rho")
    if len(mus) > 1:
        rho0 = rhos[0]
        sel = [p for p in points if p.rho == rho0]
        axes[1].plot([p.mu for p in sel], [p.no_platform_normalized for p in sel], "o-", label="no platform")
        axes[1].plot([p.mu for p in sel], [p.platform_normalized for p in sel], "s-", label="optimized platform")
        axes[1].set_xlabel("world friction mu")
    for ax in axes:
        ax.set_ylabel("welfare / ideal welfare")
        if ax.lines:
            ax.legend(fontsize=8)
    fig.tight_layout()
    figure = out_dir / "value_of_platform.png"
    fig.savefig(figure, dpi=150)
    plt.close(fig)
    return figure


def cmd_serve(args) -> int:
    transport, _, port = args.serve.partition(":")
    serve(transport, args.config_dir, port=int(port) if port else 0)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seeded episodes and write logs")
    run.add_argument("--config", help="run config JSON (market plus optional regime)")
    run.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE", help="dotted config overrides")
    run.add_argument("--case", help=f"intervention case: {', '.join(sorted(CASES))}")
    run.add_argument("--policy", default="fixed:P_B=1.2,P_S=2.0,P_R=0.1",
                     help="fee policy source: fixed:P_B=..,P_S=..,P_R=.. | random | grid-optimal | external")
    run.add_argument("--matching", default="myopic", help="matching policy: myopic | RULE:THRESHOLD | random")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--episodes", type=int, default=1)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--opt-seeds", type=int, default=5, help="seeds per evaluation of grid-optimal search")
    run.add_argument("--out", default="runs/latest")
    run.add_argument("--serve", metavar="{stdio|tcp:PORT}", help="serve this config to external policies instead of running locally")
    run.set_defaults(func=cmd_run)

    report = sub.add_parser("report", help="aggregate run logs into tables and figures")
    report.add_argument("run_dirs", nargs="+")
    report.add_argument("--kind", required=True, choices=REPORT_KINDS)
    report.add_argument("--out", default="reports")
    report.set_defaults(func=cmd_report)

    oracle = sub.add_parser("oracle", help="print the exact toy-economy equilibrium table")
    oracle.add_argument("--m", default="1")
    oracle.add_argument("--epsilon", default="1/100")
    oracle.add_argument("--alpha", default="3/5")
    oracle.set_defaults(func=cmd_oracle)

    sweep = sub.add_parser("sweep", help="value-of-platform and matching-strategy sweeps")
    sweep.add_argument("--kind", required=True, choices=["value_of_platform", "matching"])
    sweep.add_argument("--config", help="market config JSON")
    sweep.add_argument("--rho", default="0.1:0.9:0.1")
    sweep.add_argument("--mu", default="0.6")
    sweep.add_argument("--fees", default="P_B=1.2,P_S=2.0,P_R=0.1")
    sweep.add_argument("--opt-seeds", type=int, default=10)
    sweep.add_argument("--out", default="sweeps")
    sweep.set_defaults(func=cmd_sweep)

    srv = sub.add_parser("serve", help="expose episodes over the wire protocol")
    srv.add_argument("--serve", default="stdio", metavar="{stdio|tcp:PORT}")
    srv.add_argument("--config-dir", default="configs")
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
