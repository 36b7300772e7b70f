import csv
import json

import pytest

from platsim.cli import main
from platsim.runlog import read_rows


def test_run_fixed_policy_smoke(tmp_path, capsys):
    out = tmp_path / "run"
    code = main([
        "run", "--case", "laissez_faire", "--policy", "fixed:P_B=1.2,P_S=2.0,P_R=0.1",
        "--episodes", "2", "--seed", "3", "--out", str(out),
        "--set", "epochs=3", "--set", "n_buyers=4", "--set", "n_sellers=4",
        "--set", "steps_per_epoch=12", "--set", "constant_friction=0.4",
    ])
    assert code == 0
    assert (out / "transactions.csv").exists()
    assert (out / "summary.json").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["episodes"] == 2


def test_run_unknown_case_exits_two(capsys):
    code = main(["run", "--case", "galactic_senate", "--out", "/tmp/never"])
    assert code == 2
    err = capsys.readouterr().err
    assert "laissez_faire" in err and "fee_freeze" in err


def test_run_bad_override_exits_two(tmp_path):
    code = main(["run", "--set", "not_a_field=3", "--out", str(tmp_path)])
    assert code == 2


def test_no_platform_and_freeze_controlled_pair(tmp_path):
    base_args = [
        "--episodes", "2", "--seed", "11",
        "--set", "epochs=3", "--set", "n_buyers=4", "--set", "n_sellers=4",
        "--set", "steps_per_epoch=12", "--set", "constant_friction=0.4",
    ]
    a = tmp_path / "nop"
    b = tmp_path / "frz"
    assert main(["run", "--case", "no_platform", "--out", str(a), *base_args]) == 0
    assert main(["run", "--case", "fee_freeze", "--out", str(b), *base_args]) == 0
    rows_a = read_rows(a, "epochs")
    rows_b = read_rows(b, "epochs")
    assert all(float(r["revenue"]) == 0.0 for r in rows_a)
    assert any(float(r["revenue"]) > 0.0 for r in rows_b)
    # Controlled pair: same query stream either way.
    tx_a = read_rows(a, "transactions")
    tx_b = read_rows(b, "transactions")
    assert [r["query_taste"] for r in tx_a] == [r["query_taste"] for r in tx_b]


def test_report_welfare_identity_on_aggregates(tmp_path):
    out = tmp_path / "run"
    assert main([
        "run", "--case", "tax_referrals", "--policy", "random", "--episodes", "3", "--seed", "2",
        "--out", str(out),
        "--set", "epochs=8", "--set", "n_buyers=4", "--set", "n_sellers=4",
        "--set", "steps_per_epoch=12", "--set", "pre_epochs=3", "--set", "post_epochs=3",
    ]) == 0
    rep = tmp_path / "rep"
    assert main(["report", str(out), "--kind", "welfare_by_stage", "--out", str(rep)]) == 0
    with (rep / "welfare_by_stage.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["stage"] for r in rows] == ["pre", "shock", "post"]
    for row in rows:
        total = (
            float(row["buyer_surplus_mean"])
            + float(row["seller_surplus_mean"])
            + float(row["revenue_mean"])
        )
        assert total == pytest.approx(float(row["welfare_mean"]), rel=1e-9)
    assert (rep / "welfare_by_stage.png").exists()


def test_report_all_kinds_render(tmp_path):
    out = tmp_path / "run"
    assert main([
        "run", "--case", "fee_cap_all", "--policy", "random", "--episodes", "2", "--seed", "4",
        "--out", str(out),
        "--set", "epochs=8", "--set", "n_buyers=4", "--set", "n_sellers=4",
        "--set", "steps_per_epoch=12", "--set", "pre_epochs=3", "--set", "post_epochs=3",
    ]) == 0
    rep = tmp_path / "rep"
    for kind in ("fees_by_stage", "agents_by_stage", "bankruptcy_by_class"):
        assert main(["report", str(out), "--kind", kind, "--out", str(rep)]) == 0
        assert (rep / f"{kind}.csv").exists()
        assert (rep / f"{kind}.png").exists()


def test_identical_args_and_seeds_give_identical_files(tmp_path):
    args = [
        "run", "--case", "laissez_faire", "--policy", "random", "--episodes", "2", "--seed", "7",
        "--set", "epochs=3", "--set", "n_buyers=4", "--set", "n_sellers=4",
        "--set", "steps_per_epoch=12", "--set", "constant_friction=0.4",
    ]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([*args, "--out", str(a)]) == 0
    assert main([*args, "--out", str(b)]) == 0
    for name in ("transactions.csv", "epochs.csv", "manifest.json", "summary.json"):
        assert (a / name).read_text() == (b / name).read_text()


def test_run_grid_optimal_policy(tmp_path):
    out = tmp_path / "run"
    code = main([
        "run", "--case", "laissez_faire", "--policy", "grid-optimal", "--episodes", "1",
        "--seed", "1", "--opt-seeds", "2", "--out", str(out),
        "--set", "epochs=2", "--set", "n_buyers=4", "--set", "n_sellers=4",
        "--set", "steps_per_epoch=12", "--set", "constant_friction=0.4",
    ])
    assert code == 0
    rows = read_rows(out, "epochs")
    fee_rows = {(r["buyer_fee"], r["seller_fee"], r["referral_rate"]) for r in rows[1:]}
    assert len(fee_rows) == 1  # one frozen, searched triple across epochs


def test_report_rejects_incompatible_runs(tmp_path):
    small = ["--set", "epochs=3", "--set", "steps_per_epoch=12", "--set", "constant_friction=0.4"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--episodes", "1", "--out", str(a), "--set", "n_buyers=4", "--set", "n_sellers=4", *small]) == 0
    assert main(["run", "--episodes", "1", "--out", str(b), "--set", "n_buyers=5", "--set", "n_sellers=5", *small]) == 0
    assert main(["report", str(a), str(b), "--kind", "welfare_by_stage", "--out", str(tmp_path / "rep")]) == 2


def test_oracle_command_prints_table(capsys):
    assert main(["oracle", "--m", "1", "--epsilon", "1/100", "--alpha", "3/5"]) == 0
    out = capsys.readouterr().out
    assert "revenue_rational_matching" in out
    assert "251/50" in out  # (5 + 2/100) revenue of the myopic case


def test_oracle_command_rejects_out_of_range_epsilon(capsys):
    assert main(["oracle", "--m", "1", "--epsilon", "1/5", "--alpha", "3/5"]) == 2
    assert "1/8" in capsys.readouterr().err


def test_oracle_command_rejects_low_alpha(capsys):
    assert main(["oracle", "--m", "1", "--epsilon", "1/100", "--alpha", "1/2"]) == 2
    assert "53/102" in capsys.readouterr().err


def test_sweep_matching_writes_table(tmp_path):
    out = tmp_path / "sweep"
    assert main([
        "sweep", "--kind", "matching", "--fees", "P_B=0.4,P_S=0.4,P_R=0.1",
        "--opt-seeds", "2", "--out", str(out),
        "--config", "configs/small_4x4.json",
    ]) == 0
    with (out / "matching_strategies.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 21


def test_sweep_value_writes_table_and_figure(tmp_path):
    out = tmp_path / "sweep"
    assert main([
        "sweep", "--kind", "value_of_platform", "--rho", "0.4,0.8", "--mu", "0.5",
        "--opt-seeds", "2", "--out", str(out),
        "--config", "configs/small_4x4.json",
    ]) == 0
    assert (out / "value_of_platform.csv").exists()
    assert (out / "value_of_platform.png").exists()
