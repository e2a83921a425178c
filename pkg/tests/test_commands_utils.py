"""Tests for the pipeline commands, the CLI and the tool surface."""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import pytest
from conftest import bot_ring_rows, events_from, organic_rows

import cli
import mcp_server
from recount import commands
from recount import store as store_io
from recount._config import RunConfig
from recount._errors import InfeasibleError, InputError, InsufficientDataError
from recount._output import read_csv
from recount.ingest import write_ratings_csv


@pytest.fixture
def synthetic_csv(tmp_path: Path) -> Path:
    path = tmp_path / "ratings.csv"
    with open(path, "w", encoding="utf-8") as handle:
        write_ratings_csv(events_from(bot_ring_rows() + organic_rows()), handle)
    return path


@pytest.fixture
def ingested(synthetic_csv: Path, output_dir: Path) -> RunConfig:
    config = RunConfig(dataset_path=str(synthetic_csv), output_dir=str(output_dir))
    commands.cmd_ingest(config)
    return config


def test_ingest_sample_file(sample_ratings: Path, output_dir: Path) -> None:
    config = RunConfig(dataset_path=str(sample_ratings), output_dir=str(output_dir))
    report = commands.cmd_ingest(config)
    assert report["accepted"] == 25
    assert report["rejected"] == 0
    assert report["users"] == 5
    assert len(store_io.load(output_dir / "store.txt")) == 25


def test_ingest_bad_path_is_exit_code_2(tmp_path: Path) -> None:
    with pytest.raises(InputError) as excinfo:
        commands.cmd_ingest(
            RunConfig(dataset_path=str(tmp_path / "nope.csv"), output_dir=str(tmp_path))
        )
    assert excinfo.value.exit_code == 2


def test_empty_dataset_gives_headered_empty_tables(tmp_path: Path, output_dir: Path) -> None:
    empty = tmp_path / "empty.csv"
    empty.write_text("userId,movieId,rating,timestamp\n", encoding="utf-8")
    config = RunConfig(dataset_path=str(empty), output_dir=str(output_dir))
    assert commands.cmd_ingest(config)["accepted"] == 0

    report = commands.cmd_stability(config)
    assert report["pairs"] == 0
    assert read_csv(output_dir / "histogram.csv") == (["n", "N"], [])
    assert read_csv(output_dir / "survival.csv") == (["t", "k"], [])
    assert read_csv(output_dir / "table1.csv") == (["userId1", "userId2"], [])


def test_stability_outputs_are_consistent_and_repeatable(ingested: RunConfig) -> None:
    out = ingested.output_path
    report = commands.cmd_stability(ingested)
    header, rows = read_csv(out / "table1.csv")
    assert len(header) == 2 + report["buckets"]
    assert len(rows) == report["pairs"]
    assert ["101", "102"] in [row[:2] for row in rows]

    _, survival = read_csv(out / "survival.csv")
    counts = [int(k) for _, k in survival]
    assert counts[0] == report["completed_intervals"] + report["censored_runs"]
    assert counts == sorted(counts, reverse=True)

    snapshot = {path.name: path.read_bytes() for path in out.glob("*.csv")}
    commands.cmd_stability(ingested)
    assert {path.name: path.read_bytes() for path in out.glob("*.csv")} == snapshot


def test_fit_recovers_rate_from_input_curve(tmp_path: Path, output_dir: Path) -> None:
    curve = tmp_path / "curve.csv"
    lines = ["t,k", *(f"{t},{366.72 * math.exp(-0.046 * t)!r}" for t in range(40))]
    curve.write_text("\n".join(lines) + "\n", encoding="utf-8")
    config = RunConfig(fit_input=str(curve), output_dir=str(output_dir))

    report = commands.cmd_fit(config)
    assert report["scheduler_lambda"] == pytest.approx(0.046, abs=1e-9)
    assert report["input.exponential.tau"] == pytest.approx(1 / 0.046)
    assert report["input.exponential.residual_std"] < report["input.pareto.residual_std"]
    assert "caveat" in (output_dir / "fit.txt").read_text(encoding="utf-8")
    assert commands._lambda_from_fit(config) == pytest.approx(0.046, rel=1e-5)


def test_fit_with_one_point_is_exit_code_3(tmp_path: Path, output_dir: Path) -> None:
    curve = tmp_path / "curve.csv"
    curve.write_text("t,k\n1,10\n", encoding="utf-8")
    with pytest.raises(InsufficientDataError) as excinfo:
        commands.cmd_fit(RunConfig(fit_input=str(curve), output_dir=str(output_dir)))
    assert excinfo.value.exit_code == 3


def test_fit_without_curves_is_input_error(output_dir: Path) -> None:
    with pytest.raises(InputError):
        commands.cmd_fit(RunConfig(output_dir=str(output_dir)))


def test_schedule_reports_optimum_and_writes_periods(ingested: RunConfig) -> None:
    config = ingested.with_overrides(lam=0.046, min_span=3)
    report = commands.cmd_schedule(config)
    assert report["t_cr"] == pytest.approx(2.560, abs=1e-3)
    assert report["load_coefficient"] == pytest.approx(0.353, abs=1e-3)
    assert report["time_unit"] == "1 unit = 1000000 s"
    assert report["average_rp"] == pytest.approx(math.log(2) / 0.046 * 1e6)

    graph = store_io.load(config.resolved_store_path)
    assert graph.edges()
    periods = [report["average_rp"], *(v for k, v in report.items() if k.startswith("group"))]
    for edge in graph.edges():
        assert any(edge.average_rp == pytest.approx(period) for period in periods)
    _, rows = read_csv(config.output_path / "periods.csv")
    assert {int(row[0]) for row in rows} == graph.users
    assert "t_cr_seconds" in (config.output_path / "schedule.txt").read_text(encoding="utf-8")


def test_schedule_infeasible_is_exit_code_4(ingested: RunConfig) -> None:
    with pytest.raises(InfeasibleError) as excinfo:
        commands.cmd_schedule(ingested.with_overrides(lam=0.046, p_b=0.3))
    assert excinfo.value.exit_code == 4


def test_simulate_compares_policies(ingested: RunConfig) -> None:
    config = ingested.with_overrides(lam=0.046, policy="all")
    summary = commands.cmd_simulate(config)
    assert summary["always.mean_service_time"] == pytest.approx(1.0)
    assert summary["adaptive.recompute_count"] <= summary["always.recompute_count"]
    assert summary["predicted_load_coefficient"] == pytest.approx(0.353, abs=1e-3)

    replay_csv = (config.output_path / "replay.csv").read_bytes()
    commands.cmd_simulate(config)
    assert (config.output_path / "replay.csv").read_bytes() == replay_csv
    header, rows = read_csv(config.output_path / "replay.csv")
    assert header[:2] == ["time", "policy"]
    assert {row[1] for row in rows} == {"always", "adaptive", summary_periodic(summary)}


def summary_periodic(summary: dict) -> str:
    return next(key.rsplit(".", 1)[0] for key in summary if key.startswith("periodic("))


def test_simulate_periodic_zero_equals_always(ingested: RunConfig) -> None:
    always = commands.cmd_simulate(ingested.with_overrides(policy="always"))
    periodic = commands.cmd_simulate(ingested.with_overrides(policy="periodic", period=0))
    assert periodic["periodic(0).recompute_count"] == always["always.recompute_count"]
    assert periodic["periodic(0).mean_service_time"] == always["always.mean_service_time"]


def test_simulate_rejects_unknown_policy(ingested: RunConfig) -> None:
    with pytest.raises(InputError):
        commands.cmd_simulate(ingested.with_overrides(policy="sometimes"))
    with pytest.raises(InputError, match="period table"):
        commands._policies(RunConfig(policy="adaptive"), None)


def test_detect_bots_lists_injected_ring(ingested: RunConfig) -> None:
    report = commands.cmd_detect_bots(ingested)
    assert [ring["members"] for ring in report["rings"]] == [[101, 102, 103, 104]]
    _, rows = read_csv(ingested.output_path / "bots.csv")
    assert rows[0][1] == "101 102 103 104"
    with pytest.raises(InputError):
        commands.cmd_detect_bots(ingested.with_overrides(epsilon=1.0))


def test_commands_need_a_store(output_dir: Path) -> None:
    with pytest.raises(InputError, match="ingest"):
        commands.cmd_stability(RunConfig(output_dir=str(output_dir)))


def test_cli_runs_subcommands(
    synthetic_csv: Path, output_dir: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = cli.main(
        ["ingest", "--dataset-path", str(synthetic_csv), "--output-dir", str(output_dir)]
    )
    assert code == 0
    assert json.loads(capsys.readouterr().out)["accepted"] == 96

    code = cli.main(["detect-bots", "--output-dir", str(output_dir), "--epsilon", "1"])
    assert code == 2
    assert capsys.readouterr().err.startswith("Error:")

    code = cli.main(["schedule", "--output-dir", str(output_dir), "--lam", "0.046", "--p-b", "0.3"])
    assert code == 4


def test_cli_exposes_every_command() -> None:
    assert set(cli._discover_commands()) == {
        "ingest",
        "stability",
        "fit",
        "schedule",
        "simulate",
        "detect-bots",
    }


def test_tool_surface_reports_errors_as_data(tmp_path: Path) -> None:
    tool = mcp_server._as_tool(commands.cmd_ingest)
    result = tool({"dataset_path": str(tmp_path / "nope.csv"), "output_dir": str(tmp_path)})
    assert result["exit_code"] == 2
    assert "error" in result


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("RECOUNT_MOVIELENS"), reason="RECOUNT_MOVIELENS not set")
def test_movielens_reproduction(output_dir: Path) -> None:
    config = RunConfig(
        dataset_path=os.environ["RECOUNT_MOVIELENS"],
        output_dir=str(output_dir),
        max_pairs=2000,
    )
    assert commands.cmd_ingest(config)["accepted"] > 0
    commands.cmd_stability(config)

    _, histogram_rows = read_csv(output_dir / "histogram.csv")
    counts = [int(count) for _, count in histogram_rows]
    assert counts[0] == max(counts)

    _, survival_rows = read_csv(output_dir / "survival.csv")
    survival = [int(k) for _, k in survival_rows]
    assert survival == sorted(survival, reverse=True)

    report = commands.cmd_fit(config)
    assert report["frequency.exponential.residual_std"] > 0
    assert report["frequency.pareto.residual_std"] > 0
    assert report["scheduler_lambda"] > 0
