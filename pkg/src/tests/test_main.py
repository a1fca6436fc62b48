import csv

import pytest
import yaml
from typer.testing import CliRunner

from src.main import EXIT_CONFIG, EXIT_PROPERTY, EXIT_REFUSED, app
from src.tools.harness.tool.simulate import CSV_COLUMNS
from src.tools.mechanism.tool.mechanism import REVENUE_COLUMNS

runner = CliRunner()


def write_config(path, **data):
    path.write_text(yaml.safe_dump(data))
    return path


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def test_simulate_writes_identical_tables(tmp_path):
    out = tmp_path / "out"
    config = write_config(
        tmp_path / "sim.yaml",
        seed=4,
        trials=2000,
        instance={"generator": "rank1Tight", "n": 5},
        output={"dir": str(out), "name": "rank1"},
    )
    first = runner.invoke(app, ["simulate", "--config", str(config)])
    assert first.exit_code == 0, first.output
    table = (out / "rank1.csv").read_text()
    assert table.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert float(read_rows(out / "rank1.csv")[0]["ratio"]) >= 0.5

    again = runner.invoke(app, ["simulate", "--config", str(config)])
    assert again.exit_code == 0
    assert (out / "rank1.csv").read_text() == table


def test_simulate_json_output(tmp_path):
    config = write_config(tmp_path / "sim.yaml", seed=0, mode="exact", instance={"generator": "builtin", "name": "k3"})
    result = runner.invoke(app, ["simulate", "--config", str(config), "--out", str(tmp_path), "--format", "json"])
    assert result.exit_code == 0, result.output
    assert '"gambler_mean"' in (tmp_path / "results.json").read_text()


def test_simulate_without_seed_is_a_config_error(tmp_path):
    config = write_config(tmp_path / "sim.yaml", trials=10, instance={"generator": "rank1Tight", "n": 3})
    result = runner.invoke(app, ["simulate", "--config", str(config), "--out", str(tmp_path)])
    assert result.exit_code == EXIT_CONFIG
    assert not list(tmp_path.glob("*.csv"))


def test_simulate_rejects_unknown_keys(tmp_path):
    config = write_config(tmp_path / "sim.yaml", seed=1, instance={"generator": "rank1Tight"}, colour="blue")
    assert runner.invoke(app, ["simulate", "--config", str(config)]).exit_code == EXIT_CONFIG


def test_oversized_brute_force_is_refused(tmp_path):
    config = write_config(
        tmp_path / "sim.yaml",
        seed=1,
        instance={"generator": "intersectionTight", "q": 3},
        policy={"kind": "intersectionBalanced"},
        adversary={"kind": "bruteForceWorstCase"},
    )
    result = runner.invoke(app, ["simulate", "--config", str(config), "--out", str(tmp_path)])
    assert result.exit_code == EXIT_REFUSED


def test_verify_small_corpus(tmp_path):
    config = write_config(
        tmp_path / "verify.yaml",
        seed=0,
        corpus=[{"generator": "builtin", "name": "uniform-2-3-points"}, {"generator": "rank1Tight", "n": 3}],
        output={"dir": str(tmp_path), "name": "props"},
    )
    result = runner.invoke(app, ["verify", "--config", str(config)])
    assert result.exit_code == 0, result.output
    rows = read_rows(tmp_path / "props.csv")
    assert rows and all(row["passed"] == "True" for row in rows)


def test_verify_reports_mutated_thresholds(tmp_path):
    config = write_config(
        tmp_path / "verify.yaml",
        seed=0,
        corpus=[{"generator": "builtin", "name": "uniform-2-3-points"}],
        output={"dir": str(tmp_path), "name": "props"},
    )
    result = runner.invoke(app, ["verify", "--config", str(config), "--mutate-threshold", "0.5"])
    assert result.exit_code == EXIT_PROPERTY
    failed = {row["property"]: row["witness"] for row in read_rows(tmp_path / "props.csv") if row["passed"] == "False"}
    assert "telescoping" in failed
    assert failed["telescoping"]


def test_verify_empty_corpus(tmp_path):
    config = write_config(tmp_path / "verify.yaml", seed=0, corpus=[])
    assert runner.invoke(app, ["verify", "--config", str(config), "--out", str(tmp_path)]).exit_code == EXIT_CONFIG


def test_lowerbound_rank_one(tmp_path):
    result = runner.invoke(app, ["lowerbound", "--rank1", "10", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    row = read_rows(tmp_path / "lowerbound-rank1-tight-10.csv")[0]
    assert float(row["prophet_mean"]) == pytest.approx(1.9)
    assert float(row["gambler_mean"]) == 1.0


def test_lowerbound_intersection(tmp_path):
    result = runner.invoke(app, ["lowerbound", "--intersection", "2", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "subsets of one row" in result.output
    row = read_rows(tmp_path / "lowerbound-intersection-tight-2.csv")[0]
    assert float(row["gambler_mean"]) < 2


def test_unknown_output_format_is_rejected(tmp_path):
    result = runner.invoke(app, ["lowerbound", "--rank1", "3", "--out", str(tmp_path), "--format", "xml"])
    assert result.exit_code != 0
    assert not list(tmp_path.iterdir())


def test_lowerbound_needs_exactly_one_instance(tmp_path):
    assert runner.invoke(app, ["lowerbound", "--out", str(tmp_path)]).exit_code == EXIT_CONFIG
    assert runner.invoke(app, ["lowerbound", "--rank1", "3", "--intersection", "2"]).exit_code == EXIT_CONFIG


def test_mechanism_default_instance(tmp_path):
    result = runner.invoke(app, ["mechanism", "--trials", "300", "--seed", "2", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    table = (tmp_path / "revenue.csv").read_text().splitlines()
    assert table[0] == ",".join(REVENUE_COLUMNS)
    assert len(table) == 2


if __name__ == "__main__":
    pytest.main([__file__])
