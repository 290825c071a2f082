import json

import numpy as np
import pytest

from episim.cli import main
from episim.trends import parse_trends


SEIR_DOC = {
    "params": {"beta": 0.05, "sigma": 0.2, "gamma": 0.05},
    "contact_source": {"type": "generate", "model": "erdos_renyi",
                       "n": 300, "p_edge": 0.02, "seed": 5},
    "run": {"iterations": 25, "initial_infected_fraction": 0.02, "seed": 4},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(SEIR_DOC))
    return path


def test_validate_ok(config_path, capsys):
    assert main(["validate", str(config_path)]) == 0
    assert "valid" in capsys.readouterr().out


def test_validate_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"params": {"beta": 2.0}}))
    assert main(["validate", str(bad)]) == 1
    assert "beta" in capsys.readouterr().err


def test_meanfield_subcommand(config_path, tmp_path):
    out = tmp_path / "mf.csv"
    code = main(["meanfield", str(config_path), "--out", str(out),
                 "--method", "rk4"])
    assert code == 0
    series = parse_trends(out)
    assert series.mode == "meanfield"
    assert series.rows.shape[0] == 26
    assert abs(series.rows[0].sum() - 1.0) < 1e-12


def test_meanfield_fidelity_flag(config_path, tmp_path):
    out = tmp_path / "mf.csv"
    assert main(["meanfield", str(config_path), "--out", str(out),
                 "--fidelity", "as-written"]) == 0
    assert parse_trends(out).fidelity == "as_written"


def test_simulate_single_seed(config_path, tmp_path):
    out = tmp_path / "run.csv"
    assert main(["simulate", str(config_path), "--out", str(out)]) == 0
    series = parse_trends(out)
    assert series.mode == "agent"
    assert series.seed == 4
    assert series.rows.sum(axis=1).tolist() == [300] * 26


def test_simulate_multi_seed_aggregates(config_path, tmp_path):
    out = tmp_path / "bundle.json"
    assert main(["simulate", str(config_path), "--seeds", "3",
                 "--out", str(out), "--format", "json"]) == 0
    bundle = parse_trends(out)
    assert bundle.seeds == (4, 5, 6)
    assert bundle.mean.shape == (26, 4)


def test_simulate_trace_written(config_path, tmp_path):
    out = tmp_path / "run.csv"
    trace = tmp_path / "events.jsonl"
    assert main(["simulate", str(config_path), "--out", str(out),
                 "--trace", str(trace)]) == 0
    events = [json.loads(line) for line in trace.read_text().splitlines()]
    assert any(e["kind"] == "transition" for e in events)


def test_aggregate_subcommand(config_path, tmp_path):
    files = []
    for k in range(2):
        out = tmp_path / f"run{k}.csv"
        assert main(["simulate", str(config_path), "--seed", str(10 + k),
                     "--out", str(out)]) == 0
        files.append(str(out))
    out = tmp_path / "agg.csv"
    assert main(["aggregate", *files, "--out", str(out)]) == 0
    bundle = parse_trends(out)
    assert bundle.seeds == (10, 11)


def test_missing_config_is_validation_error(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "nope.json")]) == 1


def test_usage_error_is_exit_one(capsys):
    assert main(["simulate"]) == 1


def test_identical_invocations_byte_identical(config_path, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", str(config_path), "--out", str(a)]) == 0
    assert main(["simulate", str(config_path), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
