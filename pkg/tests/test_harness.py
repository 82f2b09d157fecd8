import csv
import json
from pathlib import Path

import pytest

from stopmean import cli, harness
from stopmean.harness import (
    BudgetExhausted,
    ConfigError,
    ExperimentConfig,
    InvariantViolation,
    make_source,
    run,
    run_replicate,
    summary_from_dir,
)
from stopmean.metrics import CSV_FIELDS


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


REPLAY = {"source": {"kind": "replay", "pattern": [0, 1, 0]}, "max_samples": 9, "max_level": 3}


def test_replay_run_rows(tmp_path):
    run(ExperimentConfig.from_dict(REPLAY), tmp_path)
    rows = read_rows(tmp_path / "trace.csv")
    assert [(r["n"], r["lambda_n"], float(r["m_n"])) for r in rows] == [
        ("1", "2", 1.0),
        ("2", "5", 0.5),
        ("3", "8", 1 / 3),
    ]
    assert rows[0]["event_An"] == ""


def test_constant_source_rows(tmp_path):
    cfg = ExperimentConfig.from_dict({"source": {"kind": "replay", "pattern": [0]}, "max_samples": 30, "max_level": 20})
    run(cfg, tmp_path)
    rows = read_rows(tmp_path / "trace.csv")
    assert [int(r["lambda_n"]) for r in rows] == list(range(1, 21))
    assert all(float(r["m_n"]) == 0.0 and float(r["gap"]) == 0.0 for r in rows)


def test_header_present_without_rows(tmp_path):
    cfg = ExperimentConfig.from_dict({"source": {"kind": "iid_uniform"}, "max_samples": 1})
    run(cfg, tmp_path)
    assert (tmp_path / "trace.csv").read_text() == ",".join(CSV_FIELDS) + "\n"


@pytest.mark.parametrize(
    "bad",
    [
        {},
        {"source": {"kind": "nope"}},
        {"source": {"kind": "counterexample"}, "colour": "red"},
        {"source": {"kind": "markov", "p_stay": 0.9, "extra": 1}},
        {"source": {"kind": "markov", "values": [0, 1], "transitions": [[0.5, 0.4], [0.5, 0.5]]}},
        {"source": {"kind": "ar1", "a": 1.5, "sigma": 1.0}},
        {"source": {"kind": "replay", "pattern": ["0.1"]}},
        {"source": {"kind": "counterexample"}, "max_samples": 0},
    ],
)
def test_config_rejected(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_cli_exit_code_config_errors(tmp_path, capsys):
    bad = write_config(tmp_path, {"source": {"kind": "counterexample"}, "unknown_key": 1})
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert cli.main(["run", "--config", str(broken), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["trace", "--pattern", "0,0.1", "--levels", "2"]) == 1


def test_cli_exit_code_budget(tmp_path):
    cfg = write_config(tmp_path, {"source": {"kind": "iid_bernoulli", "p": 0.5}, "max_samples": 50, "min_level": 10})
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    # partial output is still written
    assert (out / "trace.csv").exists()


def test_cli_exit_code_invariant(tmp_path, monkeypatch):
    monkeypatch.setattr(harness, "naive_lambda_oracle", lambda *a, **k: -1)
    cfg = write_config(tmp_path, {"source": {"kind": "markov", "p_stay": 0.9}, "max_samples": 500, "verify": True})
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_check_lambdas_rejects_bad_sequences():
    with pytest.raises(InvariantViolation):
        harness._check_lambdas([0, 1, 1], 0)
    with pytest.raises(InvariantViolation):
        harness._check_lambdas([0, 3, 2], 0)
    harness._check_lambdas([0, 1, 2, 9], 0)


def test_budget_exhausted_from_api():
    cfg = ExperimentConfig.from_dict({"source": {"kind": "iid_uniform"}, "max_samples": 10, "min_level": 5})
    with pytest.raises(BudgetExhausted):
        run(cfg)


SMALL = {
    "source": {"kind": "counterexample"},
    "n_seeds": 12,
    "max_samples": 20_000,
    "max_level": 3,
    "run_exact_variant": True,
    "stationarity_level": 2,
    "snapshot_depth": 2,
}


def test_repeated_runs_byte_identical_and_parallel_equals_serial(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    run(harness.replace(cfg, workers=2), tmp_path / "c")
    for name in ("trace.csv", "exact.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "metadata.json").read_text())
    mc = json.loads((tmp_path / "c" / "metadata.json").read_text())
    assert ma["replicates"] == mc["replicates"]
    assert ma["rng"] == "numpy.random.PCG64" and ma["version"]


def test_seed_exchangeability():
    cfg = ExperimentConfig.from_dict(SMALL)
    fwd = {r.seed: r.meta() for r in harness.run_replicates(cfg, [3, 7, 11])}
    rev = {r.seed: r.meta() for r in harness.run_replicates(cfg, [11, 7, 3])}
    assert fwd == rev


def test_summary_counts_match_csv(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL)
    run(cfg, tmp_path)
    report = summary_from_dir(tmp_path)
    rows = read_rows(tmp_path / "trace.csv")
    assert report.rows == len(rows)
    assert sum(lv["count"] for lv in report.levels) == len(rows)
    assert report.replicates == 12
    assert sum(report.deepest_levels.values()) == 12
    assert report.stationarity["level"] == 2
    assert report.exact_levels


def test_counterexample_rows_flag_events(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL)
    run(cfg, tmp_path)
    rows = read_rows(tmp_path / "trace.csv")
    assert all(r["event_An"] in ("true", "false") for r in rows)
    assert all(r["event_H_prefix"] in ("true", "false") for r in rows)
    assert all(r["m_prime_n"] != "" for r in rows if int(r["n"]) == 1)
    for r in rows:
        if r["event_An"] == "true":
            assert float(r["oracle_stop"]) == 0.0


def test_verify_passes_on_real_runs():
    cfg = ExperimentConfig.from_dict({**SMALL, "verify": True})
    for seed in range(5):
        res = run_replicate(cfg, seed)
        assert res.deepest_level >= 1


def test_presets():
    for name, kind in [
        ("convergence-markov", "markov"),
        ("convergence-iid", "iid_bernoulli"),
        ("continuity-ar1", "ar1"),
        ("divergence-counterexample", "counterexample"),
    ]:
        cfg = harness.preset(name)
        assert cfg.source["kind"] == kind
        assert make_source(cfg.source, 0).kind == kind
        # presets round-trip through the strict validator
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        harness.preset("missing")


def test_dyadic_string_values_in_config(tmp_path):
    cfg = ExperimentConfig.from_dict(
        {"source": {"kind": "replay", "pattern": ["0", "1*2^-3000"]}, "max_samples": 40, "max_level": 3}
    )
    run(cfg, tmp_path)
    rows = read_rows(tmp_path / "trace.csv")
    assert rows and {r["value_at_stop"] for r in rows} <= {"0", "0.0", "1*2^-3000"}


def test_cli_commands(tmp_path, capsys):
    assert cli.main(["trace", "--pattern", "0,1,0", "--levels", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1:4] == ["quantized,1,2,1.0", "quantized,2,5,0.5", "quantized,3,8,0.3333333333333333"]

    cfg = write_config(tmp_path, {"source": {"kind": "markov", "p_stay": 0.9}, "max_samples": 2000, "n_seeds": 3})
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    assert cli.main(["summary", "--in", str(tmp_path / "r")]) == 0
    capsys.readouterr()

    sweep_dir = tmp_path / "s"
    assert cli.main(["sweep", "--config", str(cfg), "--seeds", "4", "--out", str(sweep_dir)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["replicates"] == 4
    assert sorted(p.name for p in (sweep_dir / "seeds").iterdir()) == [f"seed_{s}.csv" for s in range(4)]
    per_seed = sum(len(read_rows(p)) for p in (sweep_dir / "seeds").iterdir())
    assert per_seed == summary["rows"]
    assert json.loads((sweep_dir / "summary.json").read_text()) == summary

    assert cli.main(["preset", "convergence-iid"]) == 0
    assert json.loads(capsys.readouterr().out)["source"]["kind"] == "iid_bernoulli"
