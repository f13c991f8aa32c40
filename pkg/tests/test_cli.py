import json

import pytest

from itu_match import cli
from itu_match.distance import default_workers
from itu_match.io import load_dataset, load_market

from conftest import FIXTURES


def run(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_equilibrate_tu_fixture(capsys):
    code, out, _ = run(capsys, "equilibrate", "--market", FIXTURES / "tu_1x1.json")
    assert code == 0
    assert "mu = (0.5, 0.5, 0.5)" in out


def test_unknown_flag_prints_help(capsys):
    code, _, err = run(capsys, "equilibrate", "--bogus")
    assert code == 1
    assert "usage:" in err


def test_missing_market_file(capsys, tmp_path):
    code, _, err = run(capsys, "equilibrate", "--market", tmp_path / "nope.json")
    assert code == 1 and "error" in err


def test_bad_market_file_is_input_error(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "family": "tu", "preferences": {"phi": [[0.0]]},
                               "men": [{"id": "a"}, {"id": "a"}], "women": [{"id": "b"}]}))
    code, _, err = run(capsys, "equilibrate", "--market", bad)
    assert code == 1 and "duplicate" in err


def test_non_convergence_exit_code(capsys):
    code, _, err = run(capsys, "distance", "--market", FIXTURES / "home_3x3.json", "--u", "nan")
    assert code in (1, 2)
    assert err


def test_validate_fixture(capsys):
    code, out, _ = run(capsys, "validate", "--market", FIXTURES / "home_3x3.json")
    assert code == 0 and "9 of 9 pairs proper" in out


def test_distance_rows(capsys):
    code, out, _ = run(capsys, "distance", "--market", FIXTURES / "home_3x3.json", "--pair", "0,1",
                       "--u", "0,1", "--v", "0.5")
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 3
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert float(row["lambda1"]) + float(row["lambda2"]) == pytest.approx(1.0, abs=1e-8)


def test_outputs_reproducible_without_timestamp(capsys, tmp_path):
    files = {}
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run(capsys, "equilibrate", "--market", FIXTURES / "home_3x3.json", "--out", out, "--no-timestamp")[0] == 0
        assert run(capsys, "report", "--market", FIXTURES / "home_3x3.json", "--out", out)[0] == 0
        files[k] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert files[0] == files[1]
    assert set(files[0]) == {"equilibrium.json", "sharing.csv", "sharing.json"}
    assert "generated_at" not in json.loads(files[0]["equilibrium.json"])


def test_timestamp_present_by_default(capsys, tmp_path):
    assert run(capsys, "equilibrate", "--market", FIXTURES / "tu_1x1.json", "--out", tmp_path)[0] == 0
    doc = json.loads((tmp_path / "equilibrium.json").read_text())
    assert list(doc)[0] == "generated_at"


def test_workers_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("ITU_MATCH_WORKERS", "2")
    assert default_workers() == 2
    code, out, _ = run(capsys, "equilibrate", "--market", FIXTURES / "home_3x3.json")
    assert code == 0
    for bad in ("0", "many"):
        monkeypatch.setenv("ITU_MATCH_WORKERS", bad)
        assert default_workers() == 1
    assert run(capsys, "equilibrate", "--market", FIXTURES / "tu_1x1.json", "--workers", "0")[0] == 1


def test_simulate_then_estimate(capsys, tmp_path):
    sim = tmp_path / "sim"
    code, out, _ = run(capsys, "simulate", "--market", FIXTURES / "home_3x3.json", "--households", 120,
                       "--seed", 7, "--out", sim)
    assert code == 0
    assert load_dataset(sim / "households.csv").n_households == 120
    assert load_market(sim / "market.json").shape == (3, 3)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"free": ["eta"], "tol": 1e-7}))
    code, out, err = run(capsys, "estimate", "--market", sim / "market.json", "--data", sim / "households.csv",
                         "--config", cfg, "--out", tmp_path, "--no-timestamp")
    assert code == 0, err
    doc = json.loads((tmp_path / "estimate_mpec.json").read_text())
    assert list(doc["theta"]) == ["eta"] and 0 < doc["theta"]["eta"] < 1


def test_counterfactual_writes_reports(capsys, tmp_path):
    code, out, _ = run(capsys, "counterfactual", "--market", FIXTURES / "home_3x3.json",
                       "--scenario", FIXTURES / "wage_gap.json", "--out", tmp_path)
    assert code == 0 and "mean S" in out
    assert {p.name for p in tmp_path.iterdir()} == {
        "counterfactual.csv", "counterfactual.json", "decomposition.csv", "decomposition.json"}


def test_tu_market_rejected_for_report(capsys, tmp_path):
    code, _, err = run(capsys, "report", "--market", FIXTURES / "tu_1x1.json", "--out", tmp_path)
    assert code == 1 and "home-production" in err
