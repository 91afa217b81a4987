"""End-to-end tests of the command line front end on the bundled configs."""

import csv
import hashlib
import json
from pathlib import Path

import pytest

from obliqueldp.cli import main
from obliqueldp.hjbvi import load_npz

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
EXAMPLE = str(CONFIG_DIR / "example_1d.json")
LDP_SMALL = str(CONFIG_DIR / "ldp_1d_small.json")


def run_cli(subcommand, config, out, *extra):
    return main([subcommand, "--config", str(config), "--out", str(out), *extra])


@pytest.fixture(scope="module")
def verify_runs(tmp_path_factory):
    """Two identical verify-ldp runs plus one with an overridden seed."""
    base = tmp_path_factory.mktemp("verify")
    dirs = {name: base / name for name in ("first", "second", "reseeded")}
    assert run_cli("verify-ldp", LDP_SMALL, dirs["first"]) == 0
    assert run_cli("verify-ldp", LDP_SMALL, dirs["second"]) == 0
    assert run_cli("verify-ldp", LDP_SMALL, dirs["reseeded"], "--seed", "77") == 0
    return dirs


def test_simulate_writes_path_estimates_and_manifest(tmp_path):
    out = tmp_path / "sim"
    assert run_cli("simulate", EXAMPLE, out) == 0
    with open(out / "path.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x1", "dz1", "z_tv", "on_boundary"]
    assert len(rows) == 1 + 64 + 1
    est = json.loads((out / "estimates.json").read_text())["estimates"]
    assert [e["event_id"] for e in est] == ["exit-tube", "stay-tube"]
    for row in est:
        assert set(row) == {"event_id", "eps", "p_hat", "ci", "n"}
        assert row["n"] == 400
        assert 0.0 <= row["p_hat"] <= 1.0
    # the two events partition the sample space up to the strict boundary
    assert est[0]["p_hat"] + est[1]["p_hat"] == 1.0


def test_manifest_references_every_output(tmp_path):
    out = tmp_path / "sim"
    assert run_cli("simulate", EXAMPLE, out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    listed = {entry["path"] for entry in manifest["outputs"].values()}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert listed == on_disk
    for entry in manifest["outputs"].values():
        digest = hashlib.sha256((out / entry["path"]).read_bytes()).hexdigest()
        assert digest == entry["sha256"]
    assert manifest["subcommand"] == "simulate"
    assert manifest["seed"] == 20240801
    assert set(manifest["versions"]) == {"python", "numpy", "scipy", "obliqueldp"}
    assert "timestamp" in manifest


def test_rate_for_linear_target(tmp_path):
    out = tmp_path / "rate"
    assert run_cli("rate", EXAMPLE, out) == 0
    payload = json.loads((out / "rate.json").read_text())
    assert not payload["infeasible"]
    assert payload["value"] == pytest.approx(0.125, rel=0.05)
    assert payload["constraint_residual"] <= 1e-3
    with open(out / "control.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "a1"]
    assert len(rows) == 1 + payload["n_segments"]


def test_rate_for_named_event(tmp_path):
    cfg = json.loads(Path(EXAMPLE).read_text())
    cfg["rate"] = {"event": "exit-tube", "n_segments": 16, "max_segments": 32}
    path = tmp_path / "event_rate.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "rate"
    assert run_cli("rate", path, out) == 0
    payload = json.loads((out / "rate.json").read_text())
    assert payload["value"] == pytest.approx(0.125, rel=0.05)


def test_stopping_values_keyed_by_subset(tmp_path):
    out = tmp_path / "stop"
    assert run_cli("stopping", EXAMPLE, out) == 0
    payload = json.loads((out / "stopping.json").read_text())
    # two half-steps at control 0.5 reach the tube edge: action 0.25^2
    assert payload["values_by_subset"] == {"0": 0.0625}
    assert payload["reduced_value"] == 0.0625
    assert payload["reduction_identity_holds"] is True


def test_hjb_outputs(tmp_path):
    out = tmp_path / "hjb"
    assert run_cli("hjb", EXAMPLE, out) == 0
    payload = json.loads((out / "hjb.json").read_text())
    # staying inside the static tube costs nothing at its center
    assert payload["value_at_start"] <= 1e-9
    assert payload["vi_type"] == "min"
    with open(out / "value.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "x1", "v"]
    grid = load_npz(out / "value.npz")
    assert grid.vi_type == "min_type"
    assert len(grid.times) == payload["n_stored_layers"]


def test_testfn_check_report(tmp_path):
    out = tmp_path / "tf"
    assert run_cli("testfn-check", EXAMPLE, out) == 0
    payload = json.loads((out / "testfn.json").read_text())
    assert payload["passed"] is True
    assert payload["min_psi_iii"] > 0.0
    for key in ("K_psi_i", "K_psi_ii", "A", "B", "C"):
        assert payload[key] > 0.0


def test_verify_ldp_consistent_verdict(verify_runs):
    report = json.loads((verify_runs["first"] / "report.json").read_text())
    assert report["verdict"] == "consistent"
    assert report["dp_value"] == 0.125
    assert report["lambda_value"] == pytest.approx(0.125375, rel=1e-4)
    with open(verify_runs["first"] / "report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["eps", "log_rate", "ci_lo", "ci_hi", "lambda", "dp_value"]
    assert len(rows) == 1 + 3


def test_verify_ldp_repeat_runs_are_byte_identical(verify_runs):
    first, second = verify_runs["first"], verify_runs["second"]
    for name in ("report.json", "report.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((second / "manifest.json").read_text())
    m1.pop("timestamp")
    m2.pop("timestamp")
    assert m1 == m2


def test_seed_override_changes_the_draws(verify_runs):
    manifest = json.loads((verify_runs["reseeded"] / "manifest.json").read_text())
    assert manifest["seed"] == 77
    base = json.loads((verify_runs["first"] / "report.json").read_text())
    reseeded = json.loads((verify_runs["reseeded"] / "report.json").read_text())
    assert base["log_rates"] != reseeded["log_rates"]
    # the deterministic quantities do not move with the seed
    assert base["lambda_value"] == reseeded["lambda_value"]
    assert base["dp_value"] == reseeded["dp_value"]


def test_verify_ldp_inconclusive_exit_code(tmp_path):
    cfg = json.loads(Path(LDP_SMALL).read_text())
    cfg["ldp"]["radii"] = [0.9]
    cfg["eps_ladder"] = [0.1]
    cfg["n_samples"] = 200
    cfg["time"]["n_steps"] = 64
    path = tmp_path / "far_tube.json"
    path.write_text(json.dumps(cfg))
    assert run_cli("verify-ldp", path, tmp_path / "out") == 2
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["verdict"] == "inconclusive"


def test_config_errors_name_the_field(tmp_path, capsys):
    cfg = json.loads(Path(LDP_SMALL).read_text())
    cfg["eps_ladder"] = [0.25, 0.35, 0.5]
    path = tmp_path / "bad_ladder.json"
    path.write_text(json.dumps(cfg))
    assert run_cli("verify-ldp", path, tmp_path / "out") == 1
    assert "eps_ladder" in capsys.readouterr().err

    cfg = json.loads(Path(EXAMPLE).read_text())
    cfg["coefficients"]["drift"]["name"] = "cubic"
    path = tmp_path / "bad_drift.json"
    path.write_text(json.dumps(cfg))
    assert run_cli("simulate", path, tmp_path / "out") == 1
    err = capsys.readouterr().err
    assert "coefficients.drift.name" in err and "cubic" in err


def test_malformed_json_reports_position(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"domain": [,]}')
    assert run_cli("simulate", path, tmp_path / "out") == 1
    assert "line 1" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert run_cli("simulate", tmp_path / "nope.json", tmp_path / "out") == 1
    assert "not found" in capsys.readouterr().err
