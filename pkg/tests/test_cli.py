import csv
import json

import pytest
import yaml

from coupled_nls import __version__
from coupled_nls.cli import ConfigError, config_hash, eval_lambda, main, normalize_config


def _write(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


BASE = {"problem": {"preset": "quartic_coupled", "grid": {"n_nodes": 120}}, "solver": {"probe_count": 64}}


def test_lambda_expressions():
    mus = [2.0, 4.0]
    assert eval_lambda(0.5, mus) == 0.5
    assert eval_lambda("0.5*mu1", mus) == 1.0
    assert eval_lambda("(mu1+mu2)/2", mus) == 3.0
    assert eval_lambda("-mu2**2", mus) == -16.0
    for bad in ("mu3", "__import__('os')", "mu1 +"):
        with pytest.raises(ConfigError):
            eval_lambda(bad, mus)


def test_normalize_fills_preset_defaults():
    cfg = normalize_config({"problem": {"preset": "power_sum"}})
    assert cfg["problem"]["nonlinearity"]["kind"] == "power_sum"
    assert cfg["problem"]["grid"]["n_nodes"] == 400
    assert cfg["lambdas"] == [0.0]
    with pytest.raises(ConfigError):
        normalize_config({"problem": {}})
    with pytest.raises(ConfigError):
        normalize_config({"problem": {"preset": "quartic_coupled"}, "lambdas": []})
    with pytest.raises(ConfigError):
        normalize_config({"problem": {"preset": "quartic_coupled"}, "bogus": 1})


def test_spectrum_command(tmp_path):
    rc = main(["spectrum", "--config", _write(tmp_path, BASE), "--out", str(tmp_path / "o")])
    assert rc == 0
    data = json.loads((tmp_path / "o" / "spectrum.json").read_text())
    mus = [row["mu"] for row in data["eigenvalues"]]
    assert mus == sorted(mus) and len(mus) == 12
    assert data["version"] == __version__ and len(data["config_hash"]) == 64
    assert data["flags"]["positive_V_fails"] is False


def test_spectrum_flags_nonpositive_V(tmp_path):
    cfg = {"problem": {"preset": "quartic_coupled", "grid": {"n_nodes": 60},
                       "potentials": {"V1": 0, "V2": 0, "gamma": 0}}}
    assert main(["spectrum", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "spectrum.json").read_text())
    assert data["eigenvalues"] == [] and data["flags"]["positive_V_fails"] is True
    assert data["positive_V_check"]["passed"] is False and data["warnings"]


def test_solve_writes_results_and_is_deterministic(tmp_path):
    cfg = {**BASE, "lambdas": [0, "0.5*mu1"]}
    path = _write(tmp_path, cfg)
    assert main(["solve", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["solve", "--config", path, "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "sweep.csv" in files and "result_0.json" in files and "profile_0.csv" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with (tmp_path / "a" / "profile_0.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["r", "u1", "u2"] and float(rows[-1][1]) == 0.0
    res = json.loads((tmp_path / "a" / "result_0.json").read_text())
    assert res["status"] == "ok" and res["residual"] <= 1e-8
    assert res["config_hash"] == config_hash(normalize_config(cfg))
    assert "dir" not in res["config"]["outputs"]


def test_solve_records_resonance_and_continues(tmp_path):
    cfg = {**BASE, "lambdas": ["mu2*(1-1e-12)", 0.5]}
    assert main(["solve", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
    assert rows[0]["status"] == "ResonanceError" and rows[1]["status"] == "ok"


def test_solve_exit_codes(tmp_path):
    bad = {"problem": {"grid": {"n_nodes": 60}, "nonlinearity": {"kind": "quadratic"}}}
    assert main(["solve", "--config", _write(tmp_path, bad), "--out", str(tmp_path)]) == 1
    empty = {**BASE, "lambdas": []}
    assert main(["solve", "--config", _write(tmp_path, empty), "--out", str(tmp_path)]) == 2
    assert main(["solve", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["nonsense"]) == 2


def test_solve_with_worker_pool(tmp_path):
    cfg = {**BASE, "lambdas": {"start": 0, "stop": 1, "num": 2}, "workers": 2}
    assert main(["solve", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("result_*.json"))) == 2


def test_verify_command_and_negative_controls(tmp_path):
    good = {**BASE, "verify": {"count": 50}}
    assert main(["verify", "--config", _write(tmp_path, good), "--out", str(tmp_path / "g")]) == 0
    rep = json.loads((tmp_path / "g" / "verification.json").read_text())
    assert rep["passed"] is True
    corrupt = {**BASE, "verify": {"count": 50, "corrupt_stencil": True}}
    assert main(["verify", "--config", _write(tmp_path, corrupt), "--out", str(tmp_path / "c")]) == 1
    rep = json.loads((tmp_path / "c" / "verification.json").read_text())
    assert rep["checks"]["stencil_consistency"]["passed"] is False
    quad = {"problem": {"grid": {"n_nodes": 60}, "nonlinearity": {"kind": "quadratic"}}, "verify": {"count": 20}}
    assert main(["verify", "--config", _write(tmp_path, quad), "--out", str(tmp_path / "q")]) == 1
    rep = json.loads((tmp_path / "q" / "verification.json").read_text())
    assert rep["checks"]["hypotheses"]["value"]["W2"]["passed"] is False
