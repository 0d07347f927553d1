import hashlib
import json
import math
import subprocess
import sys

import pytest
import yaml

from torusflow import cli
from torusflow.metrics import compute_c_R

SMALL = {
    "simulate": {"flow": {"grid_n": 8, "n_steps": 20, "n_paths": 2, "record_every": 5},
                 "initial": {"type": "shear", "amplitude": 0.2}},
    "distance-audit": {"flow": {"grid_n": 16, "n_steps": 20, "n_paths": 2, "record_every": 5},
                       "initial": {"type": "translation", "c": [0.3, 0.1]}},
    "stability-audit": {"flow": {"grid_n": 8, "n_steps": 30, "n_paths": 4, "record_every": 10},
                        "initial": {"type": "translation", "c": [0.05, 0.0]},
                        "drift": {"type": "single_mode", "k": [1, 0], "a": 0.5}},
    "rotation": {"flow": {"dt": 1e-4, "n_steps": 60, "n_paths": 4, "record_every": 10},
                 "rotation": {"separation": 0.05, "window": 50}},
    "example-annulus": {"flow": {"n_paths": 100},
                        "example-annulus": {"alpha": 0.2, "eps": 0.02, "labels": [4, 256]}},
    "calibrate": {"flow": {"dt": 1e-2, "n_paths": 200}, "calibrate": {"t": 0.05}},
}


def write_config(tmp_path, scenario, spectrum=None, name="cfg.yaml", **extra):
    raw = {"scenario": scenario,
           "spectrum": spectrum or {"shells": {1: 1.0, 2: 1.0}, "nu": 1.0, "radius": 1.5}}
    if scenario == "example-annulus" and spectrum is None:
        raw["spectrum"] = {"modes": [[1, 1, 1.0], [1, -1, 1.0]]}
    raw.update(SMALL.get(scenario, {}))
    raw.update(extra)
    raw.setdefault("output", {})["dir"] = str(tmp_path / "out")
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_calibrate_exit_zero(tmp_path, capsys):
    cfg = write_config(tmp_path, "calibrate", {"modes": [[1, 0, 1.0], [0, 1, 1.0]], "radius": 1})
    assert cli.main(["run", str(cfg)]) == 0
    rep = json.loads((tmp_path / "out" / "calibrate_seed0.json").read_text())
    assert rep["invariant_violated"] is False and rep["result"]["closed_spectrum"]
    assert "status       ok" in capsys.readouterr().out


def test_distance_audit_no_violations(tmp_path):
    cfg = write_config(tmp_path, "distance-audit")
    assert cli.main(["run", str(cfg), "--seed", "4"]) == 0
    rep = json.loads((tmp_path / "out" / "distance-audit_seed4.json").read_text())
    assert rep["result"]["violations"] == 0 and rep["result"]["checked"] > 0
    header = (tmp_path / "out" / "distance-audit_seed4.csv").read_text().splitlines()[0]
    assert header.startswith("path,t,rho,rho_ext,sigma_sq,b")


def test_zero_wave_vector_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, "simulate", {"modes": [[1, 0, 1.0], [0, 0, 1.0]]})
    assert cli.main(["run", str(cfg)]) == cli.EXIT_CONFIG
    assert "spectrum.modes[1]: wave vector must be nonzero" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize("raw, where", [
    ({"scenario": "nope", "spectrum": {"shells": {1: 1.0}}}, "scenario"),
    ({"scenario": "simulate"}, "spectrum"),
    ({"scenario": "simulate", "spectrum": {"shells": {1: 1.0}}, "flow": {"dt": -1}}, "flow.dt"),
    ({"scenario": "simulate", "spectrum": {"modes": [[1, 0, 1.0]]}}, "spectrum"),
])
def test_config_errors(raw, where):
    with pytest.raises(cli.ConfigError) as err:
        cli.build_config(raw)
    assert err.value.where.startswith(where)


def test_missing_file(tmp_path, capsys):
    assert cli.main(["describe", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_describe_values(tmp_path, capsys):
    cfg = write_config(tmp_path, "simulate", {"modes": [[1, 0, 1.0], [0, 1, 1.0]], "radius": 1})
    assert cli.main(["describe", str(cfg)]) == 0
    out = capsys.readouterr().out
    q = cli.describe_quantities(cli.load_config(cfg))
    assert q["c_R"] == pytest.approx(compute_c_R(cli.load_config(cfg).spectrum, 1))
    assert q["c_R"] == pytest.approx(0.03206, rel=1e-3)
    assert q["c_R_prime"] == 0.0
    assert "c_R" in out and "pi/R" in out


def test_describe_eight_direction(tmp_path):
    cfg = write_config(tmp_path, "simulate", {"shells": {1: 1.0, 2: 1.0}, "radius": math.sqrt(2)})
    q = cli.describe_quantities(cli.load_config(cfg))
    assert q["c_R_prime"] == pytest.approx(0.25)


def test_invariant_violation_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, "calibrate", {"modes": [[1, 0, 1.0]], "require_closure": False})
    assert cli.main(["run", str(cfg)]) == cli.EXIT_INVARIANT
    err = capsys.readouterr().err
    assert "invariant violated" in err
    rep = json.loads((tmp_path / "out" / "calibrate_seed0.json").read_text())
    assert rep["invariant_violated"] is True


@pytest.mark.parametrize("scenario", sorted(SMALL))
def test_runs_are_deterministic(tmp_path, scenario):
    cfg = write_config(tmp_path, scenario)
    hashes = []
    for _ in range(2):
        code, paths, _ = cli.run(cli.load_config(cfg, seed=5))
        assert code == 0
        hashes.append({k: digest(p) for k, p in paths.items()})
    assert hashes[0] == hashes[1]
    assert set(hashes[0]) >= {"config", "json"}
    other = cli.run(cli.load_config(cfg, seed=6))[1]
    assert digest(other["json"]) != hashes[0]["json"]


def test_config_echo_roundtrip(tmp_path):
    cfg = write_config(tmp_path, "simulate")
    _, paths, _ = cli.run(cli.load_config(cfg, seed=2))
    again = cli.load_config(paths["config"])
    assert again.resolved() == cli.load_config(cfg, seed=2).resolved()


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, "simulate")
    proc = subprocess.run([sys.executable, "-m", "torusflow.cli", "describe", str(cfg)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "c_R" in proc.stdout


@pytest.mark.parametrize("name", ["calibrate", "distance_audit", "stability_audit", "rotation", "simulate",
                                  "describe_two_mode", "describe_eight_direction", "example_annulus"])
def test_shipped_configs_parse(name):
    from pathlib import Path
    cfg = cli.load_config(Path(__file__).parent.parent / "configs" / f"{name}.yaml")
    assert cfg.scenario in cli.RUNNERS
