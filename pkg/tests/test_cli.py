import json

import numpy as np
import pytest

from emergence_lab import cli
from emergence_lab.config import apply_seed, build_external, build_scenario, load_config, validate
from emergence_lab.coords import BodyConfig
from emergence_lab.errors import ConfigurationError
from emergence_lab.potentials import Gravity, Quartic
from emergence_lab.reports import RunSummary, canonical_json, config_hash, fmt, write_csv

BODY = {"n_atoms": 16}
SPRING = {"kind": "harmonic_spring", "stiffness": 1.0, "rest_length": 1.0}

COORDS = {"body": BODY, "pair": SPRING, "external": {"kind": "harmonic", "omega": 0.01},
          "coords": {"n_list": [2, 3, 64], "random_states": 10, "seed": 1}}
MD = {"body": {"n_atoms": 128}, "pair": SPRING, "external": {"kind": "harmonic", "omega": 0.01},
      "scenario": {"cm_offset": [3.0], "temperature": 0.01, "seed": 1},
      "integrator": {"n_steps": 2000, "record_stride": 100}}
MD_QUARTIC = {"body": BODY, "pair": SPRING, "external": {"kind": "quartic", "omega": 0.01, "lam": 1e-8},
              "scenario": {"cm_offset": [10.0], "temperature": 0.01, "seed": 1},
              "integrator": {"n_steps": 2000, "record_stride": 20}}
ENSEMBLE = {"body": BODY, "pair": SPRING, "external": {"kind": "harmonic", "omega": 0.001},
            "scenario": {"temperature": 0.01, "seed": 3},
            "ensemble": {"n_members": 8, "sample_times": [0.0, 1.0], "n_blocks": 2}}
QUANTUM = {"body": {"n_atoms": 2}, "pair": {"kind": "harmonic_spring", "stiffness": 1.0, "rest_length": 0.0},
           "external": {"kind": "harmonic", "omega": 1.0},
           "quantum": {"dt": 0.001, "n_steps": 100, "n_points": [64, 64], "extent": [16.0, 24.0],
                       "record_stride": 10, "packet": {"X0": 1.0, "sigma_X": 0.5, "sigma_xi": 0.7598}}}


def write(tmp_path, config, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(config))
    return str(p)


def run_cli(tmp_path, command, config, out="out", *extra):
    out_dir = tmp_path / out
    code = cli.main([command, "--config", write(tmp_path, config, out + ".json"), "--out", str(out_dir), *extra])
    return code, out_dir


# ---- config and reports


def test_fmt_round_trips():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert fmt(3) == "3" and fmt(True) == "1" and fmt(np.float32(0.5)) == "0.5"


def test_csv_format(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["a", "b"], [[1, 1 / 3]])
    assert p.read_text() == "a,b\n1,0.33333333333333331\n"


def test_canonical_json_stable():
    a = canonical_json({"b": np.float64(1.5), "a": [np.int64(2), float("nan")]})
    assert a == canonical_json({"a": [2, float("nan")], "b": 1.5})
    assert '"nan"' in a


def test_config_hash_order_independent():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_summary_lines():
    s = RunSummary("md", "abc")
    s.add("energy", 1e-7, 1e-6, True)
    s.add("reported thing", 0.5, None, False, guard=False)
    assert s.failed_guards == []
    assert "PASS energy: 1e-07 (tolerance 1e-06)" in s.text()
    s.add("broken", 1.0, 0.5, False)
    assert [c.name for c in s.failed_guards] == ["broken"]


@pytest.mark.parametrize("mutate", [
    lambda c: c["body"].update(n_atoms=1),
    lambda c: c.update(bogus=1),
    lambda c: c["pair"].update(colour="red"),
    lambda c: c["external"].update(kind="cubic"),
    lambda c: c.pop("pair"),
])
def test_schema_rejects(mutate):
    c = json.loads(json.dumps(MD))
    mutate(c)
    with pytest.raises(ConfigurationError):
        validate(c)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "bad.json")


def test_builders():
    assert build_external({"kind": "gravity", "g": 2.0, "floor_strength": 5.0}) == Gravity(2.0, 5.0)
    assert build_external({"kind": "quartic", "omega": 1.0, "lam": 0.1}, mass=2.0) == Quartic(1.0, 0.1, 2.0)
    s = build_scenario(MD_QUARTIC, BodyConfig(16))
    assert s.kind == "quartic_trap" and s.cm_offset == (10.0,)
    with pytest.raises(ConfigurationError):
        build_scenario({**MD, "scenario": {"cm_offset": [1.0, 2.0]}}, BodyConfig(16))


def test_apply_seed():
    c = apply_seed(ENSEMBLE, 42)
    assert c["scenario"]["seed"] == 42 and c["ensemble"]["base_seed"] == 42
    assert apply_seed(ENSEMBLE, None) == ENSEMBLE
    assert ENSEMBLE["scenario"]["seed"] == 3


def test_shipped_configs_validate():
    from pathlib import Path

    configs = sorted((Path(__file__).parents[1] / "configs").glob("*.json"))
    assert configs
    for p in configs:
        load_config(p)


# ---- subcommands


def test_check_coords(tmp_path, capsys):
    code, out = run_cli(tmp_path, "check-coords", COORDS)
    assert code == 0
    text = (out / "summary.txt").read_text()
    assert "FAIL" not in text
    assert "G" in text
    assert (out / "coords.csv").exists()
    assert json.loads((out / "summary.json").read_text())["command"] == "check-coords"
    assert "PASS" in capsys.readouterr().out


def test_check_coords_n1_is_exit_2(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "check-coords", {**COORDS, "body": {"n_atoms": 1}})
    assert code == 2
    assert "n_atoms" in capsys.readouterr().err


def test_md_harmonic(tmp_path):
    code, out = run_cli(tmp_path, "md", MD)
    assert code == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["time", "R_0", "P_0"]
    assert len(lines) == 2000 // 100 + 2
    summary = json.loads((out / "summary.json").read_text())
    names = [c["name"] for c in summary["checks"]]
    assert "CM decoupling (e_cm drift)" in names
    assert all(c["tolerance"] is not None for c in summary["checks"] if c["guard"])


def test_md_quartic_reports_dissipation(tmp_path):
    code, out = run_cli(tmp_path, "md", MD_QUARTIC)
    assert code == 0
    assert (out / "dissipation.csv").exists()
    assert "dissipation_relative_rms" in json.loads((out / "summary.json").read_text())["results"]


def test_md_blow_up_is_exit_3(tmp_path, capsys):
    cfg = {**MD, "integrator": {"dt": 10.0, "n_steps": 5000, "record_stride": 1}}
    code, _ = run_cli(tmp_path, "md", cfg)
    assert code == 3
    assert "step" in capsys.readouterr().err


def test_md_guard_failure_is_exit_4(tmp_path):
    # a coarse step breaks the energy guard without blowing up
    cfg = {**MD, "integrator": {"dt_fraction": 0.1, "n_steps": 2000, "record_stride": 100}}
    code, out = run_cli(tmp_path, "md", cfg)
    assert code == 4
    assert "FAIL total energy conserved" in (out / "summary.txt").read_text()


def test_ensemble_outputs(tmp_path):
    code, out = run_cli(tmp_path, "ensemble", ENSEMBLE)
    assert code == 0
    rows = (out / "ensemble.csv").read_text().splitlines()
    assert len(rows) == 1 + 8 * 2
    report = (out / "report.csv").read_text().splitlines()
    assert report[0].startswith("observable,N,time,mean,variance")


def test_ensemble_single_member_is_exit_2(tmp_path):
    cfg = json.loads(json.dumps(ENSEMBLE))
    cfg["ensemble"]["n_members"] = 1
    code, _ = run_cli(tmp_path, "ensemble", cfg)
    assert code == 2


def test_quantum_harmonic(tmp_path):
    code, out = run_cli(tmp_path, "quantum", QUANTUM)
    assert code == 0
    assert "PASS purity stays 1" in (out / "summary.txt").read_text()
    assert (out / "quantum.csv").read_text().startswith("time,mean_X,mean_P,var_X,var_P,energy,purity,gap\n")


def test_quantum_small_grid_is_exit_4(tmp_path, capsys):
    cfg = json.loads(json.dumps(QUANTUM))
    cfg["quantum"]["extent"] = [4.0, 24.0]
    code, _ = run_cli(tmp_path, "quantum", cfg)
    assert code == 4
    assert "axis X" in capsys.readouterr().err


def test_quantum_needs_section(tmp_path):
    code, _ = run_cli(tmp_path, "quantum", MD)
    assert code == 2


def test_seed_override(tmp_path):
    run_cli(tmp_path, "md", MD, "a")
    run_cli(tmp_path, "md", MD, "b", "--seed", "1")
    run_cli(tmp_path, "md", MD, "c", "--seed", "2")
    a, b, c = ((tmp_path / d / "trajectory.csv").read_bytes() for d in "abc")
    assert a == b
    assert a != c


def test_timing_kept_apart(tmp_path):
    _, out = run_cli(tmp_path, "md", MD)
    timing = json.loads((out / "timing.json").read_text())
    assert "integrate" in timing["seconds"]
    assert "seconds" not in (out / "summary.json").read_text()


def test_plot_flag(tmp_path):
    code, out = run_cli(tmp_path, "md", MD, "out", "--plot")
    assert code == 0
    assert list((out / "figures").glob("*.png"))
    code, out = run_cli(tmp_path, "md", MD, "noplot")
    assert not (out / "figures").exists()


def test_workers_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("EMERGENCE_LAB_WORKERS", "2")
    run_cli(tmp_path, "ensemble", ENSEMBLE, "env")
    monkeypatch.delenv("EMERGENCE_LAB_WORKERS")
    run_cli(tmp_path, "ensemble", ENSEMBLE, "serial")
    assert (tmp_path / "env" / "ensemble.csv").read_bytes() == (tmp_path / "serial" / "ensemble.csv").read_bytes()
