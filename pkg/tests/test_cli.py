"""Black-box tests of the command-line exit-code contract and outputs."""
import copy
import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from econav import cli, ocp
from econav.dynamics import MotorPowerModel
from econav.simulate import csv_header

SHORT = {
    "name": "short",
    "vehicle": {"bounds": {"v_x_m_s": [9.0, 30.0]}},
    "ev": {"initial_state": {"e_y_m": 1.3, "v_x_m_s": 12.0, "gamma": 0.88, "p_y_m": 1.3},
           "destination": {"s_x_m": 40.0, "e_y_m": 1.3, "gamma": 0.9}},
    "obstacles": [{"name": "parked", "motion": "static", "frame": "road",
                   "start_m": [25.0, -4.0], "d_safe_m": 2.0}],
    "controller": {"N": 10, "N_s": 85, "Ts_s": 0.1},
    "simulation": {"max_time_s": 10.0, "seed": 3},
}


def write_scenario(tmp_path, name="short.yaml", edit=None):
    doc = copy.deepcopy(SHORT)
    if edit:
        edit(doc)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_run_passes_and_writes_outputs(tmp_path, capsys):
    path = write_scenario(tmp_path)
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "run", "--scenario", path, "--out", out_dir, "--dump-sets",
                       "--trace")
    assert code == cli.EXIT_OK
    summary = json.loads(out)
    assert summary["status"] == "PASS"
    with open(out_dir / "short.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == csv_header(1)
    assert all(np.isfinite(float(v)) for r in rows[1:] for v in r[:-2])
    metrics = json.loads((out_dir / "short-metrics.json").read_text())
    assert metrics["violations"] == 0 and metrics["energy_aware"] is True
    sets = json.loads((out_dir / "short-sets.json").read_text())
    assert len(sets) == len(rows) - 1
    assert len(sets[0]["sets"]) == 1 and len(sets[0]["sets"][0]) == 10  # obstacles x horizon
    trace = [json.loads(line) for line in (out_dir / "short-trace.jsonl").read_text().splitlines()]
    assert trace and {"step", "iter"} <= set(trace[0])


def test_header_is_byte_identical_across_runs(tmp_path, capsys):
    path = write_scenario(tmp_path, edit=lambda d: d["simulation"].update(max_time_s=0.3))
    heads = []
    for sub in ("a", "b"):
        assert run(capsys, "run", "--scenario", path, "--out", tmp_path / sub)[0] == cli.EXIT_FAIL
        heads.append((tmp_path / sub / "short.csv").read_bytes().split(b"\n", 1)[0])
    assert heads[0] == heads[1]


def test_missing_field_is_an_input_error(tmp_path, capsys):
    path = write_scenario(tmp_path, edit=lambda d: d["controller"].pop("Ts_s"))
    code, _, err = run(capsys, "run", "--scenario", path)
    assert code == cli.EXIT_INPUT and "controller.Ts_s" in err


@pytest.mark.parametrize("argv", [
    ("run", "--scenario", "no/such/file.yaml"),
    ("run",),
    ("frobnicate",),
    ("run", "--scenario", "overtaking", "--horizon", "0"),
    ("run", "--scenario", "overtaking", "--energy-aware", "maybe"),
    ("validate-sets", "--trials", "0"),
    ("validate-sets", "--epsilon", "1.5"),
    ("fit", "battery"),
])
def test_input_errors_exit_1(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == cli.EXIT_INPUT
    assert err


def test_unreachable_clearance_is_a_violation(tmp_path, capsys):
    def blocking(d):
        d["obstacles"] = [{"name": "wide", "motion": "static", "frame": "road",
                           "start_m": [30.0, 0.0], "d_safe_m": 8.0}]
    path = write_scenario(tmp_path, edit=blocking)
    code, _, err = run(capsys, "run", "--scenario", path, "--out", tmp_path / "out")
    assert code == cli.EXIT_VIOLATION
    assert "first at t=" in err
    metrics = json.loads((tmp_path / "out" / "short-metrics.json").read_text())
    assert metrics["violations"] > 0
    assert f"t={metrics['first_violation_s']:.2f} s" in err


def test_solver_abort_exit_3(tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise ocp.SolverNumericError("non-finite iterate")

    monkeypatch.setattr(ocp, "solve", broken)
    path = write_scenario(tmp_path)
    code, _, err = run(capsys, "run", "--scenario", path, "--out", tmp_path / "out")
    assert code == cli.EXIT_ABORT and "solver abort" in err
    code, out, _ = run(capsys, "compare", "--scenario", path, "--out", tmp_path / "cmp")
    assert code == cli.EXIT_ABORT and json.loads(out)["verdict"] == "ERROR"


def test_timeout_exit_4(tmp_path, capsys):
    path = write_scenario(tmp_path, edit=lambda d: d["simulation"].update(max_time_s=0.5))
    code, out, err = run(capsys, "run", "--scenario", path, "--out", tmp_path / "out")
    assert code == cli.EXIT_FAIL and "not reached" in err
    assert json.loads(out)["status"] == "TIMEOUT"


def test_compare_writes_paired_outputs(tmp_path, capsys):
    path = write_scenario(tmp_path)
    out_dir = tmp_path / "cmp"
    code, out, _ = run(capsys, "compare", "--scenario", path, "--out", out_dir)
    assert code == cli.EXIT_OK
    doc = json.loads((out_dir / "comparison.json").read_text())
    assert doc["verdict"] == "PASS" and doc["energy_ratio"] < 1.0
    assert doc["energy_wh"]["aware"] < doc["energy_wh"]["unaware"]
    for suffix in ("aware", "unaware"):
        assert (out_dir / f"short-{suffix}.csv").exists()
        assert (out_dir / f"short-{suffix}-metrics.json").exists()
    assert json.loads(out)["verdict"] == "PASS"


def test_compare_without_energy_terms_reports_identical_metrics(tmp_path, capsys):
    path = write_scenario(tmp_path, edit=lambda d: d["controller"].update(
        weights={"Q3": 0.0, "P2": 0.0}))
    code, _, err = run(capsys, "compare", "--scenario", path, "--out", tmp_path / "cmp")
    doc = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
    strip = lambda m: {k: v for k, v in m.items() if k != "energy_aware"}  # noqa: E731
    assert strip(doc["aware"]) == strip(doc["unaware"])
    assert code == cli.EXIT_FAIL and "did not use less energy" in err


def test_figures_flag_renders_pngs(tmp_path, capsys):
    path = write_scenario(tmp_path)
    out_dir = tmp_path / "fig"
    assert run(capsys, "compare", "--scenario", path, "--out", out_dir, "--figures")[0] == 0
    pngs = sorted(p.name for p in out_dir.glob("*.png"))
    assert "short-comparison.png" in pngs
    for suffix in ("aware", "unaware"):
        for kind in ("path", "clearance", "speed-energy", "power"):
            assert f"short-{suffix}-{kind}.png" in pngs
    assert all((out_dir / p).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for p in pngs)


def test_fit_synthetic_battery_and_torque(tmp_path, capsys):
    code, out, _ = run(capsys, "fit", "battery", "--synthetic", "--out", tmp_path / "b.yaml")
    assert code == cli.EXIT_OK
    r2 = float(out.splitlines()[0].split("=")[1])
    assert r2 >= 0.99
    frag = yaml.safe_load((tmp_path / "b.yaml").read_text())
    assert len(frag["motor"]["battery_coeffs"]) == len(MotorPowerModel().c)
    code, out, _ = run(capsys, "fit", "torque", "--synthetic")
    assert code == cli.EXIT_OK and float(out.splitlines()[0].split("=")[1]) >= 0.97
    assert len(yaml.safe_load(out)["motor"]["torque_coeffs_Nm"]) == 4


def test_fit_curvature_recovers_exact_polynomial(tmp_path, capsys):
    k = (3e-8, -4e-6, 2e-3)
    s = [float(a) for a in np.linspace(0.0, 250.0, 26)]
    data = tmp_path / "road.csv"
    data.write_text("s_x,rho\n" + "".join(f"{a!r},{k[0] * a * a + k[1] * a + k[2]!r}\n"
                                          for a in s))
    code, out, _ = run(capsys, "fit", "curvature", data)
    assert code == cli.EXIT_OK
    got = yaml.safe_load(out)["road"]["curvature_coeffs"]
    assert np.allclose(got, k, rtol=0, atol=1e-9)


def test_fit_rank_deficient_data_exit_1(tmp_path, capsys):
    tau = [float(t) for t in np.linspace(-200.0, 300.0, 40)]
    data = tmp_path / "battery.csv"
    data.write_text("".join(f"{t!r},1.0,{1e3 + 5.0 * t!r}\n" for t in tau))
    code, _, err = run(capsys, "fit", "battery", data)
    assert code == cli.EXIT_INPUT and "rank deficient" in err


def test_fit_rejects_wrong_column_count(tmp_path, capsys):
    data = tmp_path / "torque.csv"
    data.write_text("1,2,3\n4,5,6\n")
    code, _, err = run(capsys, "fit", "torque", data)
    assert code == cli.EXIT_INPUT and "2 columns" in err


@pytest.mark.parametrize("eps, beta, n", [(0.1, 0.1, 84), (0.5, 0.5, 12)])
def test_validate_sets_passes(eps, beta, n, capsys):
    code, out, _ = run(capsys, "validate-sets", "--epsilon", eps, "--beta", beta,
                       "--trials", 200, "--seed", 1)
    doc = json.loads(out)
    assert code == cli.EXIT_OK and doc["pass"] and doc["samples_per_set"] == n
    assert doc["passing_trials"] >= doc["required_passing"]


def test_console_script_and_log_level(tmp_path):
    env = {"ECONAV_LOG_LEVEL": "info", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "econav.cli", "validate-sets", "--trials", "5",
                           "--draws", "100"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["trials"] == 5
