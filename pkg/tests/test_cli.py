import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ronsfp import outputs as O
from ronsfp.cli import EXIT_INPUT, EXIT_OK, EXIT_SOLVER, compare_moments, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def small_bistable(**extra):
    cfg = {"name": "small",
           "problem": {"kind": "bistable", "sigma": 0.5},
           "ansatz": {"terms": 2, "preset": "benchmark"},
           "alpha": 1e-4,
           "time": {"t_end": 1.0, "output_step": 0.25},
           "slices": {"axes": [[0]], "lo": -3.0, "hi": 3.0, "points": 301}}
    cfg.update(extra)
    return cfg


def test_run_ou_config(tmp_path, capsys):
    out = tmp_path / "ou"
    assert main(["run", str(CONFIGS / "ou.json"), "--out", str(out)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["parameter_error_max"] <= 1e-6
    report = json.loads((out / "report.json").read_text())
    assert report["errors"]["parameter_error_max"] <= 1e-6
    assert report["conservation_max"] <= 1e-8
    timing = json.loads((out / "timing.json").read_text())
    assert set(timing["rons"]) == {"assembly_seconds", "solve_seconds", "wall_seconds"}
    for name in report["files"]:
        assert (out / name).is_file()


def test_outputs_are_byte_identical_on_rerun(tmp_path):
    cfg = write_config(tmp_path, small_bistable(
        space={"mode": "L2_collocation",
               "collocation": {"scheme": "uniform-random", "points": 60}},
        ensemble={"particles": 500, "h_sde": 0.01}, seed=3))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["run", str(cfg), "--out", str(b), "--threads", "2"]) == EXIT_OK
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert "mc_moments.csv" in names
    for name in names:
        if name != "timing.json":
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_override_changes_random_grid(tmp_path):
    cfg = write_config(tmp_path, small_bistable(
        space={"mode": "L2_collocation",
               "collocation": {"scheme": "uniform-random", "points": 60}}))
    assert main(["run", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"]) == EXIT_OK
    assert main(["run", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"]) == EXIT_OK
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    assert ra["seed"] == 1 and rb["seed"] == 2
    assert ra["final_state"] != rb["final_state"]


def test_slices_integrate_to_marginal_mass(tmp_path):
    cfg = small_bistable(slices={"axes": [[0]], "lo": -4.0, "hi": 4.0, "points": 401})
    out = tmp_path / "run"
    assert main(["run", str(write_config(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["slices"]
    for s in report["slices"]:
        assert abs(s["trapezoid_mass"] - s["marginal_mass"]) <= 1e-3
    header, _ = O.read_csv(out / "trajectory.csv")
    assert header[:2] == ["t", "total_probability"]


def test_two_dimensional_slices(tmp_path):
    cfg = {"problem": {"kind": "harmonic-trap", "dim": 3},
           "ansatz": {"terms": 1, "preset": "benchmark"},
           "alpha": 1e-8,
           "time": {"t_end": 0.5, "output_step": 0.5},
           "slices": {"axes": [[0, 2]], "lo": -2.0, "hi": 5.0, "points": 141}}
    out = tmp_path / "trap"
    assert main(["run", str(write_config(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    for s in report["slices"]:
        assert abs(s["trapezoid_mass"] - s["marginal_mass"]) <= 1e-3
    assert report["errors"]["mean_error_max"] <= 1e-6
    assert (out / "reference_moments.csv").is_file()


def test_negative_diffusion_exits_2(tmp_path, capsys):
    cfg = {"problem": {"kind": "harmonic-trap", "dim": 2, "nu": -1.0},
           "ansatz": {"terms": 1, "preset": "benchmark"}, "time": {"t_end": 1.0}}
    assert main(["validate", str(write_config(tmp_path, cfg))]) == EXIT_INPUT
    assert "problem.nu" in capsys.readouterr().err
    assert main(["run", str(write_config(tmp_path, cfg))]) == EXIT_INPUT


def test_missing_config_exits_2(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_INPUT


def test_bad_thread_count_exits_2(tmp_path):
    assert main(["run", str(CONFIGS / "ou.json"), "--threads", "0"]) == EXIT_INPUT


def test_solver_failure_exits_1(tmp_path, capsys):
    # a noiseless contraction drives the width to zero in finite precision
    cfg = {"problem": {"kind": "custom-polynomial", "diffusion": 0.0,
                       "drift": [[{"exponents": [1], "coef": -20.0}]]},
           "ansatz": {"terms": 1, "initial": {"amps": [1.0], "widths": [1.0],
                                              "centers": [[0.0]]}},
           "alpha": 0.0,
           "time": {"t_end": 5.0}}
    assert main(["run", str(write_config(tmp_path, cfg)), "--out",
                 str(tmp_path / "x")]) == EXIT_SOLVER
    assert "WidthCollapseError" in capsys.readouterr().err


def test_validate_shipped_config(capsys):
    assert main(["validate", str(CONFIGS / "duffing_r30.json")]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_schema_command(capsys):
    assert main(["schema"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["title"] == "RunConfig"


# ---------------------------------------------------------------------------
# compare


def test_compare_identical_tables(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", str(write_config(tmp_path, small_bistable())), "--out", str(out)]) == 0
    capsys.readouterr()
    report_path = tmp_path / "cmp.json"
    assert main(["compare", str(out), str(out / "moments.csv"),
                 "--out", str(report_path)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report == json.loads(report_path.read_text())
    for row in report["checkpoints"]:
        assert row["max_abs_mean_diff"] == 0.0 and row["max_abs_second_diff"] == 0.0
        assert row["cov_rel_error"] == 0.0


def test_compare_time_mismatch_exits_2(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    header = ["t", "mean_0", "second_0_0"]
    O.write_csv(a, header, [[0.0, 0.0, 1.0], [1.0, 0.1, 1.0]])
    O.write_csv(b, header, [[0.0, 0.0, 1.0], [2.0, 0.1, 1.0]])
    assert main(["compare", str(a), str(b)]) == EXIT_INPUT
    assert "time grids differ" in capsys.readouterr().err
    assert main(["compare", str(a), str(tmp_path / "none.csv")]) == EXIT_INPUT


def test_compare_z_scores():
    a = {"t": np.array([1.0]), "mean": np.array([[0.1]]), "second": np.array([[[1.0]]]),
         "se_mean": np.zeros((1, 1)), "se_second": np.zeros((1, 1, 1))}
    b = {"t": np.array([1.0]), "mean": np.array([[0.0]]), "second": np.array([[[1.2]]]),
         "se_mean": np.array([[0.05]]), "se_second": np.array([[[0.1]]])}
    report = compare_moments(a, b)
    assert report["max_z"] == pytest.approx(2.0)
    assert report["within_3se"] is True


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ronsfp.cli", "validate",
                           str(CONFIGS / "ou.json")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
