import csv
import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from robust_deepc.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, EXIT_VERIFY, main


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def test_generate_data_second_order(tmp_path):
    assert main(["generate-data", "--preset", "second-order", "--seed", "1",
                 "--out", str(tmp_path)]) == EXIT_OK
    man = json.loads((tmp_path / "manifest.json").read_text())
    ex = man["excitation"]
    assert ex["verdict"] and ex["order"] == ex["depth"] + 2 == 12
    assert man["length"] == 100
    rows = _read_csv(tmp_path / "dataset.csv")
    assert len([r for r in rows if r["u0"] != ""]) == 100
    for sig in "uwy":
        meta = json.loads((tmp_path / f"hankel_{sig}.json").read_text())
        assert meta["depth"] == 10 and meta["n_columns"] == 91


def test_generate_data_building_has_three_disturbances(tmp_path):
    assert main(["generate-data", "--preset", "building", "--seed", "1",
                 "--out", str(tmp_path)]) == EXIT_OK
    header = (tmp_path / "dataset.csv").read_text().splitlines()[0].split(",")
    assert [h for h in header if h.startswith("w")] == ["w0", "w1", "w2"]


def test_zero_amplitude_signals_excitation_failure(tmp_path):
    code = main(["generate-data", "--amplitude", "0", "--out", str(tmp_path)])
    assert code == EXIT_VERIFY
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert not man["excitation"]["verdict"] and man["excitation"]["causes"]


def test_generate_data_is_deterministic(tmp_path):
    for d in ("a", "b"):
        main(["generate-data", "--seed", "3", "--out", str(tmp_path / d)])
    for name in ("dataset.csv", "hankel_u.csv", "hankel_w.csv", "hankel_y.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.fixture(scope="module")
def second_order_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["run", "--preset", "second-order", "--seed", "1", "--controller", "both",
                 "--out", str(out)])
    return code, out


def test_run_writes_logs_and_summary(second_order_run):
    code, out = second_order_run
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 45 and summary["max_constraint_violation"] <= 1e-8
    for kind in ("robust-deepc", "robust-mpc"):
        rows = _read_csv(out / f"{kind}.csv")
        assert len(rows) == 45
        y = np.array([float(r["y0"]) for r in rows])
        u = np.array([float(r["u0"]) for r in rows])
        assert np.all(np.abs(y) <= 0.5 + 1e-8) and np.all(np.abs(u) <= 5)
        s = summary["controllers"][kind]
        assert {"total_cost", "solve_time", "max_violation"} <= set(s)
    plot = _read_csv(out / "plot_data.csv")
    assert list(plot[0]) == ["t", "deepc", "mpc", "ref", "max", "min"]
    assert plot[0]["t"] == "0" and plot[0]["ref"] == "0.4" and plot[15]["ref"] == "-0.4"


def test_summary_deviation_matches_logs(second_order_run):
    """The reported deviation equals the maximum recomputed from the two CSV logs."""
    _, out = second_order_run
    a = _read_csv(out / "robust-deepc.csv")
    b = _read_csv(out / "robust-mpc.csv")
    dev = max(max(abs(float(x[k]) - float(y[k])) for k in ("y0", "u0")) for x, y in zip(a, b))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["max_deepc_mpc_deviation"] == pytest.approx(dev, rel=1e-12, abs=1e-300)
    assert dev <= 1e-6


def test_run_csvs_are_byte_identical(second_order_run, tmp_path):
    _, out = second_order_run
    assert main(["run", "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
    for name in ("robust-deepc.csv", "robust-mpc.csv", "plot_data.csv"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_run_from_dataset_file(tmp_path, second_order_run):
    _, out = second_order_run
    main(["generate-data", "--seed", "1", "--out", str(tmp_path / "d")])
    assert main(["run", "--seed", "1", "--steps", "5", "--controller", "robust-deepc",
                 "--data", str(tmp_path / "d" / "dataset.csv"), "--out", str(tmp_path / "r")]) == 0
    a = (tmp_path / "r" / "robust-deepc.csv").read_text().splitlines()
    b = (out / "robust-deepc.csv").read_text().splitlines()
    assert a == b[:6]


def test_worst_case_flag(tmp_path):
    code = main(["run", "--steps", "4", "--worst-case", "--controller", "robust-mpc",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["worst_case"] == "vertex"
    w = [abs(float(r["w0"])) for r in _read_csv(tmp_path / "robust-mpc.csv")]
    assert w == pytest.approx([0.1] * 4)


def test_horizon_and_t_init_overrides(tmp_path):
    assert main(["run", "--steps", "3", "--horizon", "4", "--t-init", "3",
                 "--controller", "robust-deepc", "--out", str(tmp_path)]) == EXIT_OK


def test_infeasible_run_exit_code(tmp_path):
    cfg = tmp_path / "tight.json"
    cfg.write_text(json.dumps({"bounds": {"y": [0.45, 0.5]}}))
    code = main(["run", "--config", str(cfg), "--steps", "3", "--out", str(tmp_path / "o")])
    assert code == EXIT_INFEASIBLE
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["infeasible"]["robust-mpc"] == {"step": 0, "status": "infeasible"}


def test_verify_second_order(tmp_path):
    assert main(["verify", "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    verdicts = {k: v["verdict"] for k, v in rep.items() if isinstance(v, dict)}
    assert all(verdicts.values()) and rep["verdict"]
    assert {"fundamental_lemma_uncertain", "sls_equivalence", "dualization",
            "causality"} <= set(verdicts)


def test_verify_truncated_dataset_fails(tmp_path):
    code = main(["verify", "--seed", "1", "--length", "12", "--out", str(tmp_path)])
    assert code == EXIT_VERIFY
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["fundamental_lemma_uncertain"]["verdict"] is False


def test_verify_building(tmp_path):
    main(["verify", "--preset", "building", "--seed", "1", "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["observable"]["verdict"] and rep["sls_equivalence"]["verdict"]


def test_custom_preset(tmp_path, so_system):
    (tmp_path / "sys.json").write_text(json.dumps(so_system.to_dict()))
    (tmp_path / "cfg.toml").write_text('t_init = 2\nhorizon = 4\n[weights]\nQ = 1.0\nR = 0.1\n'
                                       '[bounds]\nu = [-5, 5]\ny = [-1, 1]\nw = [-0.05, 0.05]\n')
    code = main(["run", "--preset", "custom", "--system", str(tmp_path / "sys.json"),
                 "--config", str(tmp_path / "cfg.toml"), "--steps", "3",
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_OK


@pytest.mark.parametrize("argv", [
    ["run", "--preset", "nope"],
    ["run", "--preset", "custom"],
    ["run", "--data", "/nonexistent.csv"],
    ["generate-data", "--horizon", "0"],
    ["verify", "--steps", "3"],
    ["frobnicate"],
])
def test_input_errors(argv, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        code = main(argv + ["--out", str(tmp_path)])
        raise SystemExit(code)
    assert exc.value.code == EXIT_INPUT


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INPUT
    cfg.write_text("{not json")
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INPUT


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("robust-deepc")
    cmd = [exe] if exe else [sys.executable, "-m", "robust_deepc.cli"]
    res = subprocess.run(cmd + ["generate-data", "--out", str(tmp_path)], capture_output=True)
    assert res.returncode == 0
    res = subprocess.run(cmd + ["run", "--preset", "nope"], capture_output=True)
    assert res.returncode == EXIT_INPUT


def test_solver_tolerance_env(tmp_path):
    env = {**os.environ, "HSC_SOLVER_TOL": "1e-300"}
    res = subprocess.run([sys.executable, "-m", "robust_deepc.cli", "run", "--steps", "2",
                          "--controller", "robust-mpc", "--out", str(tmp_path)],
                         capture_output=True, env=env)
    # An unattainable acceptance tolerance turns every solve into a numerical failure.
    assert res.returncode == EXIT_INFEASIBLE
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["infeasible"]["robust-mpc"]["status"] == "numerical-failure"
