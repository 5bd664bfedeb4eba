import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fgbipm import cli
from fgbipm.sim import RunTrace, aggregate


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_bench_writes_one_trace_per_cell_and_a_summary(tmp_path):
    code = cli.main(["bench", "--horizon", "1", "3", "--steps", "15", "--out", str(tmp_path)])
    assert code == 0
    traces = sorted(p.name for p in tmp_path.glob("trace_*.csv"))
    assert traces == ["trace_al_N1.csv", "trace_al_N3.csv", "trace_bipm_N1.csv",
                      "trace_bipm_N3.csv"]
    summary = _rows(tmp_path / "summary.csv")
    assert [(r["solver"], r["N"]) for r in summary] == [("bipm", "1"), ("al", "1"),
                                                        ("bipm", "3"), ("al", "3")]


def test_single_horizon_single_solver_gives_one_row(tmp_path):
    assert cli.main(["bench", "--solver", "bipm", "--horizon", "1", "--steps", "5",
                     "--out", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "summary.csv")) == 1


def test_summary_matches_statistics_recomputed_from_traces(tmp_path):
    cli.main(["bench", "--horizon", "3", "--steps", "20", "--out", str(tmp_path)])
    for row in _rows(tmp_path / "summary.csv"):
        agg = aggregate(RunTrace.read_csv(tmp_path / f"trace_{row['solver']}_N{row['N']}.csv"))
        assert float(row["iters_avg"]) == agg["iters_avg"]
        assert int(row["iters_max"]) == agg["iters_max"]
        assert int(row["iters_min"]) == agg["iters_min"]
        assert float(row["iters_sd"]) == agg["iters_sd"]
        assert int(row["converged"]) == agg["converged"]


def test_iteration_output_is_byte_identical_across_runs(tmp_path):
    args = ["bench", "--horizon", "3", "--steps", "20", "--seed", "7", "--init-jitter", "0.3"]
    cli.main(args + ["--out", str(tmp_path / "a")])
    cli.main(args + ["--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "iterations.csv").read_bytes() == \
        (tmp_path / "b" / "iterations.csv").read_bytes()


def test_seed_changes_the_jittered_start(tmp_path):
    base = ["bench", "--solver", "bipm", "--horizon", "3", "--steps", "2", "--init-jitter", "2"]
    cli.main(base + ["--seed", "1", "--out", str(tmp_path / "a")])
    cli.main(base + ["--seed", "2", "--out", str(tmp_path / "b")])
    da = RunTrace.read_csv(tmp_path / "a" / "trace_bipm_N3.csv").column("d")
    db = RunTrace.read_csv(tmp_path / "b" / "trace_bipm_N3.csv").column("d")
    assert not np.allclose(da, db)


def test_strict_flags_non_convergence(tmp_path):
    args = ["bench", "--solver", "bipm", "--horizon", "3", "--steps", "5",
            "--bipm-set", "max_total_iter=2", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    assert cli.main(args + ["--strict"]) == 1


@pytest.mark.parametrize("argv", [
    ["bench", "--solver", "sqp"],
    ["bench", "--bipm-set", "mu=3"],
    ["bench", "--cycle", "/nonexistent/cycle.csv"],
    ["bench", "--config", "/nonexistent/params.json"],
    ["bench", "--horizon", "0"],
    ["sweep", "--grid", "nu="],
    ["sweep", "--solver", "bipm", "--grid", "rho_max=1,2"],
    ["sweep"],
    ["plot-data", "/nonexistent/trace.csv"],
])
def test_usage_and_io_errors_exit_2(tmp_path, argv):
    assert cli.main(argv + ["--out", str(tmp_path)]) == 2


def test_unwritable_output_directory_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["bench", "--horizon", "1", "--steps", "2", "--out",
                     str(blocker / "sub")]) == 2


def test_config_file_with_unknown_key_exits_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"macc": {"wheel_radius": 0.3}}))
    assert cli.main(["bench", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_config_sections_reach_the_solver(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"macc": {"w2": 500.0}, "bipm": {"max_total_iter": 2}}))
    assert cli.main(["bench", "--config", str(cfg), "--solver", "bipm", "--horizon", "3",
                     "--steps", "3", "--strict", "--out", str(tmp_path)]) == 1


def test_sweep_case_presets_and_grid(tmp_path):
    assert cli.main(["sweep", "--preset", "bipm", "--steps", "3", "--horizon", "3",
                     "--out", str(tmp_path / "p")]) == 0
    rows = _rows(tmp_path / "p" / "sweep.csv")
    assert [r["case"] for r in rows] == [str(k) for k in range(1, 8)]
    case2 = rows[1]
    assert (float(case2["nu"]), float(case2["kappa0"]), float(case2["kappa_final"]),
            int(float(case2["max_inner_iter"]))) == (8, 0.5, 1500, 10)

    assert cli.main(["sweep", "--solver", "al", "--grid", "rho_nu=5,20",
                     "--grid", "max_inner=10,25", "--steps", "3", "--horizon", "3",
                     "--out", str(tmp_path / "g")]) == 0
    rows = _rows(tmp_path / "g" / "sweep.csv")
    assert len(rows) == 4
    assert {(r["rho_nu"], r["max_inner_iter"]) for r in rows} == \
        {("5", "10"), ("5", "25"), ("20", "10"), ("20", "25")}


def test_al_case_8_preset_row(tmp_path):
    assert cli.main(["sweep", "--preset", "al", "--steps", "2", "--horizon", "1",
                     "--out", str(tmp_path)]) == 0
    case8 = _rows(tmp_path / "sweep.csv")[0]
    assert case8["case"] == "8"
    assert (float(case8["rho_nu"]), float(case8["rho0"]), float(case8["rho_max"])) == \
        (20, 0.5, 5e5)


def test_plot_data_overlays_solvers(tmp_path):
    cli.main(["bench", "--horizon", "3", "--steps", "10", "--out", str(tmp_path)])
    traces = [str(tmp_path / "trace_bipm_N3.csv"), str(tmp_path / "trace_al_N3.csv")]
    assert cli.main(["plot-data", *traces, "--out", str(tmp_path / "plots")]) == 0
    vel = _rows(tmp_path / "plots" / "velocity.csv")
    assert {r["solver"] for r in vel} == {"bipm", "al"}
    assert {r["series"] for r in vel} == {"v", "v_p"}
    assert len(vel) == 2 * 2 * 10
    force = _rows(tmp_path / "plots" / "force.csv")
    assert {r["series"] for r in force} == {"F_t", "F_b"}


def test_plot_data_single_trace(tmp_path):
    cli.main(["bench", "--solver", "al", "--horizon", "3", "--steps", "4",
              "--out", str(tmp_path)])
    assert cli.main(["plot-data", str(tmp_path / "trace_al_N3.csv"),
                     "--out", str(tmp_path / "plots")]) == 0
    assert {r["solver"] for r in _rows(tmp_path / "plots" / "distance.csv")} == {"al"}


def test_plot_data_rejects_mismatched_time_bases(tmp_path):
    cli.main(["bench", "--solver", "bipm", "--horizon", "3", "--steps", "4",
              "--out", str(tmp_path / "a")])
    cli.main(["bench", "--solver", "bipm", "--horizon", "3", "--steps", "6",
              "--out", str(tmp_path / "b")])
    assert cli.main(["plot-data", str(tmp_path / "a" / "trace_bipm_N3.csv"),
                     str(tmp_path / "b" / "trace_bipm_N3.csv"), "--out", str(tmp_path)]) == 2


def test_dump_step_writes_matrix_market_files(tmp_path):
    assert cli.main(["bench", "--solver", "bipm", "--horizon", "3", "--steps", "3",
                     "--dump-step", "1", "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in (tmp_path / "systems").iterdir())
    assert names == ["bipm_N3_step1_H.mtx", "bipm_N3_step1_b.mtx"]


def test_console_entry_point_runs_as_a_module(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fgbipm.cli", "bench", "--solver", "bipm",
                           "--horizon", "1", "--steps", "2", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "bipm N=1" in proc.stdout
