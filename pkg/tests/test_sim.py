import numpy as np
import pytest

from fgbipm.macc import MaccParams
from fgbipm.sim import (CycleFormatError, DrivingCycle, RunTrace, TraceRow, aggregate,
                        default_cycle_path, load_cycle, run_closed_loop, step_plant,
                        synthetic_cycle)


def _write(tmp_path, text, name="c.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- cycle ingestion ------------------------------------------------------------

def test_load_cycle_interpolates_onto_the_sample_grid(tmp_path):
    cyc = load_cycle(_write(tmp_path, "t_s,v_p_mps\n0,10\n1,12\n"), ts=0.5)
    np.testing.assert_allclose(cyc.v_p, [10.0, 11.0, 12.0])
    np.testing.assert_allclose(cyc.t, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(cyc.v_max, 36.0)


def test_load_cycle_single_row_is_constant(tmp_path):
    cyc = load_cycle(_write(tmp_path, "t_s,v_p_mps,v_max_mps\n0,7.5,20\n"))
    assert len(cyc) == 1
    assert cyc.v_p[0] == 7.5 and cyc.v_max[0] == 20.0


@pytest.mark.parametrize("body,line", [("0,10\n1,11\n0.5,12\n", 4), ("0,10\n1,-1\n", 3),
                                       ("0,10\n1,abc\n", 3)])
def test_load_cycle_reports_the_offending_line(tmp_path, body, line):
    with pytest.raises(CycleFormatError, match=f":{line}:"):
        load_cycle(_write(tmp_path, "t_s,v_p_mps\n" + body))


def test_load_cycle_rejects_bad_header(tmp_path):
    with pytest.raises(CycleFormatError, match="header"):
        load_cycle(_write(tmp_path, "time,speed\n0,1\n"))


def test_shipped_cycle_matches_the_generator():
    shipped = load_cycle(default_cycle_path())
    gen = synthetic_cycle()
    assert len(shipped) == len(gen) == 4201
    np.testing.assert_allclose(shipped.v_p, gen.v_p, atol=1e-9)
    assert np.abs(np.diff(gen.v_p)).max() / 0.1 <= 2.5 + 1e-9


# -- plant ------------------------------------------------------------

def test_plant_force_balance_keeps_speed():
    p = MaccParams()
    v, _ = step_plant(12.0, 30.0, p.resist(12.0) + 50.0, 50.0, 12.0, 12.0, p)
    assert v == pytest.approx(12.0, abs=1e-14)


def test_plant_matched_speeds_keep_gap():
    _, d = step_plant(10.0, 25.0, MaccParams().resist(10.0), 0.0, 10.0, 10.0, MaccParams())
    assert d == 25.0


def test_plant_arithmetic_example():
    # net force 1770 - (120 + 5 * 10) = 1600 N over 1600 kg for 0.1 s
    v, _ = step_plant(10.0, 30.0, 1770.0, 0.0, 10.0, 10.0, MaccParams())
    assert v == pytest.approx(10.1, abs=1e-12)
    # 1500 N of net force gives the 0.09375 m/s increment
    v, _ = step_plant(10.0, 30.0, 1670.0, 0.0, 10.0, 10.0, MaccParams())
    assert v == pytest.approx(10.09375, abs=1e-12)


def test_plant_cannot_reverse():
    v, _ = step_plant(0.1, 30.0, 0.0, 6000.0, 0.0, 0.0, MaccParams())
    assert v == 0.0


# -- aggregation ------------------------------------------------------------

def _trace(iters, ms=None):
    ms = ms or [1.0] * len(iters)
    return RunTrace([TraceRow(k, 0.1 * k, "bipm", it, t, True, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
                     for k, (it, t) in enumerate(zip(iters, ms))])


def test_aggregate_example():
    a = aggregate(_trace([10, 20, 30]))
    assert (a["iters_avg"], a["iters_max"], a["iters_min"]) == (20.0, 30, 10)


def test_aggregate_single_step():
    a = aggregate(_trace([17], [2.5]))
    assert a["iters_avg"] == a["iters_max"] == a["iters_min"] == 17
    assert a["ms_avg"] == a["ms_max"] == a["ms_min"] == 2.5


def test_aggregate_keeps_budget_hits():
    assert aggregate(_trace([25, 300, 30]))["iters_max"] == 300


def test_aggregate_empty_trace():
    with pytest.raises(ValueError):
        aggregate(RunTrace())


def test_trace_csv_round_trip(tmp_path):
    tr = _trace([3, 4], [0.25, 0.5])
    tr.rows[1].converged = False
    tr.rows[0].d = 12.345678901
    tr.write_csv(tmp_path / "t.csv")
    back = RunTrace.read_csv(tmp_path / "t.csv")
    assert back.rows == tr.rows


def test_trace_csv_without_timing(tmp_path):
    _trace([3]).write_csv(tmp_path / "t.csv", include_timing=False)
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "step,t_s,solver,iters,converged,F_t,F_b,v,d,max_g_viol,max_h_viol"


# -- closed loop ------------------------------------------------------------

def _constant_cycle(v, n):
    return DrivingCycle(0.1 * np.arange(n), np.full(n, v), np.full(n, 30.0))


def test_short_cycle_is_rejected():
    with pytest.raises(ValueError, match="N\\+1"):
        run_closed_loop(_constant_cycle(10.0, 6), MaccParams(), horizon=6)


def test_unknown_solver_is_rejected():
    with pytest.raises(ValueError, match="solver"):
        run_closed_loop(_constant_cycle(10.0, 20), MaccParams(), solver="sqp", horizon=3)


def test_trace_length_for_a_sixty_second_cycle():
    tr = run_closed_loop(synthetic_cycle(), MaccParams(), horizon=3, steps=600)
    assert len(tr) == 600
    np.testing.assert_allclose(tr.column("t_s")[[0, -1]], [0.0, 59.9])


def test_first_predicted_step_is_what_the_plant_does():
    p = MaccParams()
    cyc = synthetic_cycle()
    captured = {}

    def hook(k, graph):
        if k == 0:
            captured["graph"] = graph

    tr = run_closed_loop(cyc, p, horizon=6, steps=1, graph_hook=hook)
    traj = captured["graph"].trajectory()
    assert tr.rows[0].v == pytest.approx(traj["v"][0], abs=1e-12)
    assert tr.rows[0].d == pytest.approx(traj["d"][0], abs=1e-12)


def test_constant_speed_leader_settles_to_force_balance():
    p = MaccParams()
    v = 15.0
    tr = run_closed_loop(_constant_cycle(v, 81), p, horizon=30, d0=p.d_min + p.h_track * v)
    net = tr.column("F_t") - tr.column("F_b")
    assert tr.column("converged").all()
    assert np.all(np.abs(net[20:] - p.resist(v)) < 0.05 * p.resist(v))
    assert np.nanmax(tr.column("max_g_viol")) < 1e-2
    assert np.nanmax(tr.column("max_h_viol")) < 1e-2


def test_short_horizon_constant_speed_run_stays_feasible():
    # with N = 6 the loop keeps a pulse-and-glide cycle instead of settling,
    # but every step stays converged and the gap stays bounded
    p = MaccParams()
    v = 15.0
    tr = run_closed_loop(_constant_cycle(v, 201), p, horizon=6, d0=p.d_min + p.h_track * v)
    assert tr.column("converged").all()
    d, vel = tr.column("d"), tr.column("v")
    assert np.all(d >= p.d_min + p.h_safety * vel)
    assert np.all(np.abs(vel - v) < 1.0)


def test_plant_respects_the_safety_gap_on_the_synthetic_cycle():
    p = MaccParams()
    tr = run_closed_loop(synthetic_cycle(), p, horizon=6, steps=600)
    ok = tr.column("converged")
    slack = tr.column("d") - (p.d_min + p.h_safety * tr.column("v"))
    assert np.all(slack[ok] >= -1e-2 * (1 + p.h_safety))


def test_warm_start_needs_no_more_iterations_than_cold_start():
    p = MaccParams()
    cyc = synthetic_cycle()
    warm = aggregate(run_closed_loop(cyc, p, horizon=6, steps=600, warm=True))
    cold = aggregate(run_closed_loop(cyc, p, horizon=6, steps=600, warm=False))
    assert warm["iters_avg"] <= cold["iters_avg"]
