"""Closed-loop receding-horizon simulation of the MACC controller."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import al, bipm
from .macc import MaccParams, Preview, WarmStartError, build_macc_graph, warm_start

log = logging.getLogger(__name__)

DEFAULT_V_MAX = 36.0
TRACE_COLUMNS = ("step", "t_s", "solver", "iters", "wall_ms", "converged", "F_t", "F_b",
                 "v", "d", "max_g_viol", "max_h_viol")


class CycleFormatError(ValueError):
    pass


@dataclass
class DrivingCycle:
    t: np.ndarray
    v_p: np.ndarray
    v_max: np.ndarray

    def __len__(self):
        return self.t.size


def resample(t, values, ts):
    grid = t[0] + ts * np.arange(int(np.floor((t[-1] - t[0]) / ts + 1e-9)) + 1)
    return grid, np.interp(grid, t, values)


def load_cycle(path, ts: float = 0.1, default_v_max: float = DEFAULT_V_MAX) -> DrivingCycle:
    """Read a ``t_s,v_p_mps[,v_max_mps]`` CSV and resample it onto a ``ts`` grid."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:2] != ["t_s", "v_p_mps"] or header[2:] not in ([], ["v_max_mps"]):
            raise CycleFormatError(f"{path}: expected header t_s,v_p_mps[,v_max_mps], got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise CycleFormatError(f"{path}:{lineno}: non-numeric entry") from None
            if len(vals) != len(header):
                raise CycleFormatError(f"{path}:{lineno}: expected {len(header)} columns")
            if not all(np.isfinite(vals)):
                raise CycleFormatError(f"{path}:{lineno}: non-finite entry")
            if any(v < 0 for v in vals[1:]):
                raise CycleFormatError(f"{path}:{lineno}: negative speed")
            if rows and vals[0] <= rows[-1][0]:
                raise CycleFormatError(f"{path}:{lineno}: time column must be strictly increasing")
            rows.append(vals)
    if not rows:
        raise CycleFormatError(f"{path}: no data rows")
    data = np.array(rows)
    t = data[:, 0]
    vmax = data[:, 2] if data.shape[1] == 3 else np.full(t.size, default_v_max)
    if t.size == 1:
        return DrivingCycle(t.copy(), data[:, 1].copy(), vmax.copy())
    grid, vp = resample(t, data[:, 1], ts)
    _, vm = resample(t, vmax, ts)
    return DrivingCycle(grid, vp, vm)


# (segment duration s, leader target speed m/s, speed limit m/s)
_SEGMENTS = (
    (6, 0.0, 13.9), (14, 12.0, 13.9), (12, 12.0, 13.9), (10, 0.0, 13.9), (6, 0.0, 13.9),
    (12, 8.0, 13.9), (8, 13.0, 13.9), (14, 13.0, 13.9), (8, 0.0, 13.9), (10, 0.0, 13.9),
    (16, 11.0, 13.9), (10, 5.0, 13.9), (12, 12.5, 13.9), (10, 0.0, 13.9), (12, 0.0, 13.9),
    (20, 18.0, 19.4), (30, 18.0, 19.4), (15, 10.0, 19.4), (20, 17.0, 19.4), (20, 17.0, 19.4),
    (20, 25.0, 27.8), (40, 26.0, 27.8), (20, 20.0, 27.8), (25, 26.5, 27.8), (20, 14.0, 27.8),
    (15, 8.0, 13.9), (14, 0.0, 13.9), (1, 0.0, 13.9),
)


def synthetic_cycle(ts: float = 0.1, accel: float = 1.5, decel: float = 2.0) -> DrivingCycle:
    """Deterministic 420 s urban/rural/motorway leader profile.

    The leader ramps toward each segment target with bounded acceleration and
    deceleration (both within 2.5 m/s^2).
    """
    t_end = sum(s[0] for s in _SEGMENTS)
    n = int(round(t_end / ts)) + 1
    t = ts * np.arange(n)
    vp = np.zeros(n)
    vmax = np.zeros(n)
    bounds = np.cumsum([s[0] for s in _SEGMENTS])
    v = 0.0
    for j in range(n):
        seg = min(int(np.searchsorted(bounds, t[j], side="right")), len(_SEGMENTS) - 1)
        _, target, limit = _SEGMENTS[seg]
        if j > 0:
            dv = np.clip(target - v, -decel * ts, accel * ts)
            v = v + dv
        vp[j] = v
        vmax[j] = limit
    return DrivingCycle(t, np.round(vp, 6), vmax)


def write_cycle(cycle: DrivingCycle, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "v_p_mps", "v_max_mps"])
        for row in zip(cycle.t, cycle.v_p, cycle.v_max):
            w.writerow([repr(round(float(x), 6)) for x in row])


def default_cycle_path() -> Path:
    return Path(str(resources.files("fgbipm") / "data" / "synthetic_cycle.csv"))


def step_plant(v, d, F_t, F_b, v_p_now, v_p_next, params: MaccParams) -> tuple[float, float]:
    """One sample of the longitudinal plant (the prediction model itself)."""
    p = params
    v_next = v + p.Ts / p.m_eq * (F_t - F_b - p.resist(v))
    v_next = max(float(v_next), 0.0)
    d_next = d + 0.5 * p.Ts * ((v_p_now + v_p_next) - (v + v_next))
    return v_next, float(d_next)


@dataclass
class TraceRow:
    step: int
    t_s: float
    solver: str
    iters: int
    wall_ms: float
    converged: bool
    F_t: float
    F_b: float
    v: float
    d: float
    max_g_viol: float
    max_h_viol: float


@dataclass
class RunTrace:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def write_csv(self, path, include_timing: bool = True) -> None:
        cols = [c for c in TRACE_COLUMNS if include_timing or c != "wall_ms"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in cols])

    @classmethod
    def read_csv(cls, path) -> "RunTrace":
        types = {f.name: f.type for f in fields(TraceRow)}
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(TRACE_COLUMNS) - {"wall_ms"} - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"{path}: trace is missing columns {sorted(missing)}")
            for rec in reader:
                kw = {}
                for name in TRACE_COLUMNS:
                    raw = rec.get(name, "nan")
                    if types[name] == "int":
                        kw[name] = int(raw)
                    elif types[name] == "bool":
                        kw[name] = raw == "1"
                    elif types[name] == "str":
                        kw[name] = raw
                    else:
                        kw[name] = float(raw)
                rows.append(TraceRow(**kw))
        return cls(rows)


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(round(float(value), 10))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def make_preview(cycle: DrivingCycle, k: int, horizon: int, v0, d0, F_t_prev, F_b_prev) -> Preview:
    idx = np.minimum(np.arange(k, k + horizon + 1), len(cycle) - 1)
    return Preview(cycle.v_p[idx], cycle.v_max[idx], F_t_prev, F_b_prev, v0, d0)


def initial_state(cycle: DrivingCycle, params: MaccParams) -> tuple[float, float]:
    """Host starts at the leader's speed, half a metre behind the tracking distance.

    The extra gap keeps a standstill start strictly feasible, where the safe and
    tracking distances coincide at ``d_min``.
    """
    v0 = float(cycle.v_p[0])
    return v0, params.d_min + params.h_track * v0 + 0.5


def run_closed_loop(cycle: DrivingCycle, params: MaccParams, solver: str = "bipm",
                    solver_config=None, horizon: int = 6, warm: bool = True,
                    steps: int | None = None, v0: float | None = None,
                    d0: float | None = None, graph_hook=None) -> RunTrace:
    """Receding-horizon loop: one solve per cycle sample, first control applied to the plant.

    ``graph_hook(k, graph)``, if given, sees each freshly built graph before it
    is solved (used to export linear systems).
    """
    if len(cycle) < horizon + 1:
        raise ValueError(f"cycle has {len(cycle)} samples, need at least N+1 = {horizon + 1}")
    if solver not in ("bipm", "al"):
        raise ValueError(f"unknown solver {solver!r}")
    if solver_config is None:
        solver_config = bipm.BipmConfig() if solver == "bipm" else al.AlConfig()
    sv0, sd0 = initial_state(cycle, params)
    v = sv0 if v0 is None else float(v0)
    d = sd0 if d0 is None else float(d0)
    ft_prev, fb_prev = params.resist(v), 0.0
    n_steps = len(cycle) - 1 if steps is None else min(steps, len(cycle) - 1)
    previous = None
    trace = RunTrace()
    for k in range(n_steps):
        preview = make_preview(cycle, k, horizon, v, d, ft_prev, fb_prev)
        t0 = time.perf_counter()
        try:
            guess = warm_start(previous if warm else None, preview, params)
            graph = build_macc_graph(params, preview, guess)
            if graph_hook is not None:
                graph_hook(k, graph)
            if solver == "bipm":
                report = bipm.solve(graph, solver_config)
            else:
                report = al.solve_al(graph, solver_config)
            traj = graph.trajectory()
            ft, fb = float(traj["F_t"][0]), float(traj["F_b"][0])
            iters, converged = report.total_iterations, report.converged
            g_viol, h_viol = report.final_residuals[1], report.final_residuals[2]
            previous = traj
        except WarmStartError as exc:
            log.debug("step %d: %s; emergency braking", k, exc)
            ft, fb = 0.0, params.F_b_max
            iters, converged, g_viol, h_viol = 0, False, float("nan"), float("nan")
            previous = None
        wall_ms = 1e3 * (time.perf_counter() - t0)
        # applied forces must respect actuator limits even when the solve is off
        ft = float(np.clip(ft, 0.0, min(params.F_t_max, params.a20 + params.a21 * v)))
        fb = float(np.clip(fb, 0.0, params.F_b_max))
        v, d = step_plant(v, d, ft, fb, cycle.v_p[k], cycle.v_p[k + 1], params)
        trace.rows.append(TraceRow(k, float(cycle.t[k]), solver, iters, wall_ms, converged,
                                   ft, fb, v, d, g_viol, h_viol))
        ft_prev, fb_prev = ft, fb
    return trace


def aggregate(trace: RunTrace) -> dict:
    """Mean, max and min of iterations and wall time, plus iteration SD."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    it = trace.column("iters").astype(float)
    ms = trace.column("wall_ms").astype(float)
    return {
        "iters_avg": float(it.mean()), "iters_max": int(it.max()), "iters_min": int(it.min()),
        "iters_sd": float(it.std()),
        "ms_avg": float(ms.mean()), "ms_max": float(ms.max()), "ms_min": float(ms.min()),
        "steps": len(trace), "converged": int(trace.column("converged").sum()),
    }
