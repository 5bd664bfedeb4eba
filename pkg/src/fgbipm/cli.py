"""Command-line driver: ``bench``, ``sweep`` and ``plot-data``.

Exit codes: 0 on success, 1 when ``--strict`` is set and some MPC step did not
converge, 2 on usage or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import al, bipm, linalg
from .macc import MaccParams
from .sim import (CycleFormatError, RunTrace, aggregate, default_cycle_path, initial_state,
                  load_cycle, run_closed_loop)

log = logging.getLogger("fgbipm")

SOLVERS = ("bipm", "al")
SUMMARY_COLUMNS = ("solver", "N", "steps", "converged", "iters_avg", "iters_max", "iters_min",
                   "iters_sd", "ms_avg", "ms_max", "ms_min")
TIMING_COLUMNS = ("ms_avg", "ms_max", "ms_min")
SWEEP_KEYS = {"bipm": ("nu", "kappa0", "kappa_final", "max_inner_iter"),
              "al": ("rho_nu", "rho0", "rho_max", "max_inner_iter")}
KEY_ALIASES = {"max_inner": "max_inner_iter", "inner": "max_inner_iter",
               "max_total": "max_total_iter"}

# preset tuning cases, keyed by case number (1-7 barrier, 8-16 augmented Lagrangian)
BIPM_CASES = {
    1: dict(nu=4, kappa0=0.05, kappa_final=1.5e3, max_inner_iter=10),
    2: dict(nu=8, kappa0=0.5, kappa_final=1.5e3, max_inner_iter=10),
    3: dict(nu=50, kappa0=0.5, kappa_final=1.5e3, max_inner_iter=10),
    4: dict(nu=50, kappa0=0.5, kappa_final=1.5e3, max_inner_iter=25),
    5: dict(nu=8, kappa0=10, kappa_final=1.5e3, max_inner_iter=10),
    6: dict(nu=8, kappa0=10, kappa_final=1.5e3, max_inner_iter=25),
    7: dict(nu=20, kappa0=2, kappa_final=1.5e6, max_inner_iter=15),
}
AL_CASES = {
    8: dict(rho_nu=20, rho0=0.5, rho_max=5e5, max_inner_iter=10),
    9: dict(rho_nu=5, rho0=0.5, rho_max=5e5, max_inner_iter=10),
    10: dict(rho_nu=50, rho0=0.5, rho_max=5e5, max_inner_iter=10),
    11: dict(rho_nu=50, rho0=0.5, rho_max=5e5, max_inner_iter=25),
    12: dict(rho_nu=20, rho0=10, rho_max=5e5, max_inner_iter=10),
    13: dict(rho_nu=20, rho0=10, rho_max=5e5, max_inner_iter=25),
    14: dict(rho_nu=20, rho0=0.5, rho_max=5e5, max_inner_iter=25),
    15: dict(rho_nu=20, rho0=0.5, rho_max=5e4, max_inner_iter=10),
    16: dict(rho_nu=20, rho0=0.5, rho_max=5e6, max_inner_iter=10),
}


class UsageError(Exception):
    pass


# -- configuration ----------------------------------------------------------

@dataclasses.dataclass
class RunSettings:
    params: MaccParams
    bipm: dict
    al: dict


def _config_type(solver):
    return bipm.BipmConfig if solver == "bipm" else al.AlConfig


def _check_keys(solver, overrides):
    known = {f.name for f in dataclasses.fields(_config_type(solver))}
    bad = sorted(set(overrides) - known)
    if bad:
        raise UsageError(f"unknown {solver} setting(s): {', '.join(bad)}")


def make_solver_config(solver, overrides):
    _check_keys(solver, overrides)
    try:
        return _config_type(solver)(**overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {solver} settings {overrides}: {exc}") from None


def load_settings(path) -> RunSettings:
    """Read ``--config``: either a flat MACC parameter map or sections ``macc``/``bipm``/``al``."""
    if path is None:
        return RunSettings(MaccParams(), {}, {})
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    sections = {"macc", "bipm", "al"}
    if set(data) & sections:
        extra = sorted(set(data) - sections)
        if extra:
            raise UsageError(f"config {path}: unexpected top-level keys {extra}")
        macc, b, a = data.get("macc", {}), data.get("bipm", {}), data.get("al", {})
    else:
        macc, b, a = data, {}, {}
    try:
        params = MaccParams.from_dict(macc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config {path}: {exc}") from None
    b = {KEY_ALIASES.get(k, k): v for k, v in b.items()}
    a = {KEY_ALIASES.get(k, k): v for k, v in a.items()}
    _check_keys("bipm", b)
    _check_keys("al", a)
    return RunSettings(params, b, a)


def parse_assignments(items, solver=None) -> dict:
    """``["nu=8", "kappa0=0.5"]`` -> ``{"nu": 8.0, "kappa0": 0.5}`` (ints kept as ints)."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"expected key=value, got {item!r}")
        out[KEY_ALIASES.get(key.strip(), key.strip())] = _number(value)
    return out


def parse_grid(items) -> dict:
    """``["nu=4,8,50", "max_inner=10,25"]`` -> ordered ``{key: [values]}``."""
    grid = {}
    for item in items or ():
        key, sep, values = item.partition("=")
        vals = [v for v in values.split(",") if v.strip()]
        if not sep or not vals:
            raise UsageError(f"expected key=v1,v2,..., got {item!r}")
        grid[KEY_ALIASES.get(key.strip(), key.strip())] = [_number(v) for v in vals]
    return grid


def _number(text):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"not a number: {text!r}") from None


def _solvers(choice):
    return SOLVERS if choice == "both" else (choice,)


def _load_cycle(path, params):
    path = default_cycle_path() if path is None else Path(path)
    try:
        return load_cycle(path, params.Ts)
    except OSError as exc:
        raise UsageError(f"cannot read cycle {path}: {exc}") from None
    except CycleFormatError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from None
    return out


# -- closed-loop jobs (module level so worker processes can import them) ----

@dataclasses.dataclass
class Job:
    solver: str
    horizon: int
    params: MaccParams
    overrides: dict
    cycle_path: str | None
    steps: int | None
    warm: bool
    v0: float | None = None
    d0: float | None = None
    dump_step: int | None = None
    dump_prefix: str | None = None


def run_job(job: Job) -> RunTrace:
    cycle = _load_cycle(job.cycle_path, job.params)
    config = make_solver_config(job.solver, job.overrides)
    hook = None
    if job.dump_step is not None:
        def hook(k, graph):
            if k != job.dump_step:
                return
            if job.solver == "bipm":
                system = linalg.assemble(graph, config.kappa0)
            else:
                eq = graph.stacked(graph_kind("EQUALITY"))
                ineq = graph.stacked(graph_kind("INEQUALITY"))
                state = linalg.AlState(np.full(eq.rows, config.lambda0),
                                       np.full(ineq.rows, max(config.lambda0, 0.0)), config.rho0)
                system = linalg.assemble(graph, mode="al", al_state=state)
            linalg.dump_matrix_market(system, job.dump_prefix)
    return run_closed_loop(cycle, job.params, job.solver, config, horizon=job.horizon,
                           warm=job.warm, steps=job.steps, v0=job.v0, d0=job.d0,
                           graph_hook=hook)


def graph_kind(name):
    from .graph import FactorKind
    return FactorKind[name]


def _run_all(jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so results merge deterministically
        return list(pool.map(run_job, jobs))


# -- output helpers ---------------------------------------------------------

def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        # shortest round-trip form, so statistics re-read from disk compare exactly
        return repr(float(value))
    return str(value)


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def summary_row(solver, horizon, trace) -> dict:
    agg = aggregate(trace)
    return {"solver": solver, "N": horizon, "steps": agg["steps"],
            "converged": agg["converged"], **{k: agg[k] for k in SUMMARY_COLUMNS[4:]}}


def _initial_offsets(settings, cycle_path, seed, jitter):
    """Optional seeded perturbation of the initial gap; ``jitter=0`` disables it."""
    if jitter <= 0:
        return None, None
    cycle = _load_cycle(cycle_path, settings.params)
    v0, d0 = initial_state(cycle, settings.params)
    rng = np.random.default_rng(seed)
    return v0, d0 + float(rng.uniform(0.0, jitter))


# -- subcommands ------------------------------------------------------------

def cmd_bench(args) -> int:
    settings = load_settings(args.config)
    out = _out_dir(args.out)
    overrides = {"bipm": {**settings.bipm, **parse_assignments(args.bipm_set)},
                 "al": {**settings.al, **parse_assignments(args.al_set)}}
    for s in SOLVERS:
        make_solver_config(s, overrides[s])
    v0, d0 = _initial_offsets(settings, args.cycle, args.seed, args.init_jitter)
    jobs = []
    for n in args.horizon:
        for s in _solvers(args.solver):
            prefix = None
            if args.dump_step is not None:
                prefix = str(out / "systems" / f"{s}_N{n}_step{args.dump_step}")
            jobs.append(Job(s, n, settings.params, overrides[s], args.cycle, args.steps,
                            not args.cold, v0, d0, args.dump_step, prefix))
    traces = _run_all(jobs, args.workers)
    rows = []
    for job, trace in zip(jobs, traces):
        trace.write_csv(out / f"trace_{job.solver}_N{job.horizon}.csv")
        rows.append(summary_row(job.solver, job.horizon, trace))
    write_rows(out / "summary.csv", SUMMARY_COLUMNS, rows)
    # timing-free copy: byte-identical across repeated runs with the same inputs
    write_rows(out / "iterations.csv",
               [c for c in SUMMARY_COLUMNS if c not in TIMING_COLUMNS], rows)
    for r in rows:
        print(f"{r['solver']:>4} N={r['N']:<3} iterations avg {r['iters_avg']:.1f} "
              f"max {r['iters_max']} min {r['iters_min']} sd {r['iters_sd']:.1f} | "
              f"ms avg {r['ms_avg']:.1f} | converged {r['converged']}/{r['steps']}")
    if args.strict and any(r["converged"] < r["steps"] for r in rows):
        return 1
    return 0


def sweep_cases(args) -> list[tuple[str, str, dict]]:
    """``(case label, solver, overrides)`` triples in a fixed order."""
    cases = []
    if args.preset:
        if args.preset in ("bipm", "all"):
            cases += [(str(k), "bipm", dict(v)) for k, v in BIPM_CASES.items()]
        if args.preset in ("al", "all"):
            cases += [(str(k), "al", dict(v)) for k, v in AL_CASES.items()]
    grid = parse_grid(args.grid)
    if args.grid is not None and not grid:
        raise UsageError("empty parameter grid")
    if grid:
        if args.solver not in SOLVERS:
            raise UsageError("--grid needs --solver bipm or --solver al")
        for k in grid:
            if k not in SWEEP_KEYS[args.solver]:
                raise UsageError(f"{k!r} is not a sweepable {args.solver} key "
                                 f"(choose from {', '.join(SWEEP_KEYS[args.solver])})")
        keys = list(grid)
        for j, combo in enumerate(itertools.product(*(grid[k] for k in keys)), start=1):
            cases.append((f"g{j}", args.solver, dict(zip(keys, combo))))
    if not cases:
        raise UsageError("sweep needs --preset or a non-empty --grid")
    return cases


def cmd_sweep(args) -> int:
    settings = load_settings(args.config)
    out = _out_dir(args.out)
    cases = sweep_cases(args)
    v0, d0 = _initial_offsets(settings, args.cycle, args.seed, args.init_jitter)
    jobs = []
    for _, solver, ov in cases:
        base = settings.bipm if solver == "bipm" else settings.al
        jobs.append(Job(solver, args.horizon, settings.params, {**base, **ov}, args.cycle,
                        args.steps, True, v0, d0))
    for job in jobs:
        make_solver_config(job.solver, job.overrides)
    traces = _run_all(jobs, args.workers)
    keys = sorted({k for _, _, ov in cases for k in ov})
    columns = ["case", "solver", "N", *keys, "steps", "converged", "iters_avg", "iters_max",
               "iters_sd"]
    rows = []
    for (label, solver, ov), trace in zip(cases, traces):
        agg = aggregate(trace)
        row = {"case": label, "solver": solver, "N": args.horizon,
               **{k: ov.get(k, "") for k in keys}, "steps": agg["steps"],
               "converged": agg["converged"], "iters_avg": agg["iters_avg"],
               "iters_max": agg["iters_max"], "iters_sd": agg["iters_sd"]}
        rows.append(row)
        print(f"case {label:>3} {solver:>4} avg {agg['iters_avg']:.1f} max {agg['iters_max']} "
              f"sd {agg['iters_sd']:.1f} converged {agg['converged']}/{agg['steps']}")
    write_rows(out / "sweep.csv", columns, rows)
    if args.strict and any(r["converged"] < r["steps"] for r in rows):
        return 1
    return 0


PLOT_SERIES = {
    "velocity": ("v", "v_p"),
    "distance": ("d", "d_safe", "d_track"),
    "force": ("F_t", "F_b"),
}


def cmd_plot_data(args) -> int:
    settings = load_settings(args.config)
    p = settings.params
    out = _out_dir(args.out)
    cycle = _load_cycle(args.cycle, p)
    traces = []
    for path in args.traces:
        try:
            traces.append(RunTrace.read_csv(path))
        except OSError as exc:
            raise UsageError(f"cannot read trace {path}: {exc}") from None
        except (ValueError, KeyError) as exc:
            raise UsageError(f"malformed trace {path}: {exc}") from None
    base = traces[0].column("t_s")
    for path, tr in zip(args.traces[1:], traces[1:]):
        t = tr.column("t_s")
        if t.shape != base.shape or not np.allclose(t, base, rtol=0, atol=1e-9):
            raise UsageError(f"trace {path} does not share the time base of {args.traces[0]}")
    # state columns hold the plant state one sample after t_s
    t_next = base + p.Ts
    v_p = np.interp(t_next, cycle.t, cycle.v_p)
    for name, series in PLOT_SERIES.items():
        rows = []
        for tr in traces:
            solver = tr.rows[0].solver if tr.rows else ""
            v, d = tr.column("v"), tr.column("d")
            data = {"v": (t_next, v), "v_p": (t_next, v_p), "d": (t_next, d),
                    "d_safe": (t_next, p.d_min + p.h_safety * v),
                    "d_track": (t_next, p.d_min + p.h_track * v),
                    "F_t": (base, tr.column("F_t")), "F_b": (base, tr.column("F_b"))}
            for s in series:
                t, vals = data[s]
                rows += [{"t_s": float(ti), "solver": solver, "series": s, "value": float(x)}
                         for ti, x in zip(t, vals)]
        write_rows(out / f"{name}.csv", ("t_s", "solver", "series", "value"), rows)
    print(f"wrote {', '.join(n + '.csv' for n in PLOT_SERIES)} to {out}")
    return 0


# -- argument parsing -------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON with MACC parameters (flat) or macc/bipm/al sections")
    p.add_argument("--cycle", help="driving-cycle CSV (t_s,v_p_mps[,v_max_mps]); "
                                   "defaults to the bundled synthetic cycle")
    p.add_argument("--out", default="out", help="output directory (created if missing)")


def _loop_options(p):
    p.add_argument("--steps", type=int, default=600,
                   help="MPC steps to simulate (default 600; 0 runs the whole cycle)")
    p.add_argument("--seed", type=int, default=0, help="seed for --init-jitter")
    p.add_argument("--init-jitter", type=float, default=0.0,
                   help="add a seeded uniform [0, J) m offset to the initial gap")
    p.add_argument("--workers", type=int, default=1, help="parallel closed-loop runs")
    p.add_argument("--strict", action="store_true",
                   help="exit with status 1 when any MPC step fails to converge")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgbipm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="closed-loop benchmark over horizons and solvers")
    _common(b)
    _loop_options(b)
    b.add_argument("--solver", choices=("bipm", "al", "both"), default="both")
    b.add_argument("--horizon", type=int, nargs="+", default=[3, 6, 20])
    b.add_argument("--bipm-set", action="append", metavar="KEY=VALUE",
                   help="override a barrier solver setting (repeatable)")
    b.add_argument("--al-set", action="append", metavar="KEY=VALUE",
                   help="override an augmented Lagrangian setting (repeatable)")
    b.add_argument("--cold", action="store_true", help="disable warm starting")
    b.add_argument("--dump-step", type=int, metavar="K",
                   help="write the first linear system of MPC step K as Matrix Market files")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", help="tuning sweep: one summary row per parameter case")
    _common(s)
    _loop_options(s)
    s.add_argument("--solver", choices=("bipm", "al"), default="bipm",
                   help="solver swept by --grid")
    s.add_argument("--horizon", type=int, default=6)
    s.add_argument("--preset", choices=("bipm", "al", "all"),
                   help="run the preset tuning cases (1-7 barrier, 8-16 augmented Lagrangian)")
    s.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                   help="parameter grid entry (repeatable); the cases are the Cartesian product")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot-data", help="long-format CSV series from trace files")
    _common(pl)
    pl.add_argument("traces", nargs="+", help="trace CSV files written by bench")
    pl.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors and 0 for --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "steps", 1) == 0:
        args.steps = None
    if getattr(args, "steps", None) is not None and args.steps < 0:
        print("error: --steps must be non-negative", file=sys.stderr)
        return 2
    horizons = args.horizon if isinstance(getattr(args, "horizon", None), list) else \
        [getattr(args, "horizon", 1)]
    if any(n < 1 for n in horizons):
        print("error: horizons must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
