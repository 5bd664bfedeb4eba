"""Receding-horizon run on the first minute of the synthetic drive cycle.

Every 0.1 s the controller re-plans over N steps from a warm start, applies
the first force pair to the plant and records the solver effort.  Pass an
output directory as the first argument to keep the trace CSVs.
"""

import sys
from pathlib import Path

from fgbipm import AlConfig, BipmConfig, MaccParams, aggregate, run_closed_loop, synthetic_cycle

steps = 600
horizon = 6
cycle = synthetic_cycle()
params = MaccParams()
out = Path(sys.argv[1]) if len(sys.argv) > 1 else None

for solver, config in (("bipm", BipmConfig()), ("al", AlConfig())):
    trace = run_closed_loop(cycle, params, solver, config, horizon, steps=steps)
    stats = aggregate(trace)
    print(f"{solver:>4}: iterations avg {stats['iters_avg']:.1f}  max {stats['iters_max']}  "
          f"min {stats['iters_min']}  sd {stats['iters_sd']:.1f}  "
          f"converged {stats['converged']}/{stats['steps']}  ms/step {stats['ms_avg']:.1f}")
    gap = trace.column("d") - (params.d_min + params.h_safety * trace.column("v"))
    print(f"      smallest margin to the safe gap {gap.min():.3f} m")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        trace.write_csv(out / f"trace_{solver}_N{horizon}.csv")
