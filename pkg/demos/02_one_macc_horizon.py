"""Build one MACC horizon and solve it with both back ends.

The host drives at 12 m/s, 2 m further back than its tracking distance, behind
a leader holding 14 m/s.  The printout shows the planned speeds, gaps and
forces along with the iteration counts of the barrier and augmented Lagrangian
solvers on the identical graph.
"""

import numpy as np

from fgbipm import MaccParams, Preview, build_macc_graph, constraint_counts, solve, solve_al

params = MaccParams()
horizon = 6
v0 = 12.0
preview = Preview(v_p=np.full(horizon + 1, 14.0), v_max=np.full(horizon + 1, 19.4),
                  F_t_prev=params.resist(v0), F_b_prev=0.0, v0=v0,
                  d0=params.d_min + params.h_track * v0 + 2.0)

print("graph size:", constraint_counts(build_macc_graph(params, preview)))

for name, run in (("BIPM", solve), ("AL", solve_al)):
    graph = build_macc_graph(params, preview)
    report = run(graph)
    plan = graph.trajectory()
    print(f"\n{name}: {report.total_iterations} iterations, converged={report.converged}")
    print("  v   [m/s]", np.round(plan["v"], 3))
    print("  d   [m]  ", np.round(plan["d"], 3))
    print("  F_t [N]  ", np.round(plan["F_t"], 1))
    print("  F_b [N]  ", np.round(plan["F_b"], 1) + 0.0)
    worst = graph.g().max()
    print(f"  largest inequality residual {worst:.3e} (negative means satisfied)")
