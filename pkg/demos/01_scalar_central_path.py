"""Follow the barrier central path on a one-dimensional problem.

We minimise (x - 2)^2 subject to x <= 1, starting from x = 0.  The constraint
is a single inequality factor; each outer loop multiplies kappa by nu and the
inner Newton steps move the iterate towards the bound without ever touching it.
"""

import numpy as np

from fgbipm import BipmConfig, FactorGraph, solve
from fgbipm.graph import AffineMap

graph = FactorGraph()
x = graph.add_variable(1, initial_value=[0.0])
graph.add_cost_factor(AffineMap([np.eye(1)], [-2.0]), 1, [x], tag="pull_to_2")
graph.add_inequality_factor(AffineMap([np.eye(1)], [-1.0]), 1, [x], tag="x_le_1")

report = solve(graph, BipmConfig(nu=8.0, kappa0=0.5, kappa_final=1500.0))

print(f"{'kappa':>7} {'step':>5} {'|dx|_1':>10}")
for rec in report.per_iteration:
    print(f"{rec.kappa:7g} {rec.zeta:5.3g} {rec.dx_norm1:10.3e}")
print(f"\nx = {graph.value(x)[0]:.8f} after {report.total_iterations} Newton steps "
      f"in {report.outer_iterations} barrier stages (converged: {report.converged})")

# Each stage ends near the minimiser of 0.5 (x-2)^2 - ln(1-x)/kappa, which
# solves (2 - x)(1 - x) = 1/kappa.  The loop stops once a step is below eps_x.
for kappa in (4.0, 32.0, 256.0):
    root = 1.5 - np.sqrt(0.25 + 1.0 / kappa)
    print(f"central point for kappa={kappa:5g}: {root:.6f}")
