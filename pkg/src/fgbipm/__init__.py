"""Constrained factor-graph optimization with a barrier interior-point solver.

Submodules:

- :mod:`fgbipm.graph`    variable/factor containers and the global state vector
- :mod:`fgbipm.factors`  per-factor linear-system contributions
- :mod:`fgbipm.linalg`   global assembly and the indefinite direct solve
- :mod:`fgbipm.bipm`     barrier interior-point solver
- :mod:`fgbipm.al`       augmented Lagrangian baseline
- :mod:`fgbipm.macc`     adaptive cruise control problem builder
- :mod:`fgbipm.sim`      closed-loop receding-horizon harness
- :mod:`fgbipm.cli`      command-line benchmark driver
"""

from .al import AlConfig, solve_al
from .bipm import BipmConfig, SolveReport, solve
from .graph import AffineMap, FactorGraph, FactorKind, GraphError, VariableKind
from .macc import MaccParams, Preview, build_macc_graph, constraint_counts
from .sim import DrivingCycle, RunTrace, aggregate, load_cycle, run_closed_loop, synthetic_cycle

__all__ = [
    "AffineMap", "AlConfig", "BipmConfig", "DrivingCycle", "FactorGraph", "FactorKind",
    "GraphError", "MaccParams", "Preview", "RunTrace", "SolveReport", "VariableKind",
    "aggregate", "build_macc_graph", "constraint_counts", "load_cycle", "run_closed_loop",
    "solve", "solve_al", "synthetic_cycle",
]
__version__ = "0.1.0"
