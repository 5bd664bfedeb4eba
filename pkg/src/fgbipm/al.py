"""Augmented Lagrangian baseline on the same factor graph front end.

Constraint factors contribute ``lam^T r + (rho/2) ||r||^2`` (inequalities
through the usual ``max(0, lam + rho g)`` active set); multiplier nodes are
left out of the linear system and only store the equality estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .bipm import IterationRecord, SolveReport, check_termination, g_violation, h_violation
from .graph import FactorGraph, FactorKind


@dataclass
class AlConfig:
    rho0: float = 0.5
    rho_max: float = 5e5
    rho_nu: float = 20.0
    eps_x: float = 1e-2
    eps_g: float = 1e-2
    eps_h: float = 1e-2
    max_total_iter: int = 300
    max_inner_iter: int = 10
    lambda0: float = 0.0

    def __post_init__(self):
        if not 0 < self.rho0 <= self.rho_max:
            raise ValueError("need 0 < rho0 <= rho_max")
        if self.rho_nu <= 1:
            raise ValueError("rho_nu must exceed 1")
        if min(self.eps_x, self.eps_g, self.eps_h) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_total_iter < 1 or self.max_inner_iter < 1:
            raise ValueError("iteration limits must be positive")


def merit(graph: FactorGraph, state: linalg.AlState, x=None) -> float:
    """Augmented Lagrangian value whose Gauss-Newton model the inner loop solves."""
    x = graph._x if x is None else x
    h = graph.h(x)
    g = graph.g(x)
    rho = state.rho
    shifted = np.maximum(0.0, state.lam_g + rho * g)
    return (0.5 * graph.cost(x) + float(state.lam_h @ h) + 0.5 * rho * float(h @ h)
            + float((shifted @ shifted - state.lam_g @ state.lam_g) / (2.0 * rho)))


def multiplier_update(lam_h, lam_g, h_vals, g_vals, rho):
    """First-order update; returns ``(lam_h', lam_g', rho)`` with ``rho`` unchanged."""
    lam_h = np.asarray(lam_h, dtype=float) + rho * np.asarray(h_vals, dtype=float)
    lam_g = np.maximum(0.0, np.asarray(lam_g, dtype=float) + rho * np.asarray(g_vals, dtype=float))
    return lam_h, lam_g, rho


def penalty_schedule(config: AlConfig, n: int) -> list[float]:
    """The first ``n`` penalty values ``rho0 * rho_nu^k`` capped at ``rho_max``."""
    out, rho = [], config.rho0
    for _ in range(n):
        out.append(rho)
        rho = min(rho * config.rho_nu, config.rho_max)
    return out


def solve_al(graph: FactorGraph, config: AlConfig | None = None) -> SolveReport:
    config = config or AlConfig()
    eq = graph.stacked(FactorKind.EQUALITY)
    ineq = graph.stacked(FactorKind.INEQUALITY)
    state = linalg.AlState(np.full(eq.rows, config.lambda0),
                           np.full(ineq.rows, max(config.lambda0, 0.0)), config.rho0)

    total = outer = 0
    records = []
    converged = False
    dx = np.full(graph.total_dim, np.inf)
    message = ""
    while total < config.max_total_iter:
        outer += 1
        for _ in range(config.max_inner_iter):
            if total >= config.max_total_iter:
                break
            system = linalg.assemble(graph, mode="al", al_state=state)
            try:
                step = linalg.solve(system)
            except linalg.RankDeficiencyError as exc:
                message = f"linear solve failed at rho={state.rho:g}: {exc}"
                return _report(graph, eq, state, total, outer, False, dx, records, message)
            dx = linalg.expand(system, step, graph.total_dim)
            total += 1
            graph.apply_increment(dx, 1.0)
            records.append(IterationRecord(float("nan"), 1.0, float(np.abs(dx).sum()),
                                           g_violation(graph.g()), h_violation(graph.h()),
                                           state.rho))
            if np.abs(dx).sum() < config.eps_x:
                break
        h = graph.h()
        g = graph.g()
        if check_termination(dx, g, h, config.eps_x, config.eps_g, config.eps_h):
            converged = True
            break
        state.lam_h, state.lam_g, _ = multiplier_update(state.lam_h, state.lam_g, h, g, state.rho)
        state.rho = min(state.rho * config.rho_nu, config.rho_max)

    if not converged:
        message = f"iteration budget of {config.max_total_iter} exhausted"
    return _report(graph, eq, state, total, outer, converged, dx, records, message)


def _report(graph, eq, state, total, outer, converged, dx, records, message):
    # multiplier nodes carry the equality estimates so the solution vector is complete;
    # the first-order update at the final iterate is the sharper estimate
    x = graph.x
    if eq.rows:
        x[eq.mult_index] = state.lam_h + state.rho * graph.h()
        graph.set_state(x)
    return SolveReport(
        solution=graph.x,
        total_iterations=total,
        outer_iterations=outer,
        converged=converged,
        final_residuals=(float(np.abs(dx).sum()), g_violation(graph.g()), h_violation(graph.h())),
        per_iteration=records,
        final_kappa=float("nan"),
        message=message,
    )
