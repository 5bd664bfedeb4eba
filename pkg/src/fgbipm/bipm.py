"""Barrier interior-point solver over a factor graph.

Outer loop: barrier continuation ``kappa <- nu * kappa`` until ``kappa >= kappa_final``
and the most recent inner loop has met the termination test.
Inner loop: Gauss-Newton on the barrier-augmented KKT system with a
backtracking line search that only enforces strict feasibility.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .graph import FactorGraph, FactorKind

log = logging.getLogger(__name__)


class InfeasibleStartError(ValueError):
    pass


class LineSearchError(RuntimeError):
    pass


@dataclass
class BipmConfig:
    kappa0: float = 0.5
    kappa_final: float = 1500.0
    nu: float = 8.0
    alpha: float = 0.5
    eps_x: float = 1e-2
    eps_g: float = 1e-2
    eps_h: float = 1e-2
    max_total_iter: int = 300
    max_inner_iter: int = 10
    zeta_min: float = 1e-12
    gamma0: float = 0.0

    def __post_init__(self):
        if not 0 < self.kappa0 <= self.kappa_final:
            raise ValueError("need 0 < kappa0 <= kappa_final")
        if self.nu <= 1:
            raise ValueError("nu must exceed 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if min(self.eps_x, self.eps_g, self.eps_h, self.zeta_min) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_total_iter < 1 or self.max_inner_iter < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class IterationRecord:
    kappa: float          # barrier parameter (nan for the augmented Lagrangian)
    zeta: float           # accepted step size
    dx_norm1: float
    g_viol: float         # ||max(g, 0)||_inf
    h_viol: float         # ||h||_inf
    rho: float = float("nan")


@dataclass
class SolveReport:
    solution: np.ndarray
    total_iterations: int
    outer_iterations: int
    converged: bool
    final_residuals: tuple
    per_iteration: list = field(default_factory=list)
    final_kappa: float = float("nan")
    message: str = ""


def g_violation(g) -> float:
    return float(np.max(g, initial=0.0)) if np.size(g) else 0.0


def h_violation(h) -> float:
    return float(np.max(np.abs(h), initial=0.0)) if np.size(h) else 0.0


def check_termination(dx, g_all, h_all, eps_x, eps_g, eps_h) -> bool:
    """All three strict tests: ``||dx||_1 < eps_x``, ``||max(g,0)||_inf < eps_g``, ``||h||_inf < eps_h``."""
    return (float(np.abs(dx).sum()) < eps_x
            and g_violation(g_all) < eps_g
            and h_violation(h_all) < eps_h)


def backtrack(graph: FactorGraph, dx, alpha: float = 0.5, zeta_min: float = 1e-12) -> float:
    """Largest ``zeta`` in ``1, alpha, alpha^2, ...`` keeping every ``g(x + zeta dx) < 0``.

    The graph state is left untouched.
    """
    x = graph.x
    zeta = 1.0
    while True:
        if np.all(graph.g(x + zeta * dx) < 0):
            return zeta
        zeta *= alpha
        if zeta < zeta_min:
            raise LineSearchError(f"step size fell below {zeta_min:g} without regaining "
                                  "strict feasibility")


def _check_interior(graph):
    fam = graph.stacked(FactorKind.INEQUALITY)
    g = fam.residual(graph.x)
    bad = []
    for row in np.flatnonzero(g >= 0):
        f = fam.factor_of_row(int(row))
        bad.append((f.id, f.tag, float(g[row])))
    if bad:
        raise InfeasibleStartError(f"initial point violates strict feasibility at factors {bad}")


def solve(graph: FactorGraph, config: BipmConfig | None = None) -> SolveReport:
    config = config or BipmConfig()
    _check_interior(graph)
    graph.reset_multipliers(config.gamma0)

    kappa = config.kappa0
    total = outer = 0
    records = []
    done = False
    message = ""
    g = graph.g()
    h = graph.h()
    dx = np.full(graph.total_dim, np.inf)

    while True:
        outer += 1
        done = False
        for _ in range(config.max_inner_iter):
            if total >= config.max_total_iter:
                break
            system = linalg.assemble(graph, kappa)
            try:
                dx = linalg.solve(system)
            except linalg.RankDeficiencyError as exc:
                message = f"linear solve failed at kappa={kappa:g}: {exc}"
                return _report(graph, total, outer, False, dx, records, kappa, message)
            total += 1
            try:
                zeta = backtrack(graph, dx, config.alpha, config.zeta_min)
            except LineSearchError as exc:
                message = f"line search failed at kappa={kappa:g}: {exc}"
                log.debug(message)
                return _report(graph, total, outer, False, dx, records, kappa, message)
            graph.apply_increment(dx, zeta)
            g = graph.g()
            h = graph.h()
            assert g_violation(g) == 0.0 and np.all(g < 0)
            records.append(IterationRecord(kappa, zeta, float(np.abs(dx).sum()),
                                           g_violation(g), h_violation(h)))
            done = check_termination(dx, g, h, config.eps_x, config.eps_g, config.eps_h)
            if done:
                break
        if total >= config.max_total_iter and not done:
            message = f"iteration budget of {config.max_total_iter} exhausted"
            return _report(graph, total, outer, False, dx, records, kappa, message)
        kappa *= config.nu
        # an inner loop that ran out of steps does not end the solve: continuation
        # carries on past kappa_final until one inner loop meets all three tests
        if kappa >= config.kappa_final and done:
            break

    return _report(graph, total, outer, True, dx, records, kappa, message)


def _report(graph, total, outer, converged, dx, records, kappa, message):
    return SolveReport(
        solution=graph.x,
        total_iterations=total,
        outer_iterations=outer,
        converged=converged,
        final_residuals=(float(np.abs(dx).sum()), g_violation(graph.g()), h_violation(graph.h())),
        per_iteration=records,
        final_kappa=kappa,
        message=message,
    )
