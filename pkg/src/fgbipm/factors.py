"""Per-factor contributions (H-block, b-block) to the Gauss-Newton system.

Every function returns a :class:`FactorContribution` holding a dense local
block over the global indices the factor touches.  Sign conventions differ by
family: cost and equality factors carry ``b = -J^T Omega e`` while the barrier
factor carries ``b = +J^T Omega e``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import FactorGraph, FactorKind, FactorNode


class InfeasibleError(ValueError):
    """An inequality was evaluated at or outside the boundary ``g >= 0``."""


@dataclass
class FactorContribution:
    index: np.ndarray   # global row/column indices of the local block
    h: np.ndarray       # (k, k) symmetric
    b: np.ndarray       # (k,)
    var_ids: tuple = ()
    var_dims: tuple = ()

    def _ranges(self):
        start = 0
        for vid, dim in zip(self.var_ids, self.var_dims):
            yield vid, slice(start, start + dim)
            start += dim

    @property
    def h_blocks(self) -> list:
        """``(row var id, col var id, block)`` for every connected pair."""
        ranges = list(self._ranges())
        return [(ri, ci, self.h[rs, cs]) for ri, rs in ranges for ci, cs in ranges]

    @property
    def b_blocks(self) -> list:
        return [(vid, self.b[s]) for vid, s in self._ranges()]


def _finite(factor, e, jac):
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(jac))):
        raise ValueError(f"factor {factor.id}: non-finite residual or Jacobian")


def _meta(graph, ids):
    return tuple(ids), tuple(graph.variables[i].dim for i in ids)


def barrier_value(g: float, kappa: float) -> float:
    """Log barrier ``-ln(-g) / kappa``, defined only for ``g < 0``."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if g >= 0:
        raise InfeasibleError(f"barrier undefined for g={g} >= 0")
    return -np.log(-g) / kappa


def cost_contribution(graph: FactorGraph, factor: FactorNode, x=None) -> FactorContribution:
    e, jac = graph.linearize(factor, x)
    _finite(factor, e, jac)
    wj = factor.info @ jac
    h = jac.T @ wj
    b = -(wj.T @ e)
    return FactorContribution(factor.index, 0.5 * (h + h.T), b, *_meta(graph, factor.connected))


def equality_contribution(graph: FactorGraph, factor: FactorNode, x=None) -> FactorContribution:
    """KKT blocks of ``h(x) = 0`` with its multiplier node.

    With the stacked error ``[h; gamma]`` and swap information ``[[0, I], [I, 0]]``
    the Gauss-Newton blocks collapse to ``H = [[0, J^T], [J, 0]]`` and
    ``b = [-J^T gamma; -h]``.
    """
    if factor.kind is not FactorKind.EQUALITY or factor.mult_index is None:
        raise ValueError(f"factor {factor.id} has no multiplier node attached")
    x = graph._x if x is None else x
    hval, jac = graph.linearize(factor, x)
    _finite(factor, hval, jac)
    gamma = x[factor.mult_index]
    n, m = jac.shape[1], jac.shape[0]
    h = np.zeros((n + m, n + m))
    h[:n, n:] = jac.T
    h[n:, :n] = jac
    b = np.concatenate([-(jac.T @ gamma), -hval])
    index = np.concatenate([factor.index, factor.mult_index])
    return FactorContribution(index, h, b, *_meta(graph, factor.connected))


def barrier_terms(g, jac, kappa):
    """``(H, b)`` of the log barrier for constraint values ``g`` with Jacobian ``jac``.

    Uses error ``g`` and the state-dependent information ``diag(1 / (kappa g^2))``;
    ``b`` keeps the positive sign, i.e. ``b = sum_k J_k^T / (kappa g_k)``.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if np.any(g >= 0):
        bad = np.flatnonzero(g >= 0)
        raise InfeasibleError(f"inequality components {bad.tolist()} not strictly interior "
                              f"(g={g[bad].tolist()})")
    w = 1.0 / (kappa * g * g)
    h = jac.T @ (w[:, None] * jac)
    b = jac.T @ (w * g)
    return h, b


def inequality_barrier_contribution(graph: FactorGraph, factor: FactorNode, kappa: float,
                                    x=None) -> FactorContribution:
    g, jac = graph.linearize(factor, x)
    _finite(factor, g, jac)
    try:
        h, b = barrier_terms(g, jac, kappa)
    except InfeasibleError as exc:
        raise InfeasibleError(f"factor {factor.id} ({factor.tag or 'inequality'}): {exc}") from None
    return FactorContribution(factor.index, h, b, *_meta(graph, factor.connected))


def al_terms(r, jac, lam, rho, inequality):
    """Augmented-Lagrangian Gauss-Newton blocks for residual ``r``.

    Equality: ``H = rho J^T J``, ``b = -J^T (lam + rho r)``.  Inequality rows
    only count while ``lam + rho r > 0``.
    """
    if rho <= 0:
        raise ValueError("penalty rho must be positive")
    shifted = lam + rho * r
    if inequality:
        active = shifted > 0
        jac = jac[active]
        shifted = shifted[active]
    h = rho * (jac.T @ jac)
    b = -(jac.T @ shifted)
    return h, b


def al_contribution(graph: FactorGraph, factor: FactorNode, lam, rho: float,
                    x=None) -> FactorContribution:
    if factor.kind is FactorKind.COST:
        raise ValueError("augmented Lagrangian terms apply to constraint factors only")
    r, jac = graph.linearize(factor, x)
    _finite(factor, r, jac)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), r.shape)
    inequality = factor.kind is FactorKind.INEQUALITY
    if inequality and np.any(lam < 0):
        raise ValueError("inequality multipliers must be non-negative")
    h, b = al_terms(r, jac, lam, rho, inequality)
    return FactorContribution(factor.index, h, b, *_meta(graph, factor.decision_ids))
