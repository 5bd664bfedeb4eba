"""Global system assembly and the symmetric-indefinite direct solve."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .factors import (InfeasibleError, al_contribution, al_terms, barrier_terms,
                      cost_contribution, equality_contribution, inequality_barrier_contribution)
from .graph import FactorGraph, FactorKind

PIVOT_RTOL = 1e-12


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


@dataclass
class SymBlockSystem:
    h: np.ndarray
    b: np.ndarray
    # global state index of each row; decision-only for augmented Lagrangian systems
    index: np.ndarray

    @property
    def dim(self) -> int:
        return self.b.size

    def sparse(self) -> sp.coo_matrix:
        return sp.coo_matrix(self.h)


@dataclass
class AlState:
    """Stacked multiplier estimates (rows in factor insertion order) and the shared penalty."""
    lam_h: np.ndarray
    lam_g: np.ndarray
    rho: float


def _system_index(graph, mode, al_state):
    if mode == "bipm":
        return np.arange(graph.total_dim)
    if mode == "al":
        if al_state is None:
            raise ValueError("augmented Lagrangian assembly needs an AlState")
        return graph.decision_indices()
    raise ValueError(f"unknown assembly mode {mode!r}")


def _check_finite(e, jac, fam):
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(jac))):
        bad = np.flatnonzero(~np.isfinite(e) | ~np.all(np.isfinite(jac), axis=1))
        raise ValueError(f"factor {fam.factor_of_row(int(bad[0])).id}: "
                         "non-finite residual or Jacobian")


def assemble(graph: FactorGraph, kappa: float | None = None, mode: str = "bipm",
             al_state: AlState | None = None, x=None) -> SymBlockSystem:
    """Sum every factor's contribution into the global ``(H, b)``.

    ``mode="bipm"`` uses the KKT equality blocks and the log-barrier factor
    (``kappa`` required when inequalities exist).  ``mode="al"`` drops the
    multiplier nodes and adds augmented-Lagrangian terms from ``al_state``.
    Factor families are processed as stacked row blocks; the result equals
    :func:`assemble_by_factor` up to floating-point summation order.
    """
    index = _system_index(graph, mode, al_state)
    x = graph._x if x is None else np.asarray(x, dtype=float)
    n = graph.total_dim
    h = np.zeros((n, n))
    b = np.zeros(n)

    cost = graph.stacked(FactorKind.COST)
    if cost.rows:
        e, jac = cost.linearize(x)
        _check_finite(e, jac, cost)
        wj = cost.info @ jac
        h += jac.T @ wj
        b -= wj.T @ e

    eq = graph.stacked(FactorKind.EQUALITY)
    if eq.rows:
        r, jac = eq.linearize(x)
        _check_finite(r, jac, eq)
        if mode == "bipm":
            m = eq.mult_index
            h[:, m] += jac.T
            h[m, :] += jac
            b -= jac.T @ x[m]
            b[m] -= r
        else:
            eh, eb = al_terms(r, jac, al_state.lam_h, al_state.rho, inequality=False)
            h += eh
            b += eb

    ineq = graph.stacked(FactorKind.INEQUALITY)
    if ineq.rows:
        g, jac = ineq.linearize(x)
        _check_finite(g, jac, ineq)
        if mode == "bipm":
            if kappa is None:
                raise ValueError("barrier assembly needs kappa")
            try:
                gh, gb = barrier_terms(g, jac, kappa)
            except InfeasibleError:
                row = int(np.flatnonzero(g >= 0)[0])
                f = ineq.factor_of_row(row)
                raise InfeasibleError(f"factor {f.id} ({f.tag or 'inequality'}) is not strictly "
                                      f"interior: g={g[row]:.6g}") from None
        else:
            gh, gb = al_terms(g, jac, al_state.lam_g, al_state.rho, inequality=True)
        h += gh
        b += gb

    h = 0.5 * (h + h.T)
    if mode == "al":
        h = h[np.ix_(index, index)]
        b = b[index]
    return SymBlockSystem(h, b, index)


def _scatter(h, b, pos, contrib):
    loc = pos[contrib.index]
    h[np.ix_(loc, loc)] += contrib.h
    b[loc] += contrib.b


def assemble_by_factor(graph: FactorGraph, kappa: float | None = None, mode: str = "bipm",
                       al_state: AlState | None = None, x=None) -> SymBlockSystem:
    """Reference assembly: one local contribution per factor, scattered by index."""
    index = _system_index(graph, mode, al_state)
    n = index.size
    pos = np.full(graph.total_dim, -1, dtype=int)
    pos[index] = np.arange(n)
    h = np.zeros((n, n))
    b = np.zeros(n)
    lam = {}
    if mode == "al":
        for kind, vec in ((FactorKind.EQUALITY, al_state.lam_h),
                          (FactorKind.INEQUALITY, al_state.lam_g)):
            fam = graph.stacked(kind)
            for k, f in enumerate(fam.factors):
                lam[f.id] = vec[fam.starts[k]:fam.starts[k + 1]]
    for f in graph.factors.values():
        if f.kind is FactorKind.COST:
            c = cost_contribution(graph, f, x)
        elif mode == "al":
            c = al_contribution(graph, f, lam[f.id], al_state.rho, x)
        elif f.kind is FactorKind.EQUALITY:
            c = equality_contribution(graph, f, x)
        else:
            if kappa is None:
                raise ValueError("barrier assembly needs kappa")
            c = inequality_barrier_contribution(graph, f, kappa, x)
        _scatter(h, b, pos, c)
    return SymBlockSystem(h, b, index)


def solve(system: SymBlockSystem) -> np.ndarray:
    """Solve ``H dx = b`` by pivoted LU; ``H`` may be indefinite.

    ``H`` is first equilibrated symmetrically (``S H S`` with
    ``S_ii = max_j |H_ij|^(-1/2)``) so barrier rows near an active constraint do
    not swamp the rest.  Raises :class:`RankDeficiencyError` when a pivot of
    the scaled matrix falls below ``1e-12 * ||S H S||_inf``.
    """
    h, b = system.h, system.b
    if b.size == 0:
        return np.zeros(0)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(b))):
        raise ValueError("system contains non-finite entries")
    rowmax = np.abs(h).max(axis=1)
    zero = np.flatnonzero(rowmax == 0.0)
    if zero.size:
        k = int(zero[0])
        raise RankDeficiencyError(f"H is rank deficient: row {k} is identically zero", k)
    s = 1.0 / np.sqrt(rowmax)
    hs = h * s[:, None] * s[None, :]
    scale = np.abs(hs).sum(axis=1).max()
    with warnings.catch_warnings():
        # exact singularity is reported below through the pivot test
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(hs, check_finite=False)
    pivots = np.abs(np.diag(lu))
    small = np.flatnonzero(pivots < PIVOT_RTOL * scale)
    if small.size:
        k = int(small[0])
        raise RankDeficiencyError(f"H is rank deficient: pivot {pivots[k]:.3e} at index {k} "
                                  f"(scaled ||H||_inf = {scale:.3e})", k)
    bs = b * s
    y = scipy.linalg.lu_solve((lu, piv), bs, check_finite=False)
    r = bs - hs @ y
    if np.abs(r).max() > 1e-10 * (1.0 + np.abs(bs).max()):
        y += scipy.linalg.lu_solve((lu, piv), r, check_finite=False)
    return y * s


def expand(system: SymBlockSystem, dx, total_dim: int) -> np.ndarray:
    """Scatter a solution over ``system.index`` into a full-length increment."""
    full = np.zeros(total_dim)
    full[system.index] = dx
    return full


def dump_matrix_market(system: SymBlockSystem, prefix) -> tuple[Path, Path]:
    """Write ``<prefix>_H.mtx`` (coordinate, symmetric) and ``<prefix>_b.mtx``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    h_path = prefix.with_name(prefix.name + "_H.mtx")
    b_path = prefix.with_name(prefix.name + "_b.mtx")
    scipy.io.mmwrite(str(h_path), system.sparse(), symmetry="symmetric")
    scipy.io.mmwrite(str(b_path), sp.coo_matrix(system.b.reshape(-1, 1)))
    return h_path, b_path
