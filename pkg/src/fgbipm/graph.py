"""Factor-graph data model: variable nodes, factor nodes and the global state layout."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class VariableKind(enum.Enum):
    DECISION = "decision"
    MULTIPLIER = "multiplier"


class FactorKind(enum.Enum):
    COST = "cost"
    EQUALITY = "equality"
    INEQUALITY = "inequality"


class GraphError(ValueError):
    pass


# evaluator(*values) -> (residual, [jacobian block per connected decision variable])
Evaluator = Callable[..., tuple]


class AffineMap:
    """Affine residual ``e = sum_k A_k x_k + c`` with constant Jacobian blocks.

    Evaluating through :meth:`linearize_local` skips per-variable splitting,
    which is what the assembly loop uses.
    """

    def __init__(self, blocks: Sequence, const):
        self.blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
        self.const = np.atleast_1d(np.asarray(const, dtype=float))
        self.jac = np.hstack(self.blocks) if self.blocks else np.zeros((self.const.size, 0))

    def __call__(self, *values):
        e = self.const.copy()
        for a, v in zip(self.blocks, values):
            e += a @ v
        return e, self.blocks

    def linearize_local(self, x_local):
        return self.jac @ x_local + self.const, self.jac


@dataclass
class VariableNode:
    id: int
    dim: int
    kind: VariableKind
    offset: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.dim)


@dataclass
class FactorNode:
    id: int
    kind: FactorKind
    connected: list[int]
    residual_dim: int
    evaluator: Evaluator
    info: np.ndarray | None = None
    # free-form label, e.g. the constraint family a MACC factor belongs to
    tag: str = ""
    step: int | None = None
    # global indices of the decision variables the evaluator sees
    index: np.ndarray = field(default=None, repr=False)
    # global indices of the attached multiplier (equality factors only)
    mult_index: np.ndarray = field(default=None, repr=False)

    @property
    def decision_ids(self) -> list[int]:
        if self.kind is FactorKind.EQUALITY:
            return self.connected[:-1]
        return self.connected

    @property
    def multiplier_id(self) -> int | None:
        if self.kind is FactorKind.EQUALITY:
            return self.connected[-1]
        return None


class FactorGraph:
    """Bipartite graph of variable and factor nodes over one dense state vector.

    Variables are laid out in insertion order; ``offsets[vid]`` is the start of
    the variable's slice in the global vector.
    """

    def __init__(self):
        self.variables: dict[int, VariableNode] = {}
        self.factors: dict[int, FactorNode] = {}
        self.total_dim = 0
        self._x = np.zeros(0)
        self._next_var = 0
        self._next_factor = 0
        self._stacked = {}

    # -- layout ---------------------------------------------------------
    @property
    def offsets(self) -> dict[int, int]:
        return {vid: v.offset for vid, v in self.variables.items()}

    @property
    def x(self) -> np.ndarray:
        """Copy of the stacked global state."""
        return self._x.copy()

    def set_state(self, x) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.total_dim,):
            raise GraphError(f"state has shape {x.shape}, expected ({self.total_dim},)")
        if not np.all(np.isfinite(x)):
            raise GraphError("state must be finite")
        self._x = x.copy()

    def value(self, vid: int) -> np.ndarray:
        return self._x[self.variables[vid].slice].copy()

    def set_value(self, vid: int, value) -> None:
        var = self.variables[vid]
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if value.shape != (var.dim,) or not np.all(np.isfinite(value)):
            raise GraphError(f"variable {vid} needs {var.dim} finite entries")
        self._x[var.slice] = value

    def split(self, x) -> dict[int, np.ndarray]:
        """Slice a global vector into per-variable pieces."""
        return {vid: np.asarray(x)[v.slice] for vid, v in self.variables.items()}

    def indices(self, ids: Sequence[int]) -> np.ndarray:
        if not ids:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.arange(self.variables[i].offset,
                                         self.variables[i].offset + self.variables[i].dim)
                               for i in ids])

    def decision_indices(self) -> np.ndarray:
        return self.indices([vid for vid, v in self.variables.items()
                             if v.kind is VariableKind.DECISION])

    def multiplier_indices(self) -> np.ndarray:
        return self.indices([vid for vid, v in self.variables.items()
                             if v.kind is VariableKind.MULTIPLIER])

    # -- construction ---------------------------------------------------
    def add_variable(self, dim: int, kind: VariableKind = VariableKind.DECISION,
                     initial_value=None) -> int:
        dim = int(dim)
        if dim < 1:
            raise GraphError(f"variable dimension must be >= 1, got {dim}")
        if initial_value is None:
            initial_value = np.zeros(dim)
        value = np.atleast_1d(np.asarray(initial_value, dtype=float))
        if value.shape != (dim,):
            raise GraphError(f"initial value has shape {value.shape}, expected ({dim},)")
        if not np.all(np.isfinite(value)):
            raise GraphError("initial value must be finite")
        vid = self._next_var
        self._next_var += 1
        self.variables[vid] = VariableNode(vid, dim, VariableKind(kind), self.total_dim)
        self.total_dim += dim
        self._x = np.concatenate([self._x, value])
        return vid

    def _check_ids(self, ids):
        if len(set(ids)) != len(ids):
            raise GraphError(f"duplicate variable ids in {list(ids)}")
        for vid in ids:
            if vid not in self.variables:
                raise GraphError(f"unknown variable id {vid}")
            if self.variables[vid].kind is not VariableKind.DECISION:
                raise GraphError(f"variable {vid} is a multiplier node")

    def _register(self, factor: FactorNode) -> int:
        factor.index = self.indices(factor.decision_ids)
        if factor.kind is FactorKind.EQUALITY:
            factor.mult_index = self.indices([factor.multiplier_id])
        self.factors[factor.id] = factor
        return factor.id

    def _new_factor_id(self) -> int:
        fid = self._next_factor
        self._next_factor += 1
        return fid

    def add_cost_factor(self, evaluator: Evaluator, residual_dim: int,
                        connected: Sequence[int], info=None, tag: str = "",
                        step: int | None = None) -> int:
        self._check_ids(connected)
        residual_dim = int(residual_dim)
        info = np.eye(residual_dim) if info is None else np.atleast_2d(np.asarray(info, dtype=float))
        if info.shape != (residual_dim, residual_dim):
            raise GraphError(f"information matrix must be {residual_dim}x{residual_dim}")
        if not np.allclose(info, info.T):
            raise GraphError("information matrix must be symmetric")
        if np.linalg.eigvalsh(info).min() < -1e-12 * max(1.0, np.abs(info).max()):
            raise GraphError("information matrix must be positive semidefinite")
        f = FactorNode(self._new_factor_id(), FactorKind.COST, list(connected),
                       residual_dim, evaluator, info, tag, step)
        return self._register(f)

    def add_equality_factor(self, evaluator: Evaluator, d_h: int,
                            connected: Sequence[int], gamma0: float = 0.0,
                            tag: str = "", step: int | None = None) -> tuple[int, int]:
        """Add ``h(x) = 0``; returns ``(factor id, multiplier id)``.

        A multiplier node of dimension ``d_h`` is created and attached as the
        last connected variable.
        """
        d_h = int(d_h)
        if d_h < 1:
            raise GraphError("equality constraint dimension must be >= 1")
        self._check_ids(connected)
        mid = self.add_variable(d_h, VariableKind.MULTIPLIER, np.full(d_h, float(gamma0)))
        f = FactorNode(self._new_factor_id(), FactorKind.EQUALITY, list(connected) + [mid],
                       d_h, evaluator, None, tag, step)
        return self._register(f), mid

    def add_inequality_factor(self, evaluator: Evaluator, d_g: int,
                              connected: Sequence[int], tag: str = "",
                              step: int | None = None) -> int:
        """Add ``g(x) <= 0`` (componentwise)."""
        d_g = int(d_g)
        if d_g < 1:
            raise GraphError("inequality constraint dimension must be >= 1")
        self._check_ids(connected)
        f = FactorNode(self._new_factor_id(), FactorKind.INEQUALITY, list(connected),
                       d_g, evaluator, None, tag, step)
        return self._register(f)

    def factors_of(self, kind: FactorKind) -> list[FactorNode]:
        return [f for f in self.factors.values() if f.kind is kind]

    # -- evaluation -----------------------------------------------------
    def linearize(self, factor: FactorNode, x=None) -> tuple[np.ndarray, np.ndarray]:
        """Residual and local Jacobian (columns ordered as ``factor.index``)."""
        x = self._x if x is None else x
        xl = x[factor.index]
        fast = getattr(factor.evaluator, "linearize_local", None)
        if fast is not None:
            e, jac = fast(xl)
        else:
            values, start = [], 0
            for vid in factor.decision_ids:
                dim = self.variables[vid].dim
                values.append(xl[start:start + dim])
                start += dim
            e, blocks = factor.evaluator(*values)
            e = np.atleast_1d(np.asarray(e, dtype=float))
            blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
            if len(blocks) != len(values):
                raise GraphError(f"factor {factor.id}: expected {len(values)} Jacobian blocks")
            for b, v in zip(blocks, values):
                if b.shape != (factor.residual_dim, v.size):
                    raise GraphError(f"factor {factor.id}: Jacobian block shape {b.shape} "
                                     f"does not match ({factor.residual_dim}, {v.size})")
            jac = np.hstack(blocks) if blocks else np.zeros((e.size, 0))
        if e.shape != (factor.residual_dim,):
            raise GraphError(f"factor {factor.id}: residual has shape {e.shape}")
        return e, jac

    def residual(self, factor: FactorNode, x=None) -> np.ndarray:
        return self.linearize(factor, x)[0]

    def stacked(self, kind: FactorKind) -> "StackedFamily":
        """Row-stacked view of every factor of ``kind`` (cached until the graph changes)."""
        key = (kind, len(self.factors), self.total_dim)
        fam = self._stacked.get(kind)
        if fam is None or fam.key != key:
            fam = StackedFamily(self, kind, key)
            self._stacked[kind] = fam
        return fam

    def constraint_values(self, kind: FactorKind, x=None) -> np.ndarray:
        """Stacked residuals of all equality (h) or inequality (g) factors, in insertion order."""
        return self.stacked(kind).residual(self._x if x is None else x)

    def g(self, x=None) -> np.ndarray:
        return self.constraint_values(FactorKind.INEQUALITY, x)

    def h(self, x=None) -> np.ndarray:
        return self.constraint_values(FactorKind.EQUALITY, x)

    def cost(self, x=None) -> float:
        """Sum of ``e^T Omega e`` over cost factors (the solvers minimize half of it)."""
        fam = self.stacked(FactorKind.COST)
        if not fam.rows:
            return 0.0
        e = fam.residual(self._x if x is None else np.asarray(x, dtype=float))
        return float(e @ fam.info @ e)

    def reset_multipliers(self, gamma0: float = 0.0) -> None:
        idx = self.multiplier_indices()
        self._x[idx] = gamma0

    # -- update ---------------------------------------------------------
    def apply_increment(self, dx, zeta: float = 1.0) -> None:
        """``x <- x + zeta * dx`` for every variable at once."""
        dx = np.asarray(dx, dtype=float)
        if dx.shape != (self.total_dim,):
            raise GraphError(f"increment has shape {dx.shape}, expected ({self.total_dim},)")
        if not 0.0 < zeta <= 1.0:
            raise GraphError(f"step size must lie in (0, 1], got {zeta}")
        self._x = self._x + zeta * dx


class StackedFamily:
    """All factors of one kind stacked row-wise over the global state.

    Affine factors are evaluated with one matrix product; any other factor is
    linearized individually and written into its rows.
    """

    def __init__(self, graph: FactorGraph, kind: FactorKind, key):
        self.graph = graph
        self.key = key
        self.factors = graph.factors_of(kind)
        dims = [f.residual_dim for f in self.factors]
        self.starts = np.concatenate([[0], np.cumsum(dims)]).astype(int)
        rows = int(self.starts[-1])
        self.rows = rows
        self.jac = np.zeros((rows, graph.total_dim))
        self.const = np.zeros(rows)
        self.owner = np.repeat(np.arange(len(self.factors)), dims).astype(int)
        self.general = []
        for k, f in enumerate(self.factors):
            sl = slice(self.starts[k], self.starts[k + 1])
            if isinstance(f.evaluator, AffineMap):
                self.jac[sl, f.index] = f.evaluator.jac
                self.const[sl] = f.evaluator.const
            else:
                self.general.append((k, sl))
        self.affine = not self.general
        if kind is FactorKind.EQUALITY:
            self.mult_index = (np.concatenate([f.mult_index for f in self.factors])
                               if self.factors else np.zeros(0, dtype=int))
        if kind is FactorKind.COST:
            self.info = np.zeros((rows, rows))
            for k, f in enumerate(self.factors):
                sl = slice(self.starts[k], self.starts[k + 1])
                self.info[sl, sl] = f.info

    def linearize(self, x) -> tuple[np.ndarray, np.ndarray]:
        e = self.jac @ x + self.const
        if self.affine:
            return e, self.jac
        jac = self.jac.copy()
        for k, sl in self.general:
            f = self.factors[k]
            fe, fj = self.graph.linearize(f, x)
            e[sl] = fe
            jac[sl] = 0.0
            jac[sl, f.index] = fj
        return e, jac

    def residual(self, x) -> np.ndarray:
        e = self.jac @ x + self.const
        for k, sl in self.general:
            e[sl] = self.graph.linearize(self.factors[k], x)[0]
        return e

    def factor_of_row(self, row: int) -> FactorNode:
        return self.factors[self.owner[row]]
