"""Multi-objective adaptive cruise control (MACC) as a constrained factor graph.

Per prediction step ``i = 0..N-1`` the decision variables are the scalar nodes
``v[i+1], d[i+1], F_t[i], F_b[i], delta_far[i], delta_Ft[i], delta_Fb[i]``
(``v[0] = v0`` and ``d[0] = d0`` are measured data).  Units are SI: m, s, m/s, N.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import AffineMap, FactorGraph, FactorKind

QUANTITIES = ("v", "d", "F_t", "F_b", "delta_far", "delta_Ft", "delta_Fb")

# inequality families, one scalar each except the two split rate constraints
FAMILIES = ("safety_gap", "tracking_gap", "traction_min", "traction_max", "driveline",
            "brake_min", "brake_max", "speed_limit", "speed_min", "traction_rate", "brake_rate")
EQUALITIES = ("speed_dynamics", "gap_dynamics")

REPAIR_MARGIN = 1e-2


@dataclass
class MaccParams:
    """Vehicle, constraint and cost parameters.

    The defaults are self-consistent placeholders for a mid-size electric car,
    not identified values.  ``omega_p`` scales the power cost (1.0 makes it the
    energy drawn per step in joules); ``w1..w4`` weigh braking force, tracking
    slack, traction-rate slack and brake-rate slack in the same units.
    """
    Ts: float = 0.1
    m_eq: float = 1600.0
    F_t_max: float = 4000.0
    F_b_max: float = 6000.0
    a20: float = 6000.0
    a21: float = -90.0
    d_min: float = 5.0
    h_safety: float = 1.2
    h_track: float = 1.8
    # electric power map P(v, F_t) in W
    p00: float = 0.0
    p10: float = 50.0
    p01: float = 0.5
    p20: float = 40.0
    p11: float = 0.4
    p02: float = 2e-3
    # resistive force c0 + c1 * v in N
    c0: float = 120.0
    c1: float = 5.0
    w1: float = 0.1
    w2: float = 1000.0
    w3: float = 0.1
    w4: float = 0.1
    omega_p: float = 1.0

    def __post_init__(self):
        for name in ("Ts", "m_eq", "F_t_max", "F_b_max", "d_min", "h_safety", "h_track"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for f in dataclasses.fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")

    @property
    def q_c(self) -> np.ndarray:
        return np.array([[2 * self.p20, self.p11], [self.p11, 2 * self.p02]])

    @property
    def b_c(self) -> np.ndarray:
        return np.array([self.p10, self.p01])

    def resist(self, v):
        return self.c0 + self.c1 * v

    @classmethod
    def from_dict(cls, data: dict) -> "MaccParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown MACC parameter keys: {unknown}")
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def from_json(cls, path) -> "MaccParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Preview:
    v_p: np.ndarray        # preceding-vehicle speed at steps k..k+N
    v_max: np.ndarray      # speed limit at steps k..k+N
    F_t_prev: float
    F_b_prev: float
    v0: float
    d0: float

    def __post_init__(self):
        self.v_p = np.asarray(self.v_p, dtype=float)
        self.v_max = np.asarray(self.v_max, dtype=float)
        if self.v_p.shape != self.v_max.shape or self.v_p.ndim != 1:
            raise ValueError("v_p and v_max must be 1-D arrays of equal length")
        if np.any(self.v_p < 0) or np.any(self.v_max < 0) or self.v0 < 0:
            raise ValueError("speeds must be non-negative")
        if not self.d0 > 0:
            raise ValueError("initial gap d0 must be positive")

    @property
    def horizon(self) -> int:
        return self.v_p.size - 1


class WarmStartError(ValueError):
    pass


def power_cost_canonical(params: MaccParams) -> tuple[np.ndarray, np.ndarray]:
    """Completed-square form of the power cost: ``(center, weight)``.

    ``omega_p*Ts*(z^T Q z + b^T z)`` equals ``||z + center||^2_weight`` up to a
    constant, with ``center = Q^{-1} b / 2`` and ``weight = omega_p * Ts * Q``.
    """
    q = params.q_c
    eig = np.linalg.eigvalsh(q)
    if eig.min() <= 0:
        raise ValueError(f"power-map matrix Q_c is not positive definite (eigenvalues {eig})")
    center = 0.5 * np.linalg.solve(q, params.b_c)
    return center, params.omega_p * params.Ts * q


class MaccGraph(FactorGraph):
    """Factor graph of one MACC horizon; ``ids[name][i]`` is the node of quantity ``name`` at step ``i``."""

    def __init__(self, params: MaccParams, preview: Preview):
        super().__init__()
        self.params = params
        self.preview = preview
        self.horizon = preview.horizon
        self.ids: dict[str, list[int]] = {}

    def trajectory(self, x=None) -> dict[str, np.ndarray]:
        x = self._x if x is None else x
        return {name: np.array([x[self.variables[v].offset] for v in ids])
                for name, ids in self.ids.items()}

    def set_trajectory(self, traj: dict) -> None:
        for name, ids in self.ids.items():
            for vid, val in zip(ids, traj[name]):
                self.set_value(vid, [val])


def _lin(coeffs, const):
    return AffineMap([[[c]] for c in coeffs], [const])


def split_abs_rate(graph: FactorGraph, f_curr_id: int, f_prev, delta_id: int,
                   tag: str = "", step: int | None = None) -> tuple[int, int]:
    """Encode ``|F_i - F_{i-1}| - delta <= 0`` as two linear inequality factors.

    ``f_prev`` is either an integer variable id or a float constant (the force
    applied at the previous control instant).
    """
    if isinstance(f_prev, (int, np.integer)):
        ids = [f_curr_id, int(f_prev), delta_id]
        up = _lin([1.0, -1.0, -1.0], 0.0)
        down = _lin([-1.0, 1.0, -1.0], 0.0)
    else:
        ids = [f_curr_id, delta_id]
        up = _lin([1.0, -1.0], -float(f_prev))
        down = _lin([-1.0, -1.0], float(f_prev))
    return (graph.add_inequality_factor(up, 1, ids, tag=tag, step=step),
            graph.add_inequality_factor(down, 1, ids, tag=tag, step=step))


def build_macc_graph(params: MaccParams, preview: Preview, guess: dict | None = None,
                     check_feasible: bool = True) -> MaccGraph:
    """Assemble cost, dynamics and inequality factors for the horizon of ``preview``.

    ``guess`` maps each quantity to an array of length N; it must be strictly
    feasible for every inequality when ``check_feasible`` is set.
    """
    n = preview.horizon
    if n < 1:
        raise ValueError("horizon N must be >= 1")
    p = params
    if guess is None:
        guess = cold_start(preview, p)
    g = MaccGraph(p, preview)
    for name in QUANTITIES:
        g.ids[name] = []
    for i in range(n):
        for name in QUANTITIES:
            g.ids[name].append(g.add_variable(1, initial_value=[guess[name][i]]))
    v, d, ft, fb = g.ids["v"], g.ids["d"], g.ids["F_t"], g.ids["F_b"]
    dfar, dft, dfb = g.ids["delta_far"], g.ids["delta_Ft"], g.ids["delta_Fb"]
    center, weight = power_cost_canonical(p)
    k = p.Ts / p.m_eq
    vp, vmax = preview.v_p, preview.v_max

    for i in range(n):
        # power cost on (v_i, F_t_i); v_0 is measured data
        if i == 0:
            power = AffineMap([[[0.0], [1.0]]], [preview.v0 + center[0], center[1]])
            g.add_cost_factor(power, 2, [ft[0]], weight, tag="power", step=i)
        else:
            power = AffineMap([[[1.0], [0.0]], [[0.0], [1.0]]], center)
            g.add_cost_factor(power, 2, [v[i - 1], ft[i]], weight, tag="power", step=i)
        g.add_cost_factor(_lin([1.0], 0.0), 1, [fb[i]], [[p.w1]], tag="braking", step=i)
        g.add_cost_factor(_lin([1.0], 0.0), 1, [dfar[i]], [[p.w2]], tag="tracking", step=i)
        g.add_cost_factor(_lin([1.0], 0.0), 1, [dft[i]], [[p.w3]], tag="traction_comfort", step=i)
        g.add_cost_factor(_lin([1.0], 0.0), 1, [dfb[i]], [[p.w4]], tag="brake_comfort", step=i)

    for i in range(n):
        # v_{i+1} - v_i - Ts/m (F_t - F_b - c0 - c1 v_i) = 0
        if i == 0:
            speed = _lin([1.0, -k, k], -preview.v0 + k * (p.c0 + p.c1 * preview.v0))
            g.add_equality_factor(speed, 1, [v[0], ft[0], fb[0]], tag="speed_dynamics", step=i)
        else:
            speed = _lin([1.0, -(1.0 - k * p.c1), -k, k], k * p.c0)
            g.add_equality_factor(speed, 1, [v[i], v[i - 1], ft[i], fb[i]],
                                  tag="speed_dynamics", step=i)
        # d_{i+1} - d_i - Ts/2 (vp_i + vp_{i+1} - v_i - v_{i+1}) = 0
        h2 = 0.5 * p.Ts
        if i == 0:
            gap = _lin([1.0, h2], -preview.d0 - h2 * (vp[0] + vp[1] - preview.v0))
            g.add_equality_factor(gap, 1, [d[0], v[0]], tag="gap_dynamics", step=i)
        else:
            gap = _lin([1.0, -1.0, h2, h2], -h2 * (vp[i] + vp[i + 1]))
            g.add_equality_factor(gap, 1, [d[i], d[i - 1], v[i], v[i - 1]],
                                  tag="gap_dynamics", step=i)

    for i in range(n):
        add = g.add_inequality_factor
        add(_lin([p.h_safety, -1.0], p.d_min), 1, [v[i], d[i]], tag="safety_gap", step=i)
        add(_lin([1.0, -p.h_track, 1.0], -p.d_min), 1, [d[i], v[i], dfar[i]],
            tag="tracking_gap", step=i)
        add(_lin([-1.0], 0.0), 1, [ft[i]], tag="traction_min", step=i)
        add(_lin([1.0], -p.F_t_max), 1, [ft[i]], tag="traction_max", step=i)
        if i == 0:
            add(_lin([1.0], -(p.a20 + p.a21 * preview.v0)), 1, [ft[0]], tag="driveline", step=i)
        else:
            add(_lin([1.0, -p.a21], -p.a20), 1, [ft[i], v[i - 1]], tag="driveline", step=i)
        add(_lin([-1.0], 0.0), 1, [fb[i]], tag="brake_min", step=i)
        add(_lin([1.0], -p.F_b_max), 1, [fb[i]], tag="brake_max", step=i)
        add(_lin([1.0], -vmax[i + 1]), 1, [v[i]], tag="speed_limit", step=i)
        add(_lin([-1.0], 0.0), 1, [v[i]], tag="speed_min", step=i)
        split_abs_rate(g, ft[i], float(preview.F_t_prev) if i == 0 else ft[i - 1], dft[i],
                       tag="traction_rate", step=i)
        split_abs_rate(g, fb[i], float(preview.F_b_prev) if i == 0 else fb[i - 1], dfb[i],
                       tag="brake_rate", step=i)

    if check_feasible:
        bad = violated_constraints(g)
        if bad:
            raise WarmStartError("initial guess is not strictly feasible: " +
                                 ", ".join(f"{tag}[step {s}]" for tag, s in bad))
    return g


def violated_constraints(graph: FactorGraph, x=None) -> list[tuple[str, int]]:
    out = []
    for f in graph.factors_of(FactorKind.INEQUALITY):
        if np.any(graph.residual(f, x) >= 0):
            out.append((f.tag, f.step))
    return out


def constraint_counts(graph: FactorGraph) -> dict:
    ineq = graph.factors_of(FactorKind.INEQUALITY)
    eq = graph.factors_of(FactorKind.EQUALITY)
    return {
        "decision_dims": int(graph.decision_indices().size),
        "equality": sum(f.residual_dim for f in eq),
        "inequality_families": len({(f.tag, f.step) for f in ineq}),
        "inequality_rows": sum(f.residual_dim for f in ineq),
    }


# -- initial guesses --------------------------------------------------------

def _gap_rollout(preview: Preview, v, Ts):
    vv = np.concatenate([[preview.v0], v])
    d = preview.d0 + np.cumsum(0.5 * Ts * (preview.v_p[:-1] + preview.v_p[1:] - vv[:-1] - vv[1:]))
    return d


def check_safety_reachable(preview: Preview, params: MaccParams) -> None:
    """Raise if even full braking cannot keep the first predicted gap safe."""
    p = params
    v1 = max(0.0, preview.v0 + p.Ts / p.m_eq * (-p.F_b_max - p.resist(preview.v0)))
    d1 = preview.d0 + 0.5 * p.Ts * (preview.v_p[0] + preview.v_p[1] - preview.v0 - v1)
    if d1 - p.h_safety * v1 <= p.d_min:
        raise WarmStartError(f"safety gap unreachable: d0={preview.d0:.3f} m at v0={preview.v0:.3f} m/s")


def repair(traj: dict, preview: Preview, params: MaccParams, eps: float = REPAIR_MARGIN) -> dict:
    """Move a candidate trajectory strictly inside every inequality by at least ``eps``."""
    p = params
    n = preview.horizon
    check_safety_reachable(preview, p)
    out = {k: np.array(traj[k], dtype=float) for k in QUANTITIES}
    vmax = preview.v_max[1:]
    if np.any(vmax <= 2 * eps):
        raise WarmStartError("speed limit leaves no strictly feasible speed")
    v = np.clip(out["v"], eps, vmax - eps)
    v_prev = np.concatenate([[preview.v0], v[:-1]])
    ft_upper = np.minimum(p.F_t_max, p.a20 + p.a21 * v_prev)
    if np.any(ft_upper <= 2 * eps):
        raise WarmStartError("driveline envelope leaves no strictly feasible traction force")
    ft = np.clip(out["F_t"], eps, ft_upper - eps)
    fb = np.clip(out["F_b"], eps, p.F_b_max - eps)
    d = np.maximum(out["d"], p.d_min + p.h_safety * v + eps)
    dfar = np.minimum(out["delta_far"], p.d_min + p.h_track * v - d - eps)
    rate_t = np.abs(ft - np.concatenate([[preview.F_t_prev], ft[:-1]]))
    rate_b = np.abs(fb - np.concatenate([[preview.F_b_prev], fb[:-1]]))
    dft = np.maximum(out["delta_Ft"], rate_t + eps)
    dfb = np.maximum(out["delta_Fb"], rate_b + eps)
    assert v.size == n
    return {"v": v, "d": d, "F_t": ft, "F_b": fb, "delta_far": dfar,
            "delta_Ft": dft, "delta_Fb": dfb}


def cold_start(preview: Preview, params: MaccParams, eps: float = REPAIR_MARGIN) -> dict:
    n = preview.horizon
    v = np.full(n, preview.v0)
    traj = {
        "v": v,
        "d": _gap_rollout(preview, np.clip(v, eps, preview.v_max[1:] - eps), params.Ts),
        "F_t": np.full(n, eps),
        "F_b": np.full(n, eps),
        "delta_far": np.zeros(n),
        "delta_Ft": np.zeros(n),
        "delta_Fb": np.zeros(n),
    }
    return repair(traj, preview, params, eps)


def warm_start(previous: dict | None, preview: Preview, params: MaccParams,
               eps: float = REPAIR_MARGIN) -> dict:
    """Shift the previous horizon by one step (repeating the last), then repair."""
    if previous is None:
        return cold_start(preview, params, eps)
    n = preview.horizon
    shifted = {}
    for name in QUANTITIES:
        old = np.asarray(previous[name], dtype=float)
        if old.size != n:
            return cold_start(preview, params, eps)
        shifted[name] = np.concatenate([old[1:], old[-1:]])
    return repair(shifted, preview, params, eps)
