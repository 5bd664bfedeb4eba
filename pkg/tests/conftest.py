import numpy as np
import pytest

from fgbipm.graph import AffineMap, FactorGraph


def affine(*blocks, const):
    return AffineMap([np.atleast_2d(b) for b in blocks], np.atleast_1d(const))


def scalar_barrier_problem(x0=0.0, info=1.0):
    """min ||x - 2||^2 subject to x - 1 <= 0, as a two-factor graph."""
    g = FactorGraph()
    x = g.add_variable(1, initial_value=[x0])
    g.add_cost_factor(affine([[1.0]], const=[-2.0]), 1, [x], [[info]])
    g.add_inequality_factor(affine([[1.0]], const=[-1.0]), 1, [x])
    return g, x


def box_qp_graph(q, c, lo, hi, x0):
    """min 0.5 x^T Q x + c^T x over a box, written as a cost factor plus four bounds.

    The cost residual is ``L^T x + L^{-1} c`` with ``Q = L L^T`` so that
    ``||e||^2`` equals ``x^T Q x + 2 c^T x`` up to a constant.
    """
    chol = np.linalg.cholesky(q)
    g = FactorGraph()
    x = g.add_variable(2, initial_value=x0)
    g.add_cost_factor(affine(chol.T, const=np.linalg.solve(chol, c)), 2, [x])
    g.add_inequality_factor(affine(np.eye(2), const=-np.asarray(hi)), 2, [x])
    g.add_inequality_factor(affine(-np.eye(2), const=np.asarray(lo)), 2, [x])
    return g, x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
