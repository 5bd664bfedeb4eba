import numpy as np
import pytest

from fgbipm.graph import AffineMap, FactorGraph, FactorKind, GraphError, VariableKind

from conftest import affine


def test_state_layout_follows_insertion_order():
    g = FactorGraph()
    a = g.add_variable(2, initial_value=[1.0, 2.0])
    b = g.add_variable(3)
    assert g.offsets == {a: 0, b: 2}
    assert g.total_dim == 5
    np.testing.assert_array_equal(g.x, [1, 2, 0, 0, 0])
    assert g.variables[b].slice == slice(2, 5)


def test_x_returns_a_copy():
    g = FactorGraph()
    v = g.add_variable(1, initial_value=[3.0])
    x = g.x
    x[0] = 99.0
    np.testing.assert_array_equal(g.value(v), [3.0])


def test_equality_factor_creates_multiplier_node():
    g = FactorGraph()
    a = g.add_variable(1)
    b = g.add_variable(1)
    fid, mid = g.add_equality_factor(affine([[1.0]], [[1.0]], const=[-1.0]), 1, [a, b],
                                     gamma0=0.25)
    f = g.factors[fid]
    assert g.variables[mid].kind is VariableKind.MULTIPLIER
    assert f.multiplier_id == mid and f.decision_ids == [a, b]
    np.testing.assert_array_equal(g.value(mid), [0.25])
    np.testing.assert_array_equal(g.multiplier_indices(), [2])
    np.testing.assert_array_equal(g.decision_indices(), [0, 1])


@pytest.mark.parametrize("bad", [0, -1])
def test_rejects_non_positive_dimension(bad):
    with pytest.raises(GraphError):
        FactorGraph().add_variable(bad)


def test_rejects_non_finite_initial_value():
    with pytest.raises(GraphError):
        FactorGraph().add_variable(2, initial_value=[0.0, np.nan])


def test_rejects_unknown_duplicate_and_multiplier_ids():
    g = FactorGraph()
    a = g.add_variable(1)
    _, mid = g.add_equality_factor(affine([[1.0]], const=[0.0]), 1, [a])
    lin = affine([[1.0]], const=[0.0])
    with pytest.raises(GraphError, match="unknown"):
        g.add_cost_factor(lin, 1, [42])
    with pytest.raises(GraphError, match="duplicate"):
        g.add_inequality_factor(affine([[1.0]], [[1.0]], const=[0.0]), 1, [a, a])
    with pytest.raises(GraphError, match="multiplier"):
        g.add_cost_factor(lin, 1, [mid])


def test_information_matrix_checks():
    g = FactorGraph()
    a = g.add_variable(2)
    lin = affine(np.eye(2), const=[0.0, 0.0])
    with pytest.raises(GraphError, match="symmetric"):
        g.add_cost_factor(lin, 2, [a], [[1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(GraphError, match="semidefinite"):
        g.add_cost_factor(lin, 2, [a], [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(GraphError, match="2x2"):
        g.add_cost_factor(lin, 2, [a], [[1.0]])


def test_generic_evaluator_matches_affine_fast_path(rng):
    a_mat = rng.normal(size=(3, 2))
    b_mat = rng.normal(size=(3, 1))
    c = rng.normal(size=3)
    g = FactorGraph()
    u = g.add_variable(2, initial_value=rng.normal(size=2))
    w = g.add_variable(1, initial_value=rng.normal(size=1))

    def plain(xu, xw):
        return a_mat @ xu + b_mat @ xw + c, [a_mat, b_mat]

    f_fast = g.add_inequality_factor(AffineMap([a_mat, b_mat], c), 3, [u, w])
    f_plain = g.add_inequality_factor(plain, 3, [u, w])
    e1, j1 = g.linearize(g.factors[f_fast])
    e2, j2 = g.linearize(g.factors[f_plain])
    np.testing.assert_allclose(e1, e2)
    np.testing.assert_allclose(j1, j2)


def test_evaluator_block_shape_is_validated():
    g = FactorGraph()
    u = g.add_variable(2)
    g.add_cost_factor(lambda xu: (xu, [np.eye(3)]), 2, [u])
    with pytest.raises(GraphError, match="shape"):
        g.linearize(g.factors[0])


def test_stacked_family_matches_per_factor_values(rng):
    g = FactorGraph()
    ids = [g.add_variable(2, initial_value=rng.normal(size=2)) for _ in range(4)]
    for k in range(3):
        g.add_inequality_factor(affine(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)),
                                       const=rng.normal(size=2)), 2, [ids[k], ids[k + 1]])
    g.add_inequality_factor(lambda a: (np.array([a @ a - 1.0]), [2 * a[None, :]]), 1, [ids[0]])
    fam = g.stacked(FactorKind.INEQUALITY)
    e, jac = fam.linearize(g.x)
    expected = np.concatenate([g.residual(f) for f in g.factors_of(FactorKind.INEQUALITY)])
    np.testing.assert_allclose(e, expected)
    assert jac.shape == (7, g.total_dim)
    assert fam.factor_of_row(6).id == 3


def test_stacked_cache_invalidates_when_graph_grows():
    g = FactorGraph()
    a = g.add_variable(1, initial_value=[0.5])
    g.add_inequality_factor(affine([[1.0]], const=[-1.0]), 1, [a])
    assert g.g().shape == (1,)
    g.add_inequality_factor(affine([[-1.0]], const=[-1.0]), 1, [a])
    np.testing.assert_allclose(g.g(), [-0.5, -1.5])


def test_cost_is_sum_of_weighted_squares():
    g = FactorGraph()
    a = g.add_variable(1, initial_value=[3.0])
    g.add_cost_factor(affine([[1.0]], const=[-1.0]), 1, [a], [[2.0]])
    g.add_cost_factor(affine([[1.0]], const=[0.0]), 1, [a])
    assert g.cost() == pytest.approx(2.0 * 4.0 + 9.0)


def test_apply_increment_validates_inputs():
    g = FactorGraph()
    g.add_variable(2)
    with pytest.raises(GraphError):
        g.apply_increment(np.ones(3))
    with pytest.raises(ValueError):
        g.apply_increment(np.ones(2), zeta=0.0)
    g.apply_increment(np.ones(2), zeta=0.5)
    np.testing.assert_allclose(g.x, [0.5, 0.5])


def test_reset_multipliers():
    g = FactorGraph()
    a = g.add_variable(1)
    _, mid = g.add_equality_factor(affine([[1.0]], const=[0.0]), 1, [a], gamma0=3.0)
    g.reset_multipliers(-1.0)
    np.testing.assert_array_equal(g.value(mid), [-1.0])
