"""Tests for scenario trees and fan reduction."""

import numpy as np
import pytest

from watermpc.tree import (
    ScenarioFan,
    ScenarioTree,
    attach_forecast,
    leaves_to_scenarios,
    reduce_fan_to_tree,
    validate_tree,
    zero_price_errors,
)

from conftest import make_tree


class TestValidate:
    def test_single_branch_valid(self):
        tree = ScenarioTree.single_branch(horizon=4, n_demand=2, n_price=1)
        assert validate_tree(tree) == []

    def test_bad_children_probabilities(self):
        tree = ScenarioTree(
            horizon=1,
            n_demand=1,
            n_price=1,
            stage=np.array([0, 1, 1]),
            anc=np.array([-1, 0, 0]),
            prob=np.array([1.0, 0.6, 0.5]),
            eps=np.zeros((3, 2)),
        )
        problems = validate_tree(tree)
        assert any("1.1" in p for p in problems)

    def test_reduced_tree_valid(self, rng):
        fan = ScenarioFan(rng.standard_normal((60, 3, 2)), n_demand=1, n_price=1)
        tree = reduce_fan_to_tree(fan, [3, 2, 2])
        assert validate_tree(tree) == []

    def test_random_builder_trees_valid(self, rng):
        for _ in range(10):
            tree = make_tree(rng, horizon=3, n_demand=2, n_price=2)
            assert validate_tree(tree) == []

    def test_orphan_stage_detected(self):
        tree = ScenarioTree(
            horizon=2,
            n_demand=1,
            n_price=1,
            stage=np.array([0, 1, 2]),
            anc=np.array([-1, 0, 0]),
            prob=np.array([1.0, 1.0, 1.0]),
            eps=np.zeros((3, 2)),
        )
        problems = validate_tree(tree)
        assert problems  # node 2 claims the root as ancestor from stage 2


class TestAttachForecast:
    def test_zero_errors_reproduce_forecast(self):
        tree = ScenarioTree.single_branch(horizon=3, n_demand=2, n_price=1)
        d_hat = np.arange(6, dtype=float).reshape(3, 2)
        a_hat = np.array([[10.0], [20.0], [30.0]])
        out = attach_forecast(tree, d_hat, a_hat)
        np.testing.assert_allclose(out.demand[1:], d_hat)
        np.testing.assert_allclose(out.price[1:], a_hat)

    def test_single_node_arithmetic(self):
        tree = ScenarioTree.single_branch(
            horizon=1, n_demand=1, n_price=1, eps=np.array([[0.0, 0.0], [0.1, -2.0]])
        )
        out = attach_forecast(tree, np.array([[1.0]]), np.array([[30.0]]))
        assert out.demand[1, 0] == pytest.approx(1.1)
        assert out.price[1, 0] == pytest.approx(28.0)

    def test_matches_node_loop_oracle(self, rng):
        tree = make_tree(rng, horizon=3, n_demand=2, n_price=3)
        d_hat = rng.random((3, 2))
        a_hat = rng.random((3, 3))
        out = attach_forecast(tree, d_hat, a_hat)
        for i in range(1, tree.n_nodes):
            j = tree.stage[i]
            np.testing.assert_array_equal(out.demand[i], d_hat[j - 1] + tree.eps[i, :2])
            np.testing.assert_array_equal(out.price[i], a_hat[j - 1] + tree.eps[i, 2:])

    def test_affine_in_forecast(self, rng):
        tree = make_tree(rng, horizon=2, n_demand=2, n_price=1)
        d_hat = rng.random((2, 2))
        a_hat = rng.random((2, 1))
        shift = 0.37
        base = attach_forecast(tree, d_hat, a_hat)
        moved = attach_forecast(tree, d_hat + shift, a_hat)
        np.testing.assert_allclose(moved.demand[1:], base.demand[1:] + shift)

    def test_requires_errors(self):
        tree = ScenarioTree.single_branch(horizon=1, n_demand=1, n_price=1)
        tree.eps = None
        with pytest.raises(ValueError, match="prediction errors"):
            attach_forecast(tree, np.array([[1.0]]), np.array([[1.0]]))

    def test_dimension_mismatch(self):
        tree = ScenarioTree.single_branch(horizon=2, n_demand=1, n_price=1)
        with pytest.raises(ValueError, match="forecast shape"):
            attach_forecast(tree, np.ones((3, 1)), np.ones((2, 1)))


class TestReduce:
    def test_identical_scenarios_collapse(self):
        path = np.tile(np.array([[1.0, 2.0], [3.0, 4.0]]), (8, 1, 1))
        fan = ScenarioFan(path, n_demand=1, n_price=1)
        tree = reduce_fan_to_tree(fan, [3, 2])
        assert validate_tree(tree) == []
        np.testing.assert_array_equal(tree.nodes_per_stage, [1, 1, 1])
        np.testing.assert_allclose(tree.prob, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(tree.eps[1:], path[0])

    def test_hand_run_four_scenarios(self):
        # Stage-1 values {-1, -1, +1, +1}: greedy selection picks scenario 0
        # then scenario 2; masses split evenly; centroids are exact.
        values = np.array([[[-1.0]], [[-1.0]], [[1.0]], [[1.0]]])
        fan = ScenarioFan(values, n_demand=1, n_price=0)
        tree = reduce_fan_to_tree(fan, [2])
        assert tree.nodes_per_stage[1] == 2
        np.testing.assert_allclose(tree.prob[1:], [0.5, 0.5])
        np.testing.assert_allclose(tree.eps[1:, 0], [-1.0, 1.0])

    def test_gaussian_fan_shape_and_mass(self, rng):
        fan = ScenarioFan(rng.standard_normal((1000, 3, 2)), n_demand=1, n_price=1)
        tree = reduce_fan_to_tree(fan, [5, 3, 2])
        assert validate_tree(tree) == []
        assert tree.leaves().size == 30
        for j in range(4):
            assert tree.prob[tree.stage == j].sum() == pytest.approx(1.0, abs=1e-12)

    def test_one_branch_preserves_mean(self, rng):
        fan = ScenarioFan(rng.standard_normal((50, 4, 3)), n_demand=2, n_price=1)
        tree = reduce_fan_to_tree(fan, [1, 1, 1, 1])
        np.testing.assert_allclose(tree.eps[1:], fan.values.mean(axis=0), atol=1e-12)

    def test_branching_exceeding_scenarios_rejected(self, rng):
        fan = ScenarioFan(rng.standard_normal((10, 2, 1)), n_demand=1, n_price=0)
        with pytest.raises(ValueError, match="exceeds scenario count"):
            reduce_fan_to_tree(fan, [20])

    def test_branching_longer_than_horizon_rejected(self, rng):
        fan = ScenarioFan(rng.standard_normal((10, 2, 1)), n_demand=1, n_price=0)
        with pytest.raises(ValueError, match="horizon"):
            reduce_fan_to_tree(fan, [2, 2, 2])

    def test_deterministic(self, rng):
        values = rng.standard_normal((200, 3, 2))
        fan = ScenarioFan(values, n_demand=1, n_price=1)
        t1 = reduce_fan_to_tree(fan, [4, 2, 2])
        t2 = reduce_fan_to_tree(ScenarioFan(values.copy(), 1, 1), [4, 2, 2])
        np.testing.assert_array_equal(t1.prob, t2.prob)
        np.testing.assert_array_equal(t1.eps, t2.eps)


class TestLeafPaths:
    def test_single_branch(self):
        tree = ScenarioTree.single_branch(horizon=3, n_demand=1, n_price=1)
        paths = leaves_to_scenarios(tree)
        assert paths == [(1.0, [1, 2, 3])]

    def test_uniform_binary_tree(self):
        stage = np.array([0, 1, 1, 2, 2, 2, 2])
        anc = np.array([-1, 0, 0, 1, 1, 2, 2])
        prob = np.array([1.0, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25])
        tree = ScenarioTree(2, 1, 1, stage, anc, prob, eps=np.zeros((7, 2)))
        paths = leaves_to_scenarios(tree)
        assert len(paths) == 4
        for p, _ in paths:
            assert p == pytest.approx(0.25)
        assert sum(p for p, _ in paths) == pytest.approx(1.0)

    def test_masses_match_reduction_bundles(self, rng):
        fan = ScenarioFan(rng.standard_normal((100, 2, 1)), n_demand=1, n_price=0)
        tree = reduce_fan_to_tree(fan, [4, 2])
        paths = leaves_to_scenarios(tree)
        np.testing.assert_allclose(
            sorted(p for p, _ in paths), sorted(tree.prob[tree.leaves()])
        )
        assert sum(p for p, _ in paths) == pytest.approx(1.0)


def test_zero_price_errors_keeps_demand_part(rng):
    tree = make_tree(rng, horizon=2, n_demand=2, n_price=2)
    out = zero_price_errors(tree)
    np.testing.assert_array_equal(out.eps[:, :2], tree.eps[:, :2])
    assert np.all(out.eps[:, 2:] == 0.0)
    assert validate_tree(out) == []


def test_telescoping_exact(rng):
    tree = make_tree(rng, horizon=3, n_demand=1, n_price=1)
    for node in range(tree.n_nodes):
        kids = tree.children_of(node)
        if kids.size:
            assert tree.prob[kids].sum() == pytest.approx(tree.prob[node], abs=1e-12)
