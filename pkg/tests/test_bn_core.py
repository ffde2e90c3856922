"""
Tests for the DAG structure, ancestral sets and forward sampling.
"""

import math

import numpy as np
import pytest
from pytest import approx
from scipy import stats

from engine.bn_core import (
    DirectedGraph,
    DirectedGraphModel,
    ancestors,
    closed_ancestors,
    cond_indep_given_parents,
    descendants,
    directed_paths,
    enumerate_joint,
    gaussian_joint_moments,
    is_enumerable,
    joint_log_density,
    linear_means,
    sample,
    topological_order,
)
from engine.cpd_models import FiniteDiscreteCPD, LinearAdditiveCPD, LinearGaussianCPD, two_point_noise
from utils.errors import CycleDetected, DimensionMismatch, InvalidVertex, NotAncestor, UnsupportedFamily


# -- Helpers -----------------------------------------------------------------

def _make_diamond():
    """0 -> 1, 0 -> 2, 1 -> 3, 2 -> 3"""
    return DirectedGraph(4, {(0, 1), (0, 2), (1, 3), (2, 3)})


def _make_chain_model(coefficient=2.0):
    """X0 ~ N(0, 1), X1 = coefficient * X0 + N(0, 1)"""
    return DirectedGraphModel.from_cpds([
        LinearGaussianCPD((), 0.0, (), 1.0),
        LinearGaussianCPD((0,), 0.0, (coefficient,), 1.0),
    ], ("a", "b"))


def _make_binary_pair():
    return DirectedGraphModel.from_cpds([
        FiniteDiscreteCPD((), (0, 1), [[0.3, 0.7]]),
        FiniteDiscreteCPD((0,), (0, 1), [[0.9, 0.1], [0.2, 0.8]], ((0, 1),)),
    ])


# -- Graph structure ---------------------------------------------------------

class TestGraph:
    def test_topological_order_respects_edges(self):
        order = topological_order(_make_diamond())
        assert order == [0, 1, 2, 3]

    def test_cycle_is_rejected(self):
        with pytest.raises(CycleDetected):
            DirectedGraph(3, {(0, 1), (1, 2), (2, 0)})

    def test_cycle_is_reported_closed(self):
        with pytest.raises(CycleDetected) as info:
            DirectedGraph(4, {(0, 1), (1, 2), (2, 3), (3, 1)})
        cycle = info.value.cycle
        assert cycle[0] == cycle[-1]
        assert set(cycle) == {1, 2, 3}

    def test_lexicographic_tie_break(self):
        graph = DirectedGraph(5, {(4, 0), (3, 1)})
        assert topological_order(graph) == [2, 3, 1, 4, 0]

    @pytest.mark.parametrize("seed", range(10))
    def test_closures_match_path_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n = 7
        edges = {(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.35}
        graph = DirectedGraph(n, edges)
        for k in range(n):
            reached = {u for u in range(n) if u != k and directed_paths(graph, u, k)}
            assert ancestors(graph, k) == reached
            assert descendants(graph, k) == {v for v in range(n) if v != k and directed_paths(graph, k, v)}

    def test_self_loop_is_a_cycle(self):
        with pytest.raises(CycleDetected):
            DirectedGraph(2, {(1, 1)})

    def test_edge_outside_range(self):
        with pytest.raises(InvalidVertex):
            DirectedGraph(2, {(0, 5)})

    def test_parents_and_children_sorted(self):
        graph = _make_diamond()
        assert graph.parents(3) == (1, 2)
        assert graph.children(0) == (1, 2)

    def test_ancestor_sets(self):
        graph = _make_diamond()
        assert ancestors(graph, 3) == {0, 1, 2}
        assert closed_ancestors(graph, 1) == {0, 1}
        assert ancestors(graph, 0) == frozenset()
        assert descendants(graph, 0) == {1, 2, 3}

    def test_directed_paths(self):
        graph = _make_diamond()
        assert directed_paths(graph, 0, 3) == [(0, 1, 3), (0, 2, 3)]
        assert directed_paths(graph, 1, 2) == []
        assert directed_paths(graph, 2, 2) == [(2,)]

    def test_labels(self):
        graph = DirectedGraph(2, {(0, 1)}, ("x", "y"))
        assert graph.index_of("y") == 1
        assert graph.label(0) == "x"

    def test_duplicate_labels_rejected(self):
        with pytest.raises(InvalidVertex):
            DirectedGraph(2, set(), ("x", "x"))


class TestConditionalIndependence:
    def test_chain_is_independent(self):
        graph = DirectedGraph(3, {(0, 1), (1, 2)})
        assert cond_indep_given_parents(graph, 2, 1)

    def test_bypass_edge_breaks_independence(self):
        # 0 -> 1 -> 2 -> 3 plus 0 -> 3 skips the parents of 2
        graph = DirectedGraph(4, {(0, 1), (1, 2), (2, 3), (0, 3)})
        assert not cond_indep_given_parents(graph, 3, 2)

    def test_not_an_ancestor(self):
        graph = DirectedGraph(3, {(0, 1)})
        with pytest.raises(NotAncestor):
            cond_indep_given_parents(graph, 1, 2)


# -- Models ------------------------------------------------------------------

class TestModel:
    def test_cpd_parents_must_match_graph(self):
        graph = DirectedGraph(2, {(0, 1)})
        with pytest.raises(DimensionMismatch):
            DirectedGraphModel(graph, (LinearGaussianCPD(), LinearGaussianCPD()))

    def test_gaussian_moments(self):
        moments = gaussian_joint_moments(_make_chain_model(2.0))
        assert moments.covariance[1, 1] == approx(5.0)
        assert moments.covariance[0, 1] == approx(2.0)
        assert moments.mean == approx([0.0, 0.0])

    def test_linear_means_with_additive_noise(self):
        model = DirectedGraphModel.from_cpds([
            LinearGaussianCPD((), 1.0, (), 1.0),
            LinearAdditiveCPD((0,), 0.5, (3.0,), two_point_noise(0.2)),
        ])
        assert linear_means(model) == approx([1.0, 3.5])

    def test_joint_log_density(self):
        model = DirectedGraphModel.from_cpds([LinearGaussianCPD()])
        assert joint_log_density(model, [0.0]) == approx(-0.5 * math.log(2 * math.pi))

    def test_replace_cpd_rebuilds_graph(self):
        model = _make_chain_model()
        swapped = model.replace_cpd(1, LinearGaussianCPD((), 0.0, (), 1.0))
        assert swapped.graph.parents(1) == ()
        assert swapped.stochastic_vertices() == [0, 1]


class TestSampling:
    def test_same_seed_same_draws(self):
        model = _make_chain_model()
        assert np.array_equal(sample(model, 500, 11), sample(model, 500, 11))

    def test_threads_do_not_change_draws(self):
        model = _make_chain_model()
        n = 70000
        assert np.array_equal(sample(model, n, 3, threads=1), sample(model, n, 3, threads=2))

    def test_empirical_moments(self):
        draws = sample(_make_chain_model(), 40000, 5)
        assert np.var(draws[:, 1]) == approx(5.0, rel=0.05)

    def test_marginal_distribution(self):
        draws = sample(_make_chain_model(), 20000, 9)
        assert stats.kstest(draws[:, 1], stats.norm(0.0, math.sqrt(5.0)).cdf).pvalue > 1e-3

    def test_clamping(self):
        draws = sample(_make_chain_model(), 20000, 7, clamp={0: 3.0})
        assert np.all(draws[:, 0] == 3.0)
        assert draws[:, 1].mean() == approx(6.0, abs=0.05)

    def test_restrict_to_leaves_other_columns_empty(self):
        model = DirectedGraphModel.from_cpds([LinearGaussianCPD(), LinearGaussianCPD()])
        draws = sample(model, 10, 1, restrict_to=[1])
        assert np.all(np.isnan(draws[:, 0]))
        assert np.all(np.isfinite(draws[:, 1]))


class TestEnumeration:
    def test_probabilities(self):
        configs, probs = enumerate_joint(_make_binary_pair())
        assert probs.sum() == approx(1.0)
        table = {tuple(c): p for c, p in zip(configs, probs)}
        assert table[(1.0, 1.0)] == approx(0.7 * 0.8)
        assert table[(0.0, 1.0)] == approx(0.3 * 0.1)

    def test_continuous_vertex_not_enumerable(self):
        model = _make_chain_model()
        assert not is_enumerable(model)
        with pytest.raises(UnsupportedFamily):
            enumerate_joint(model)
