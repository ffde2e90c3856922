"""
Tests for whole-model and per-vertex model uncertainty indices.
"""

import math

import numpy as np
import pytest
from pytest import approx
from scipy import optimize

from engine.bn_core import (
    DirectedGraphModel,
    closed_ancestors,
    enumerate_joint,
    gaussian_joint_moments,
)
from engine.cpd_models import FiniteDiscreteCPD, LinearGaussianCPD
from engine.divergences import kl_chain_rule
from engine.indices import (
    QuantityOfInterest,
    conditional_mean_F,
    effective_coefficient,
    gaussian_model_uncertainty_index,
    gaussian_sensitivity,
    model_uncertainty_index,
    optimizer_network,
    qoi_mean,
    resolve_qoi,
    sensitivity_index,
)
from utils.config import MonteCarloConfig
from utils.errors import InvalidParams, InvalidVertex, NonGaussianModel, NotAncestor


# -- Helpers -----------------------------------------------------------------

def _make_chain(coefficient=2.0):
    """a ~ N(0, 1); b = coefficient * a + N(0, 1)"""
    return DirectedGraphModel.from_cpds([
        LinearGaussianCPD((), 0.0, (), 1.0),
        LinearGaussianCPD((0,), 0.0, (coefficient,), 1.0),
    ], ("a", "b"))


def _make_bypass():
    """a -> b -> c -> d with a bypass a -> d"""
    return DirectedGraphModel.from_cpds([
        LinearGaussianCPD((), 0.0, (), 1.0),
        LinearGaussianCPD((0,), 0.0, (0.5,), 1.0),
        LinearGaussianCPD((1,), 0.0, (1.5,), 0.5),
        LinearGaussianCPD((0, 2), 1.0, (-1.0, 2.0), 0.3),
    ], ("a", "b", "c", "d"))


def _make_binary_pair():
    return DirectedGraphModel.from_cpds([
        FiniteDiscreteCPD((), (0, 1), [[0.3, 0.7]]),
        FiniteDiscreteCPD((0,), (0, 1), [[0.9, 0.1], [0.2, 0.8]], ((0, 1),)),
    ])


def _make_random_dag(seed, n=6, density=0.4):
    rng = np.random.default_rng(seed)
    cpds = []
    for i in range(n):
        parents = tuple(j for j in range(i) if rng.random() < density)
        coefficients = tuple(rng.uniform(-2, 2, len(parents)))
        cpds.append(LinearGaussianCPD(parents, float(rng.normal()), coefficients,
                                      float(rng.uniform(0.2, 1.5))))
    return DirectedGraphModel.from_cpds(cpds)


def _bernoulli_upper(p, eta):
    """sup E_Q[X] - p over Bernoulli(q) with KL(q || p) <= eta"""
    if eta >= -math.log(p):
        return 1 - p
    def kl(q):
        return q * math.log(q / p) + (1 - q) * math.log((1 - q) / (1 - p))
    return optimize.brentq(lambda q: kl(q) - eta, p, 1 - 1e-15, xtol=1e-15) - p


# -- Whole-model index -------------------------------------------------------

class TestWholeModelIndex:
    def test_gaussian_closed_form(self):
        result = model_uncertainty_index(_make_chain(), 1, 0.5)
        assert result.backend == "gaussian_closed_form"
        assert result.plus_value == approx(math.sqrt(5.0), rel=1e-12)
        assert result.minus_value == approx(-math.sqrt(5.0), rel=1e-12)
        direct = gaussian_model_uncertainty_index(_make_chain(), 1, 1.0, 0.5)
        assert direct.plus_value == approx(result.plus_value)

    def test_unit_gaussian_at_half(self):
        model = DirectedGraphModel.from_cpds([LinearGaussianCPD()], ("x",))
        assert model_uncertainty_index(model, 0, 0.5).plus_value == approx(1.0, rel=1e-12)

    def test_affine_slope(self):
        qoi = QuantityOfInterest.affine(1, a=-3.0, b=4.0)
        result = model_uncertainty_index(_make_chain(), qoi, 0.5)
        assert result.plus_value == approx(3.0 * math.sqrt(5.0))

    def test_monte_carlo_close_to_closed_form(self):
        mc = MonteCarloConfig(samples=200000, seed=17)
        result = model_uncertainty_index(_make_chain(), 1, 0.5, mc, backend="monte_carlo")
        assert result.backend == "monte_carlo"
        assert result.plus_value == approx(math.sqrt(5.0), rel=0.02)
        assert result.minus_value == approx(-math.sqrt(5.0), rel=0.02)

    @pytest.mark.parametrize("seed", range(30))
    def test_monte_carlo_on_random_networks(self, seed):
        n = 2 + seed % 7
        model = _make_random_dag(100 + seed, n=n)
        k = n - 1
        a = float(np.random.default_rng(seed).choice([-1.0, 1.0]) * (0.5 + 0.1 * (seed % 5)))
        qoi = QuantityOfInterest.affine(k, a=a, b=0.3)
        variance = gaussian_joint_moments(model).covariance[k, k]
        mc = MonteCarloConfig(samples=200000, seed=1000 + seed)
        for eta in (0.1, 0.5, 1.0):
            result = model_uncertainty_index(model, qoi, eta, mc, backend="monte_carlo")
            expected = math.sqrt(2 * a ** 2 * variance * eta)
            assert result.plus_value == approx(expected, rel=0.02)
            assert result.minus_value == approx(-expected, rel=0.02)

    def test_monte_carlo_is_deterministic(self):
        mc = MonteCarloConfig(samples=20000, seed=4)
        first = model_uncertainty_index(_make_chain(), 1, 0.2, mc, backend="monte_carlo")
        second = model_uncertainty_index(_make_chain(), 1, 0.2, mc, backend="monte_carlo")
        assert first.plus_value == second.plus_value

    def test_discrete_enumeration(self):
        result = model_uncertainty_index(_make_binary_pair(), 1, 0.1)
        assert result.backend == "exact_enumeration"
        p = 0.3 * 0.1 + 0.7 * 0.8
        assert result.plus_value == approx(_bernoulli_upper(p, 0.1), abs=1e-9)

    def test_zero_eta(self):
        result = model_uncertainty_index(_make_chain(), 1, 0.0)
        assert result.plus_value == 0.0 and result.minus_value == 0.0

    def test_invalid_eta_and_backend(self):
        with pytest.raises(InvalidParams):
            model_uncertainty_index(_make_chain(), 1, -0.1)
        with pytest.raises(InvalidParams):
            model_uncertainty_index(_make_chain(), 1, 0.1, backend="bogus")
        with pytest.raises(NonGaussianModel):
            model_uncertainty_index(_make_binary_pair(), 1, 0.1, backend="gaussian_closed_form")


class TestQoI:
    def test_resolve_label_and_expression(self):
        model = _make_chain()
        assert resolve_qoi(model, "b").vertex == 1
        expression = resolve_qoi(model, "a * b + 1")
        assert expression.vertices == (0, 1)
        assert expression.evaluate(np.array([[2.0, 3.0]]))[0] == 7.0

    def test_unknown_vertex(self):
        with pytest.raises(InvalidVertex):
            resolve_qoi(_make_chain(), "c + 1")

    def test_mean(self):
        model = _make_chain()
        assert qoi_mean(model, QuantityOfInterest.affine(1, 2.0, 1.0)) == 1.0
        assert qoi_mean(_make_binary_pair(), 1) == approx(0.3 * 0.1 + 0.7 * 0.8)


# -- Optimizer networks ------------------------------------------------------

class TestOptimizerNetwork:
    def test_gaussian_optimizer_attains_the_bound(self):
        model = _make_bypass()
        eta = 0.4
        Q = optimizer_network(model, 3, eta)
        assert kl_chain_rule(Q, model).total == approx(eta, rel=1e-9)
        shift = gaussian_joint_moments(Q).mean[3] - gaussian_joint_moments(model).mean[3]
        assert shift == approx(model_uncertainty_index(model, 3, eta).plus_value, rel=1e-9)

    @pytest.mark.parametrize("sign", [1, -1])
    def test_discrete_optimizer_is_tight(self, sign):
        model = _make_binary_pair()
        eta = 0.05
        Q = optimizer_network(model, 1, eta, sign)
        assert kl_chain_rule(Q, model).total == approx(eta, abs=1e-8)
        configs, q = enumerate_joint(Q)
        _, p = enumerate_joint(model)
        result = model_uncertainty_index(model, 1, eta)
        bound = result.plus_value if sign > 0 else result.minus_value
        assert q @ configs[:, 1] - p @ configs[:, 1] == approx(bound, abs=1e-8)

    def test_zero_eta_returns_baseline(self):
        model = _make_chain()
        assert optimizer_network(model, 1, 0.0) is model


# -- Effective coefficients --------------------------------------------------

class TestEffectiveCoefficient:
    def test_path_sum(self):
        model = _make_bypass()
        # a -> d directly (-1) plus a -> b -> c -> d (0.5 * 1.5 * 2)
        result = effective_coefficient(model, 3, 0)
        assert result.value == approx(-1.0 + 0.5 * 1.5 * 2.0)
        assert len(result.paths) == 2
        assert effective_coefficient(model, 3, 3).value == 1.0

    def test_not_an_ancestor(self):
        with pytest.raises(NotAncestor):
            effective_coefficient(_make_bypass(), 0, 3)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_covariance_with_roots(self, seed):
        model = _make_random_dag(seed)
        cov = gaussian_joint_moments(model).covariance
        for k in range(model.vertex_count):
            for l in closed_ancestors(model.graph, k):
                if model.graph.parents(l):
                    continue
                beta = effective_coefficient(model, k, l).value
                assert cov[k, l] == approx(beta * model.cpds[l].noise_sd ** 2, abs=1e-10)


# -- Conditional mean F ------------------------------------------------------

class TestConditionalMean:
    def test_affine_chain(self):
        model = _make_chain(2.0)
        F = conditional_mean_F(model, 1, 0)
        assert F.backend == "affine"
        assert F([1.5, -1.0]) == approx([3.0, -2.0])

    def test_vertex_itself(self):
        F = conditional_mean_F(_make_chain(), 1, 1)
        assert F([0.7], [5.0]) == approx([0.7])

    def test_bypass_uses_ancestors(self):
        model = _make_bypass()
        F = conditional_mean_F(model, 3, 2)
        assert F.rho == (0, 1)
        # d = 1 - a + 2 c
        assert F([1.0], [[2.0, 0.0]]) == approx([1.0 - 2.0 + 2.0])

    def test_non_ancestor(self):
        with pytest.raises(NotAncestor):
            conditional_mean_F(_make_chain(), 0, 1)


# -- Sensitivity indices -----------------------------------------------------

class TestSensitivityIndex:
    def test_gaussian_chain(self):
        model = _make_chain(2.0)
        assert sensitivity_index(model, 1, 0, 0.5).plus_value == approx(2.0)
        assert sensitivity_index(model, 1, 1, 0.5).plus_value == approx(1.0)

    def test_free_and_fixed_parent_sets_agree(self):
        model = _make_bypass()
        for l in range(4):
            free = sensitivity_index(model, 3, l, 0.3, "D_l")
            fixed = sensitivity_index(model, 3, l, 0.3, "D_lP")
            assert free.plus_value == approx(fixed.plus_value, rel=1e-12)
            assert free.ambiguity == "vertex_free_parents"
            assert fixed.ambiguity == "vertex_fixed_parents"

    def test_fixed_parents_not_tight_under_bypass(self):
        model = _make_bypass()
        fixed = sensitivity_index(model, 3, 2, 0.3, "D_lP")
        assert not fixed.tight
        assert fixed.diagnostics["upper_bound"]
        assert sensitivity_index(model, 3, 2, 0.3, "D_l").tight

    def test_matches_gaussian_formula(self):
        model = _make_bypass()
        for l in range(4):
            generic = sensitivity_index(model, 3, l, 0.7)
            closed = gaussian_sensitivity(model, 3, 1.0, l, 0.7)
            assert generic.plus_value == approx(closed.plus_value, rel=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_structural_zero_on_random_dags(self, seed):
        model = _make_random_dag(seed)
        k = model.vertex_count - 1
        relevant = closed_ancestors(model.graph, k)
        for l in range(model.vertex_count):
            result = sensitivity_index(model, k, l, 0.5)
            if l in relevant:
                expected = abs(effective_coefficient(model, k, l).value) \
                    * model.cpds[l].noise_sd * math.sqrt(2 * 0.5)
                assert result.plus_value == approx(expected, rel=1e-9, abs=1e-12)
            else:
                assert result.backend == "structural_zero"
                assert result.plus_value == 0.0 and result.minus_value == 0.0

    def test_deterministic_vertex(self):
        model = DirectedGraphModel.from_cpds([
            LinearGaussianCPD(),
            LinearGaussianCPD((0,), 0.0, (1.0,), 0.0),
        ])
        result = sensitivity_index(model, 1, 1, 0.5)
        assert result.plus_value == 0.0
        assert result.diagnostics["deterministic_vertex"]

    def test_discrete_child_against_oracle(self):
        model = _make_binary_pair()
        eta = 0.2
        result = sensitivity_index(model, 1, 1, eta)
        assert result.backend == "exact_enumeration"
        expected = 0.3 * _bernoulli_upper(0.1, eta) + 0.7 * _bernoulli_upper(0.8, eta)
        assert result.plus_value == approx(expected, abs=1e-9)

    def test_jensen_is_looser(self):
        model = _make_binary_pair()
        nested = sensitivity_index(model, 1, 1, 0.2)
        relaxed = sensitivity_index(model, 1, 1, 0.2, jensen=True)
        assert relaxed.jensen
        assert relaxed.plus_value >= nested.plus_value - 1e-12

    def test_monte_carlo_route(self):
        mc = MonteCarloConfig(inner=100000, seed=21)
        result = sensitivity_index(_make_chain(2.0), 1, 0, 0.5, mc_config=mc, backend="monte_carlo")
        assert result.backend == "monte_carlo"
        assert result.diagnostics["f_backend"] == "affine"
        assert result.plus_value == approx(2.0, rel=0.05)

    @pytest.mark.parametrize("seed", range(20))
    def test_nested_monte_carlo_matches_gaussian_formula(self, seed):
        model = _make_random_dag(200 + seed)
        k = model.vertex_count - 1
        relevant = sorted(closed_ancestors(model.graph, k))
        l = relevant[seed % len(relevant)]
        qoi = QuantityOfInterest.affine(k, a=1.5)
        mc = MonteCarloConfig(outer=10, inner=200000, seed=300 + seed)
        nested = sensitivity_index(model, qoi, l, 0.5, mc_config=mc, backend="monte_carlo")
        closed = gaussian_sensitivity(model, k, 1.5, l, 0.5)
        assert nested.backend == "monte_carlo"
        assert nested.plus_value == approx(closed.plus_value, rel=0.02)
        assert nested.minus_value == approx(closed.minus_value, rel=0.02)

    def test_bad_ambiguity(self):
        with pytest.raises(InvalidParams):
            sensitivity_index(_make_chain(), 1, 0, 0.5, "D_x")
