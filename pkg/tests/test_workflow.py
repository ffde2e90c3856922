"""
Tests for budgets, ranking, tolerance checks, stress curves and correctability.
"""

import math

import numpy as np
import pytest
from pytest import approx

from engine.bn_core import DirectedGraphModel
from engine.cpd_models import LinearGaussianCPD, two_point_noise, with_noise
from engine.divergences import MisspecificationBudget
from engine.indices import QuantityOfInterest, qoi_mean, sensitivity_index
from engine.workflow import (
    assess,
    build_budget,
    correctability_check,
    improvement_delta,
    rank_components,
    stress_test,
)
from utils.config import MonteCarloConfig
from utils.errors import (
    InvalidParams,
    MismatchedAmbiguity,
    MissingBudget,
    MultiVertexDiff,
    StructureMismatch,
    ZeroMeanRelative,
)


def _make_model():
    """a ~ N(0, 1); b = 10 + 2 a + N(0, 1); z ~ N(0, 1) unrelated to b"""
    return DirectedGraphModel.from_cpds([
        LinearGaussianCPD((), 0.0, (), 1.0),
        LinearGaussianCPD((0,), 10.0, (2.0,), 1.0),
        LinearGaussianCPD((), 0.0, (), 1.0),
    ], ("a", "b", "z"))


def _make_chain():
    """a -> b -> c, all linear-Gaussian"""
    return DirectedGraphModel.from_cpds([
        LinearGaussianCPD((), 1.0, (), 1.0),
        LinearGaussianCPD((0,), 0.5, (0.8,), 0.6),
        LinearGaussianCPD((1,), -1.0, (1.5,), 0.4),
    ], ("a", "b", "c"))


def _make_random_model(seed, n=6, density=0.4):
    """Linear-Gaussian chain 0 -> 1 -> ... -> n-1 plus random extra edges"""
    rng = np.random.default_rng(seed)
    cpds = [LinearGaussianCPD((), float(rng.normal()), (), float(rng.uniform(0.2, 1.5)))]
    for i in range(1, n):
        parents = tuple(j for j in range(i - 1) if rng.random() < density) + (i - 1,)
        cpds.append(LinearGaussianCPD(parents, float(rng.normal()), tuple(rng.uniform(-2, 2, len(parents))),
                                      float(rng.uniform(0.2, 1.5))))
    return DirectedGraphModel.from_cpds(cpds)


class TestBuildBudget:
    def test_overrides_win_over_data(self):
        model = _make_model()
        data = {0: np.random.default_rng(1).standard_normal(500)}
        budget = build_budget(model, data, {0: 0.4}, fallback_eta=0.1)
        assert budget.eta_for(0) == 0.4
        assert budget.provenance[0] == "user_set"
        assert budget.eta_for(1) == 0.1

    def test_data_estimated(self):
        model = _make_model()
        data = {2: 0.5 + np.random.default_rng(2).standard_normal(20000)}
        budget = build_budget(model, data, fallback_eta=0.1)
        assert budget.provenance[2] == "data_estimated"
        assert budget.eta_for(2) == approx(0.125, abs=0.01)

    def test_missing_vertices(self):
        with pytest.raises(MissingBudget) as info:
            build_budget(_make_model(), user_overrides={0: 0.1})
        assert info.value.details["vertices"] == ["b", "z"]

    def test_deterministic_vertices_skipped(self):
        model = DirectedGraphModel.from_cpds([
            LinearGaussianCPD(),
            LinearGaussianCPD((0,), 0.0, (1.0,), 0.0),
        ])
        budget = build_budget(model, user_overrides={0: 0.2})
        assert budget.eta_for(1) is None


class TestRanking:
    def test_order_and_shares(self):
        model = _make_model()
        budget = MisspecificationBudget({0: 0.3, 1: 0.3})
        report = rank_components(model, QuantityOfInterest.affine(1), budget)
        assert report.ordered_vertices() == [0, 1, 2]
        shares = report.shares()
        assert shares[0] == approx(2.0 / 3.0)
        assert shares[1] == approx(1.0 / 3.0)
        assert shares[2] == 0.0
        assert sum(shares.values()) == approx(1.0)
        assert report.qoi_mean == approx(10.0)
        assert report.entries[0].relative == approx(2.0 * math.sqrt(0.6) / 10.0)

    def test_missing_ancestor_eta(self):
        with pytest.raises(MissingBudget):
            rank_components(_make_model(), QuantityOfInterest.affine(1), MisspecificationBudget({0: 0.3}))

    def test_degenerate_ranking(self):
        budget = MisspecificationBudget(global_eta=0.0)
        report = rank_components(_make_model(), QuantityOfInterest.affine(1), budget)
        assert report.degenerate
        assert all(e.share == 0.0 for e in report.entries)

    def test_assessments(self):
        budget = MisspecificationBudget(global_eta=0.3)
        report = rank_components(_make_model(), QuantityOfInterest.affine(1), budget, tol=0.1)
        assert not report.assessments[0].passed
        assert report.assessments[1].passed

    def test_threads_give_same_report(self):
        budget = MisspecificationBudget(global_eta=0.3)
        qoi = QuantityOfInterest.affine(1)
        single = rank_components(_make_model(), qoi, budget, MonteCarloConfig(threads=1))
        pooled = rank_components(_make_model(), qoi, budget, MonteCarloConfig(threads=3))
        assert [e.i_plus for e in single.entries] == [e.i_plus for e in pooled.entries]


class TestAssess:
    def test_absolute_and_relative(self):
        assert assess(0.2, 5.0, 0.25, "absolute").passed
        relative = assess(0.2, -4.0, 0.04, "relative")
        assert relative.ratio == approx(0.05)
        assert not relative.passed

    def test_zero_mean(self):
        with pytest.raises(ZeroMeanRelative):
            assess(0.2, 0.0, 0.1, "relative")

    def test_bad_arguments(self):
        with pytest.raises(InvalidParams):
            assess(0.2, 1.0, 0.0)
        with pytest.raises(InvalidParams):
            assess(0.2, 1.0, 0.1, "percent")


class TestStress:
    def test_whole_model_curve(self):
        etas = [0.0, 0.5, 2.0]
        results = stress_test(_make_model(), QuantityOfInterest.affine(1), etas)
        assert [r.plus_value for r in results] == approx([math.sqrt(10.0 * e) for e in etas])

    def test_vertex_curve_is_monotone(self):
        results = stress_test(_make_chain(), QuantityOfInterest.affine(2), np.linspace(0, 2, 9), vertex=1)
        values = [r.plus_value for r in results]
        assert values == sorted(values)
        assert all(r.vertex == 1 for r in results)


class TestCorrectability:
    def test_mean_zero_noise_replacement(self):
        P = _make_chain()
        P_tilde = P.replace_cpd(1, with_noise(P.cpds[1], two_point_noise(0.6)))
        budget = MisspecificationBudget(global_eta=0.4)
        report = correctability_check(P, P_tilde, QuantityOfInterest.affine(2), budget,
                                      verify_unchanged=True)
        assert report.case == "gaussian_mean_zero"
        assert report.unchanged == {0, 2}
        assert report.recheck == frozenset()
        # untouched vertices keep bit-identical indices
        assert report.verified == {0: 0.0, 2: 0.0}
        assert 1 in report.deltas

    @pytest.mark.parametrize("seed", range(50))
    def test_mean_zero_replacement_on_random_models(self, seed):
        P = _make_random_model(seed)
        k = P.vertex_count - 1
        qoi = QuantityOfInterest.affine(k, 1.0, 5.0)
        l = int(np.random.default_rng(seed + 1000).integers(k + 1))
        P_tilde = P.replace_cpd(l, with_noise(P.cpds[l], two_point_noise(P.cpds[l].noise_sd)))
        report = correctability_check(P, P_tilde, qoi, MisspecificationBudget(global_eta=0.3),
                                      verify_unchanged=True)
        assert report.case == "gaussian_mean_zero"
        assert report.unchanged == set(range(k + 1)) - {l}
        assert all(delta == 0.0 for delta in report.verified.values())
        mean_before, mean_after = qoi_mean(P, qoi), qoi_mean(P_tilde, qoi)
        for v in report.unchanged:
            before = assess(report.before[v].plus.value, mean_before, 0.1, "relative")
            after = assess(report.after[v].plus.value, mean_after, 0.1, "relative")
            assert before.ratio == after.ratio

    def test_general_replacement_rechecks_descendants(self):
        P = _make_chain()
        P_tilde = P.replace_cpd(1, LinearGaussianCPD((0,), 2.0, (0.8,), 0.3))
        budget = MisspecificationBudget(global_eta=0.4)
        report = correctability_check(P, P_tilde, QuantityOfInterest.affine(2), budget)
        assert report.case == "general_descendants"
        assert report.unchanged == {0}
        assert report.recheck == {2}
        # smaller noise at b lowers its own index
        assert report.deltas[1] < 0

    def test_no_change(self):
        P = _make_chain()
        report = correctability_check(P, P, QuantityOfInterest.affine(2), MisspecificationBudget(global_eta=0.1))
        assert report.corrected is None
        assert report.unchanged == {0, 1, 2}

    def test_structure_and_multi_vertex_errors(self):
        P = _make_chain()
        budget = MisspecificationBudget(global_eta=0.1)
        with pytest.raises(StructureMismatch):
            correctability_check(P, P.replace_cpd(2, LinearGaussianCPD((0, 1), 0.0, (1.0, 1.0), 1.0)),
                                 QuantityOfInterest.affine(2), budget)
        two = P.replace_cpd(0, LinearGaussianCPD((), 0.0, (), 2.0)).replace_cpd(
            1, LinearGaussianCPD((0,), 0.0, (0.8,), 0.6))
        with pytest.raises(MultiVertexDiff):
            correctability_check(P, two, QuantityOfInterest.affine(2), budget)

    def test_improvement_delta(self):
        P = _make_chain()
        qoi = QuantityOfInterest.affine(2)
        before = sensitivity_index(P, qoi, 1, 0.4)
        after = sensitivity_index(P.replace_cpd(1, LinearGaussianCPD((0,), 0.5, (0.8,), 0.3)), qoi, 1, 0.4)
        assert improvement_delta(before, after) == approx(after.plus_value - before.plus_value)
        other = sensitivity_index(P, qoi, 0, 0.4)
        with pytest.raises(MismatchedAmbiguity):
            improvement_delta(before, other)
        fixed = sensitivity_index(P, qoi, 1, 0.4, "D_lP")
        with pytest.raises(MismatchedAmbiguity):
            improvement_delta(before, fixed)
