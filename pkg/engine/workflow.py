"""
Uncertainty Workflow
Misspecification budgets, component ranking, tolerance assessment and
correctability checks
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from engine.bn_core import DirectedGraphModel, descendants
from engine.cpd_models import LinearGaussianCPD
from engine.divergences import MisspecificationBudget, eta_from_samples
from engine.indices import (
    IndexResult,
    QuantityOfInterest,
    paths_linear,
    model_uncertainty_index,
    qoi_ancestors,
    qoi_mean,
    sensitivity_index,
)
from utils.config import MonteCarloConfig
from utils.errors import (
    InvalidParams,
    MismatchedAmbiguity,
    MissingBudget,
    ModelUncertaintyError,
    MultiVertexDiff,
    StructureMismatch,
    UnsupportedCPDFamily,
    ZeroMeanRelative,
)

logger = logging.getLogger(__name__)

TOL_MODES = ("absolute", "relative")


# ==================== BUDGETS ====================

def build_budget(model: DirectedGraphModel,
                 data_per_vertex: Optional[Mapping[int, Sequence[float]]] = None,
                 user_overrides: Optional[Mapping[int, float]] = None,
                 density_model: str = "kde",
                 bins_or_bandwidth: Optional[float] = None,
                 fallback_eta: Optional[float] = None) -> MisspecificationBudget:
    """
    One eta per stochastic vertex. Overrides win over data; data vertices get
    KL(data density || baseline noise); anything left takes fallback_eta.
    Deterministic vertices are skipped.
    """
    data_per_vertex = dict(data_per_vertex or {})
    user_overrides = dict(user_overrides or {})
    budget = MisspecificationBudget(global_eta=None)
    missing = []
    for v in model.stochastic_vertices():
        label = model.graph.label(v)
        if v in user_overrides:
            budget.set(v, float(user_overrides[v]), "user_set")
            continue
        if v in data_per_vertex:
            try:
                estimate = eta_from_samples(model.cpds[v], data_per_vertex[v],
                                            density_model, bins_or_bandwidth)
            except UnsupportedCPDFamily as e:
                logger.warning("No data-estimated eta for %s: %s", label, e.message)
            else:
                if estimate.saturated:
                    logger.warning("Data for %s lies outside the baseline support; eta is infinite", label)
                budget.set(v, float(estimate), "data_estimated")
                continue
        if fallback_eta is not None:
            budget.set(v, float(fallback_eta), "user_set")
            continue
        missing.append(label)
    if missing:
        raise MissingBudget(f"No eta for stochastic vertices {missing}", {"vertices": missing})
    return budget


# ==================== RANKING ====================

@dataclass
class RankingEntry:
    vertex: int
    eta: Optional[float]
    index: Optional[IndexResult] = None
    share: float = 0.0
    relative: Optional[float] = None
    error: Optional[Dict[str, Any]] = None

    @property
    def i_plus(self) -> Optional[float]:
        return None if self.index is None else self.index.plus.value


@dataclass
class Assessment:
    passed: bool
    ratio: float
    mode: str
    tol: float


@dataclass
class RankingReport:
    entries: List[RankingEntry]
    qoi_mean: Optional[float]
    degenerate: bool = False
    assessments: Dict[int, Assessment] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def ordered_vertices(self) -> List[int]:
        return [e.vertex for e in self.entries]

    def shares(self) -> Dict[int, float]:
        return {e.vertex: e.share for e in self.entries}


def _rank_one(model, qoi, v, eta, mc, ambiguity, jensen) -> RankingEntry:
    try:
        result = sensitivity_index(model, qoi, v, eta, ambiguity, mc, jensen)
    except ModelUncertaintyError as e:
        logger.warning("Index for %s failed: %s", model.graph.label(v), e.message)
        return RankingEntry(v, eta, error=e.to_dict())
    return RankingEntry(v, eta, result)


def rank_components(model: DirectedGraphModel, qoi: QuantityOfInterest,
                    budget: MisspecificationBudget,
                    mc_config: Optional[MonteCarloConfig] = None,
                    ambiguity: str = "D_l", jensen: bool = False,
                    tol: Optional[float] = None, tol_mode: str = "relative") -> RankingReport:
    """
    I+ for every stochastic vertex, ordered by I+ descending (ties by vertex id),
    with shares I+_l / sum_j I+_j. Vertices outside the QoI's ancestors get 0.
    """
    mc = mc_config or MonteCarloConfig.from_env()
    relevant = qoi_ancestors(model, qoi)
    jobs = []
    missing = []
    for v in model.stochastic_vertices():
        eta = budget.eta_for(v)
        if eta is None:
            if v in relevant:
                missing.append(model.graph.label(v))
                continue
            eta = 0.0
        jobs.append((v, eta))
    if missing:
        raise MissingBudget(f"No eta for QoI ancestors {missing}", {"vertices": missing})

    if mc.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=mc.threads) as pool:
            entries = list(pool.map(lambda job: _rank_one(model, qoi, job[0], job[1], mc, ambiguity, jensen), jobs))
    else:
        entries = [_rank_one(model, qoi, v, eta, mc, ambiguity, jensen) for v, eta in jobs]

    mean = qoi_mean(model, qoi, mc)
    scored = [e for e in entries if e.index is not None]
    failed = [e for e in entries if e.index is None]
    total = math.fsum(e.i_plus for e in scored)
    degenerate = not total > 0
    for e in scored:
        e.share = 0.0 if degenerate else e.i_plus / total
        e.relative = e.i_plus / abs(mean) if mean != 0 else None
    scored.sort(key=lambda e: (-e.i_plus, e.vertex))
    report = RankingReport(scored + failed, mean, degenerate,
                           diagnostics={"failed": [model.graph.label(e.vertex) for e in failed]})
    if degenerate:
        logger.warning("All indices are zero; ranking is degenerate")
    if tol is not None:
        for e in scored:
            report.assessments[e.vertex] = assess(e.i_plus, mean, tol, tol_mode)
    logger.info("Ranked %d components for %s", len(scored), qoi.name)
    return report


def assess(index: float, qoi_mean: float, tol: float, mode: str = "relative") -> Assessment:
    """absolute: index <= tol; relative: index / |qoi_mean| <= tol"""
    if not tol > 0:
        raise InvalidParams(f"tol must be > 0, got {tol}")
    if mode not in TOL_MODES:
        raise InvalidParams(f"tol mode must be one of {TOL_MODES}, got {mode!r}")
    if mode == "absolute":
        ratio = index
    else:
        if qoi_mean == 0:
            raise ZeroMeanRelative("Relative tolerance needs a nonzero QoI mean")
        ratio = index / abs(qoi_mean)
    return Assessment(ratio <= tol, ratio, mode, tol)


def stress_test(model: DirectedGraphModel, qoi: QuantityOfInterest, etas: Iterable[float],
                vertex: Optional[int] = None, mc_config: Optional[MonteCarloConfig] = None,
                ambiguity: str = "D_l", jensen: bool = False) -> List[IndexResult]:
    """Indices over an eta grid: whole model, or one vertex when given"""
    results = []
    for eta in etas:
        if vertex is None:
            results.append(model_uncertainty_index(model, qoi, eta, mc_config))
        else:
            results.append(sensitivity_index(model, qoi, vertex, eta, ambiguity, mc_config, jensen))
    return results


# ==================== CORRECTABILITY ====================

@dataclass
class CorrectabilityReport:
    corrected: Optional[int]
    unchanged: frozenset
    recheck: frozenset
    case: str
    before: Dict[int, IndexResult] = field(default_factory=dict)
    after: Dict[int, IndexResult] = field(default_factory=dict)
    deltas: Dict[int, float] = field(default_factory=dict)
    verified: Dict[int, float] = field(default_factory=dict)


def _same_structure(P: DirectedGraphModel, P_tilde: DirectedGraphModel) -> bool:
    return (P.vertex_count == P_tilde.vertex_count
            and P.graph.edges == P_tilde.graph.edges)


def _mean_zero_replacement(P: DirectedGraphModel, P_tilde: DirectedGraphModel, l: int) -> bool:
    """P linear-Gaussian at l and P_tilde keeps the mean structure with a mean-zero noise"""
    old, new = P.cpds[l], P_tilde.cpds[l]
    if not isinstance(old, LinearGaussianCPD) or not new.is_linear:
        return False
    if new.intercept != old.intercept or tuple(new.coefficients) != tuple(old.coefficients):
        return False
    return abs(new.noise_mean) <= 1e-12 * max(1.0, abs(old.intercept))


def correctability_check(P: DirectedGraphModel, P_tilde: DirectedGraphModel,
                         qoi: QuantityOfInterest, budget: MisspecificationBudget,
                         mc_config: Optional[MonteCarloConfig] = None,
                         budget_after: Optional[MisspecificationBudget] = None,
                         verify_unchanged: bool = False) -> CorrectabilityReport:
    """
    Which sensitivity indices can change when one CPD is replaced.

    A mean-zero noise replacement in a linear model leaves every other vertex's
    index untouched. Otherwise the descendants of the corrected vertex among the
    QoI ancestors are recomputed.
    """
    if not _same_structure(P, P_tilde):
        raise StructureMismatch("Corrected model must keep the graph of the baseline")
    differing = [i for i in range(P.vertex_count) if P.cpds[i] != P_tilde.cpds[i]]
    if len(differing) > 1:
        raise MultiVertexDiff(
            f"Corrected model differs at {len(differing)} vertices",
            {"vertices": [P.graph.label(i) for i in differing]},
        )
    relevant = qoi_ancestors(P, qoi)
    budget_after = budget_after or budget
    if not differing:
        return CorrectabilityReport(None, frozenset(relevant), frozenset(), "general_descendants")

    l_star = differing[0]
    linear = qoi.is_affine and paths_linear(P_tilde, qoi.vertex, l_star) \
        if l_star in relevant else False
    if linear and _mean_zero_replacement(P, P_tilde, l_star):
        case = "gaussian_mean_zero"
        unchanged = frozenset(relevant - {l_star})
        recheck = frozenset()
    else:
        case = "general_descendants"
        downstream = descendants(P.graph, l_star) & relevant
        unchanged = frozenset(relevant - {l_star} - downstream)
        recheck = frozenset(downstream)

    report = CorrectabilityReport(l_star, unchanged, recheck, case)
    stochastic = set(P.stochastic_vertices())
    targets = [v for v in sorted(recheck | {l_star}) if v in relevant and v in stochastic]
    if verify_unchanged:
        targets += [v for v in sorted(unchanged) if v in stochastic]
    for v in targets:
        eta_before, eta_after = budget.eta_for(v), budget_after.eta_for(v)
        if eta_before is None or eta_after is None:
            raise MissingBudget(f"No eta for vertex {P.graph.label(v)}")
        report.before[v] = sensitivity_index(P, qoi, v, eta_before, "D_l", mc_config)
        report.after[v] = sensitivity_index(P_tilde, qoi, v, eta_after, "D_l", mc_config)
        delta = improvement_delta(report.before[v], report.after[v])
        if v in unchanged:
            report.verified[v] = delta
        else:
            report.deltas[v] = delta
    logger.info("Correctability of %s: %s, %d unchanged, %d to recheck",
                P.graph.label(l_star), case, len(unchanged), len(recheck))
    return report


def improvement_delta(before: IndexResult, after: IndexResult) -> float:
    """after.plus - before.plus; negative means the correction helped"""
    if before.ambiguity != after.ambiguity or before.vertex != after.vertex:
        raise MismatchedAmbiguity(
            "Index results refer to different ambiguity sets or vertices",
            {"before": [before.ambiguity, before.vertex], "after": [after.ambiguity, after.vertex]},
        )
    return after.plus.value - before.plus.value
