"""
Divergences
Relative entropy between densities and between Bayesian networks, and
data-informed misspecification budgets
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from engine.bn_core import (
    DirectedGraphModel,
    enumerate_joint,
    gaussian_joint_moments,
    is_enumerable,
    is_linear_gaussian,
    sample,
)
from engine.cpd_models import (
    ConditionalDensity,
    HistogramDensity,
    KernelDensity,
    LinearAdditiveCPD,
    LinearGaussianCPD,
    fit_histogram,
    fit_kde,
)
from utils.config import DEFAULT_SEED, MC_SAMPLES
from utils.errors import (
    DegenerateReference,
    DimensionMismatch,
    InvalidParams,
    MultiVertexDiff,
    NonGaussianModel,
    StructureMismatch,
    UnsupportedCPDFamily,
)

logger = logging.getLogger(__name__)

PANEL_NODES = 16
QUADRATURE_REL_TOL = 1e-6
QUADRATURE_MAX_NODES = 1 << 16
# Quadrature window half-width in reference standard deviations
SUPPORT_WIDTH_SD = 10.0


@dataclass(frozen=True)
class DivergenceEstimate:
    """A KL value; +inf values are saturated with the reason in diagnostics"""

    value: float
    saturated: bool = False
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


@dataclass
class MisspecificationBudget:
    """Per-vertex ambiguity radii with an optional global fallback"""

    per_vertex: Dict[int, float] = field(default_factory=dict)
    global_eta: Optional[float] = None
    provenance: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        for vertex, eta in self.per_vertex.items():
            if not (eta >= 0):
                raise InvalidParams(f"eta for vertex {vertex} must be >= 0, got {eta}")
        if self.global_eta is not None and not self.global_eta >= 0:
            raise InvalidParams(f"Global eta must be >= 0, got {self.global_eta}")

    def eta_for(self, vertex: int) -> Optional[float]:
        if vertex in self.per_vertex:
            return self.per_vertex[vertex]
        return self.global_eta

    def set(self, vertex: int, eta: float, provenance: str = "user_set"):
        if not eta >= 0:
            raise InvalidParams(f"eta for vertex {vertex} must be >= 0, got {eta}")
        self.per_vertex[vertex] = float(eta)
        self.provenance[vertex] = provenance


@dataclass
class ChainRuleDecomposition:
    per_vertex_terms: Dict[int, float]
    total: float
    backends: Dict[int, str] = field(default_factory=dict)
    violations: Tuple[int, ...] = ()


# ==================== CLOSED FORMS ====================

def kl_gaussian(q_mean: float, q_sd: float, p_mean: float, p_sd: float) -> float:
    """KL(N(q_mean, q_sd^2) || N(p_mean, p_sd^2))"""
    if p_sd <= 0:
        raise DegenerateReference(f"Reference sd must be > 0, got {p_sd}")
    if q_sd < 0:
        raise InvalidParams(f"sd must be >= 0, got {q_sd}")
    if q_sd == 0:
        return math.inf
    return (math.log(p_sd / q_sd)
            + (q_sd ** 2 + (q_mean - p_mean) ** 2) / (2 * p_sd ** 2) - 0.5)


# ==================== QUADRATURE ====================

def _log_density_fn(density) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(density, "logpdf"):
        return density.logpdf
    return density


def _panel_edges(lo: float, hi: float, breakpoints: Optional[Sequence[float]], per_segment: int) -> np.ndarray:
    cuts = [lo, hi]
    if breakpoints is not None:
        cuts.extend(b for b in np.asarray(breakpoints, dtype=float) if lo < b < hi)
    cuts = np.unique(cuts)
    pieces = [np.linspace(a, b, per_segment + 1)[:-1] for a, b in zip(cuts[:-1], cuts[1:])]
    return np.append(np.concatenate(pieces), hi)


def _composite_rule(edges: np.ndarray, ref_nodes: np.ndarray, ref_weights: np.ndarray):
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * ref_nodes[None, :]).ravel()
    weights = (half[:, None] * ref_weights[None, :]).ravel()
    return nodes, weights


def kl_density_quadrature(q, p, support: Tuple[float, float],
                          nodes: int = PANEL_NODES,
                          breakpoints: Optional[Sequence[float]] = None,
                          rel_tol: float = QUADRATURE_REL_TOL,
                          max_nodes: int = QUADRATURE_MAX_NODES) -> DivergenceEstimate:
    """
    Integral of q log(q/p) over a finite interval by composite Gauss-Legendre.

    Panels double until the relative change drops below rel_tol or the node cap
    is hit. Breakpoints (e.g. histogram edges) always fall on panel boundaries.
    """
    lo, hi = float(support[0]), float(support[1])
    if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
        raise InvalidParams(f"Quadrature support must be a finite interval, got {support}")
    log_q, log_p = _log_density_fn(q), _log_density_fn(p)
    ref_nodes, ref_weights = leggauss(int(nodes))

    previous = None
    per_segment = 1
    history = []
    while True:
        x, w = _composite_rule(_panel_edges(lo, hi, breakpoints, per_segment), ref_nodes, ref_weights)
        lq = np.asarray(log_q(x), dtype=float)
        lp = np.asarray(log_p(x), dtype=float)
        mass = np.isfinite(lq)
        if np.any(mass & ~np.isfinite(lp)):
            where = float(x[mass & ~np.isfinite(lp)][0])
            logger.warning("KL saturated: q > 0 where p = 0 (first at x=%.6g)", where)
            return DivergenceEstimate(math.inf, True, {"reason": "SupportViolation", "x": where})
        integrand = np.where(mass, np.exp(np.where(mass, lq, 0.0)) * (np.where(mass, lq, 0.0) - lp), 0.0)
        value = float(integrand @ w)
        history.append(value)
        if previous is not None:
            change = abs(value - previous)
            if change <= rel_tol * abs(value) or change <= 1e-14:
                break
        if x.size * 2 > max_nodes:
            logger.warning("Quadrature hit the %d node cap before converging", max_nodes)
            break
        previous = value
        per_segment *= 2
    return DivergenceEstimate(max(value, 0.0), False,
                              {"nodes": int(x.size), "refinements": len(history)})


def _density_support(density: ConditionalDensity) -> Tuple[float, float]:
    if isinstance(density, KernelDensity):
        pad = SUPPORT_WIDTH_SD * density.bandwidth
        return float(density.points.min() - pad), float(density.points.max() + pad)
    return tuple(getattr(density, "support", (-np.inf, np.inf)))


def _reference_noise(baseline: ConditionalDensity) -> Tuple[ConditionalDensity, float]:
    """(reference density for the residuals, shift applied to raw data)"""
    if isinstance(baseline, LinearGaussianCPD):
        if baseline.noise_sd == 0:
            raise DegenerateReference("Baseline noise sd is zero")
        shift = baseline.intercept if not baseline.parents else 0.0
        return baseline.noise_density(), shift
    if isinstance(baseline, LinearAdditiveCPD):
        return baseline.noise, baseline.intercept if not baseline.parents else 0.0
    if baseline.is_deterministic or baseline.parents:
        raise UnsupportedCPDFamily(
            f"Cannot estimate eta against a {baseline.kind} CPD with parents; set eta explicitly"
        )
    return baseline, 0.0


def eta_from_samples(baseline_cpd: ConditionalDensity, residual_samples: Sequence[float],
                     density_model: str = "kde",
                     bins_or_bandwidth: Optional[float] = None) -> DivergenceEstimate:
    """
    KL(data density || baseline noise density) for a vertex.

    For additive-noise CPDs the conditional KL does not depend on the parent
    configuration, so this is also the supremum over parents. Parentless
    baselines with an intercept take raw observations, which are shifted by the
    intercept first.
    """
    reference, shift = _reference_noise(baseline_cpd)
    values = np.asarray(residual_samples, dtype=float).ravel() - shift
    if density_model == "kde":
        data_density = fit_kde(values, bins_or_bandwidth)
    elif density_model in ("hist", "histogram"):
        bins = int(bins_or_bandwidth) if bins_or_bandwidth else min(2000, int(np.ceil(np.sqrt(values.size))))
        data_density = fit_histogram(values, bins)
    else:
        raise InvalidParams(f"Unknown density model {density_model!r} (use kde or hist)")

    centre = reference.mean_value
    spread = reference.std_value
    if not spread > 0:
        raise DegenerateReference("Baseline noise has zero spread")
    lo, hi = centre - SUPPORT_WIDTH_SD * spread, centre + SUPPORT_WIDTH_SD * spread
    data_lo, data_hi = _density_support(data_density)
    ref_lo, ref_hi = _density_support(reference)
    lo, hi = max(lo, data_lo, ref_lo), min(hi, data_hi, ref_hi)
    if not hi > lo:
        # data lives entirely outside the reference window
        return DivergenceEstimate(math.inf, True, {"reason": "SupportViolation"})

    breaks = []
    for density in (data_density, reference):
        if isinstance(density, HistogramDensity):
            breaks.extend(density.edges)
    estimate = kl_density_quadrature(data_density, reference, (lo, hi), breakpoints=breaks or None)
    logger.info("Data-estimated eta (%s, n=%d): %.6g", density_model, values.size, estimate.value)
    estimate.diagnostics.update({"density_model": density_model, "samples": int(values.size)})
    return estimate


# ==================== CHAIN RULE ====================

def _closed_form_term(q_cpd: LinearGaussianCPD, p_cpd: LinearGaussianCPD,
                      mean: np.ndarray, cov: np.ndarray) -> float:
    """E_Q[KL(q_i(.|x) || p_i(.|x))] with Q's joint Gaussian moments"""
    w = np.zeros(len(mean))
    if q_cpd.parents:
        w[list(q_cpd.parents)] += q_cpd.coefficients
    if p_cpd.parents:
        w[list(p_cpd.parents)] -= p_cpd.coefficients
    delta0 = q_cpd.intercept - p_cpd.intercept
    mean_sq = (delta0 + w @ mean) ** 2 + w @ cov @ w
    if p_cpd.noise_sd == 0:
        return 0.0 if q_cpd.noise_sd == 0 and mean_sq <= 1e-24 else math.inf
    if q_cpd.noise_sd == 0:
        return math.inf
    return (math.log(p_cpd.noise_sd / q_cpd.noise_sd)
            + (q_cpd.noise_sd ** 2 + mean_sq) / (2 * p_cpd.noise_sd ** 2) - 0.5)


def _expected_log_ratio(q_cpd, p_cpd, points: np.ndarray, weights: np.ndarray, i: int) -> float:
    lq = q_cpd.log_density(points[:, i], points[:, list(q_cpd.parents)])
    lp = p_cpd.log_density(points[:, i], points[:, list(p_cpd.parents)])
    live = (weights > 0) & np.isfinite(lq)
    if np.any(live & ~np.isfinite(lp)):
        return math.inf
    return float(np.sum(weights[live] * (lq[live] - lp[live])))


def kl_chain_rule(Q: DirectedGraphModel, P: DirectedGraphModel,
                  mc_samples: int = MC_SAMPLES, seed: int = DEFAULT_SEED) -> ChainRuleDecomposition:
    """KL(Q || P) as a sum of expected per-vertex conditional KLs under Q"""
    if Q.vertex_count != P.vertex_count:
        raise DimensionMismatch(f"Q has {Q.vertex_count} vertices, P has {P.vertex_count}")
    differing = [i for i in range(Q.vertex_count) if Q.cpds[i] != P.cpds[i]]
    terms = {i: 0.0 for i in range(Q.vertex_count)}
    backends = {i: "identical" for i in range(Q.vertex_count)}

    moments = enumeration = draws = None
    for i in differing:
        q_cpd, p_cpd = Q.cpds[i], P.cpds[i]
        if is_linear_gaussian(Q) and isinstance(p_cpd, LinearGaussianCPD):
            if moments is None:
                moments = gaussian_joint_moments(Q)
            terms[i] = _closed_form_term(q_cpd, p_cpd, moments.mean, moments.covariance)
            backends[i] = "closed_form"
        elif is_enumerable(Q):
            if enumeration is None:
                enumeration = enumerate_joint(Q)
            configs, probs = enumeration
            terms[i] = _expected_log_ratio(q_cpd, p_cpd, configs, probs, i)
            backends[i] = "exact_enumeration"
        else:
            if draws is None:
                draws = sample(Q, mc_samples, seed)
            weights = np.full(len(draws), 1.0 / len(draws))
            terms[i] = _expected_log_ratio(q_cpd, p_cpd, draws, weights, i)
            backends[i] = "monte_carlo"

    violations = tuple(i for i in differing if terms[i] == math.inf)
    for i in violations:
        logger.warning("Q is not absolutely continuous w.r.t. P at vertex %s", Q.graph.label(i))
    total = math.fsum(terms[i] for i in range(Q.vertex_count))
    return ChainRuleDecomposition(terms, total, backends, violations)


def eta_solvation_edge(P: DirectedGraphModel, Q: DirectedGraphModel) -> float:
    """KL(Q || P) where Q differs from P only by extra parents of one vertex"""
    if Q.vertex_count != P.vertex_count:
        raise DimensionMismatch(f"Q has {Q.vertex_count} vertices, P has {P.vertex_count}")
    differing = [i for i in range(Q.vertex_count) if Q.cpds[i] != P.cpds[i]]
    if not differing:
        return 0.0
    if len(differing) > 1:
        raise MultiVertexDiff(
            f"Q differs from P at {len(differing)} vertices",
            {"vertices": [P.graph.label(i) for i in differing]},
        )
    target = differing[0]
    if not set(P.cpds[target].parents) <= set(Q.cpds[target].parents):
        raise StructureMismatch(f"Q must only add parents to vertex {P.graph.label(target)}")
    if not is_linear_gaussian(Q) or not isinstance(P.cpds[target], LinearGaussianCPD):
        raise NonGaussianModel("Solvation-edge eta needs linear-Gaussian CPDs")
    return kl_chain_rule(Q, P).per_vertex_terms[target]
