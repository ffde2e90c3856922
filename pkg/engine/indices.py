"""
Model Uncertainty Indices
Whole-model and per-vertex sensitivity indices over KL ambiguity sets,
Gaussian closed forms, effective coefficients and optimizer networks
"""

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from engine.bn_core import (
    DirectedGraphModel,
    ancestors,
    closed_ancestors,
    cond_indep_given_parents,
    descendants,
    directed_paths,
    enumerate_joint,
    gaussian_joint_moments,
    is_enumerable,
    is_linear_gaussian,
    sample,
)
from engine.cpd_models import (
    FiniteDiscreteCPD,
    GammaCPD,
    LinearAdditiveCPD,
    LinearGaussianCPD,
)
from engine.tilt_optimizer import (
    AveragedCGF,
    CGFHandle,
    DiscreteCGF,
    GammaCGF,
    GaussianCGF,
    SampleCGF,
    TiltSolution,
    solve_index,
)
from utils.config import MonteCarloConfig
from utils.errors import (
    InvalidParams,
    InvalidVertex,
    MGFNonexistent,
    NonGaussianModel,
    NotAncestor,
    UnsupportedFamily,
)
from utils.expression import parse_expression

logger = logging.getLogger(__name__)

BACKENDS = ("auto", "gaussian_closed_form", "exact_enumeration", "monte_carlo")
AMBIGUITY_SETS = {
    "whole_model": "whole_model",
    "D_l": "vertex_free_parents",
    "D_lP": "vertex_fixed_parents",
}

# Builtin QoI name -> vertex label carrying it
BUILTIN_QOIS = {"xstar": "xstar"}


# ==================== QUANTITY OF INTEREST ====================

@dataclass(frozen=True)
class QuantityOfInterest:
    """f(X_A): affine a*X_k + b on one vertex, or an expression over vertex labels"""

    vertices: Tuple[int, ...]
    form: str = "affine"
    slope: float = 1.0
    offset: float = 0.0
    expression: Optional[str] = None
    names: Tuple[str, ...] = ()
    name: str = ""

    @classmethod
    def affine(cls, k: int, a: float = 1.0, b: float = 0.0, name: str = "") -> "QuantityOfInterest":
        return cls((int(k),), "affine", float(a), float(b), name=name or f"X{k}")

    @property
    def is_affine(self) -> bool:
        return self.expression is None

    @property
    def vertex(self) -> int:
        if len(self.vertices) != 1:
            raise InvalidParams(f"QoI {self.name!r} spans {len(self.vertices)} vertices")
        return self.vertices[0]

    def evaluate(self, samples: np.ndarray) -> np.ndarray:
        samples = np.atleast_2d(samples)
        if self.is_affine:
            return self.slope * samples[:, self.vertices[0]] + self.offset
        env = {name: samples[:, v] for name, v in zip(self.names, self.vertices)}
        values = parse_expression(self.expression).evaluate(env)
        return np.broadcast_to(np.asarray(values, dtype=float), (samples.shape[0],)).astype(float)

    def scaled(self, factor: float) -> "QuantityOfInterest":
        if not self.is_affine:
            raise InvalidParams("Only affine QoIs can be rescaled")
        return QuantityOfInterest(self.vertices, self.form, self.slope * factor,
                                  self.offset * factor, name=self.name)


def resolve_qoi(model: DirectedGraphModel, text: str, slope: float = 1.0,
                offset: float = 0.0) -> QuantityOfInterest:
    """Vertex label, builtin name or expression over vertex labels"""
    labels = model.labels
    text = text.strip()
    if text in labels:
        return QuantityOfInterest((labels.index(text),), "affine", slope, offset, name=text)
    if text in BUILTIN_QOIS and BUILTIN_QOIS[text] in labels:
        return QuantityOfInterest((labels.index(BUILTIN_QOIS[text]),), "builtin", slope, offset, name=text)
    ast = parse_expression(text)
    unknown = sorted(ast.variables - set(labels))
    if unknown:
        raise InvalidVertex(f"QoI expression refers to unknown vertices {unknown}", {"names": unknown})
    names = tuple(sorted(ast.variables))
    vertices = tuple(labels.index(n) for n in names)
    return QuantityOfInterest(vertices, "expression", expression=text, names=names, name=text)


def _as_qoi(qoi: Union[QuantityOfInterest, int]) -> QuantityOfInterest:
    if isinstance(qoi, QuantityOfInterest):
        return qoi
    return QuantityOfInterest.affine(int(qoi))


def qoi_ancestors(model: DirectedGraphModel, qoi: QuantityOfInterest) -> frozenset:
    closure = frozenset()
    for k in qoi.vertices:
        closure |= closed_ancestors(model.graph, k)
    return closure


# ==================== RESULTS ====================

@dataclass
class IndexResult:
    plus: TiltSolution
    minus: TiltSolution
    ambiguity: str
    tight: bool
    backend: str
    vertex: Optional[int] = None
    eta: float = 0.0
    jensen: bool = False
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def plus_value(self) -> float:
        return self.plus.value

    @property
    def minus_value(self) -> float:
        return self.minus.value

    @property
    def lower_bound(self) -> bool:
        return self.plus.lower_bound or self.minus.lower_bound

    def to_dict(self, labels: Optional[Sequence[str]] = None) -> Dict[str, Any]:
        vertex = self.vertex
        if vertex is not None and labels is not None:
            vertex = labels[vertex]
        return {
            "vertex": vertex,
            "eta": self.eta,
            "i_plus": self.plus.value,
            "i_minus": self.minus.value,
            "ambiguity": self.ambiguity,
            "tight": self.tight,
            "backend": self.backend,
            "jensen": self.jensen,
            "case_plus": self.plus.case,
            "case_minus": self.minus.case,
            "lower_bound": self.lower_bound,
        }


def _zero_solution() -> TiltSolution:
    return TiltSolution(0.0, 0.0, "interior", 0.0)


def _zero_result(ambiguity: str, backend: str, vertex: Optional[int], eta: float,
                 **diagnostics) -> IndexResult:
    return IndexResult(_zero_solution(), _zero_solution(), ambiguity, True, backend,
                       vertex, eta, diagnostics=dict(diagnostics))


def _check_eta(eta: float):
    if not (eta >= 0 and math.isfinite(eta)):
        raise InvalidParams(f"eta must be finite and >= 0, got {eta}")


def _check_backend(backend: str):
    if backend not in BACKENDS:
        raise InvalidParams(f"Unknown backend {backend!r}; expected one of {BACKENDS}")


def _child_seeds(seed: int, count: int) -> List[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def _solve_pair(handle: CGFHandle, eta: float) -> Tuple[TiltSolution, TiltSolution]:
    return solve_index(handle, eta, 1), solve_index(handle, eta, -1)


# ==================== WHOLE MODEL ====================

def _gaussian_applicable(model: DirectedGraphModel, qoi: QuantityOfInterest) -> bool:
    return qoi.is_affine and is_linear_gaussian(model)


def qoi_handle(model: DirectedGraphModel, qoi: QuantityOfInterest,
               mc: Optional[MonteCarloConfig] = None,
               backend: str = "auto") -> Tuple[CGFHandle, str]:
    """CGF handle of the centred QoI under P, with the backend that built it"""
    mc = mc or MonteCarloConfig.from_env()
    _check_backend(backend)
    if backend == "gaussian_closed_form" or (backend == "auto" and _gaussian_applicable(model, qoi)):
        if not _gaussian_applicable(model, qoi):
            raise NonGaussianModel("Gaussian backend needs a linear-Gaussian model and an affine QoI")
        moments = gaussian_joint_moments(model)
        k = qoi.vertex
        return GaussianCGF(qoi.slope ** 2 * moments.covariance[k, k]), "gaussian_closed_form"
    if backend == "exact_enumeration" or (backend == "auto" and is_enumerable(model)):
        configs, probs = enumerate_joint(model)
        return DiscreteCGF(qoi.evaluate(configs), probs), "exact_enumeration"
    draws = sample(model, mc.samples, mc.seed, restrict_to=qoi.vertices, threads=mc.threads)
    f = qoi.evaluate(draws)
    if not np.all(np.isfinite(f)):
        raise MGFNonexistent("QoI takes non-finite values on forward samples")
    return SampleCGF(f, mc.ess_threshold, mc.seed), "monte_carlo"


def qoi_mean(model: DirectedGraphModel, qoi: QuantityOfInterest,
             mc: Optional[MonteCarloConfig] = None) -> float:
    """E_P[f]: exact for linear and enumerable models, Monte-Carlo otherwise"""
    mc = mc or MonteCarloConfig.from_env()
    qoi = _as_qoi(qoi)
    ancestral = sorted(qoi_ancestors(model, qoi))
    if qoi.is_affine and all(model.cpds[v].is_linear for v in ancestral):
        return qoi.slope * float(_linear_mean_subset(model, ancestral)[qoi.vertex]) + qoi.offset
    if is_enumerable(model):
        configs, probs = enumerate_joint(model)
        return float(probs @ qoi.evaluate(configs))
    draws = sample(model, mc.samples, mc.seed, restrict_to=qoi.vertices, threads=mc.threads)
    return float(np.mean(qoi.evaluate(draws)))


def _linear_mean_subset(model: DirectedGraphModel, vertices: Sequence[int]) -> Dict[int, float]:
    wanted = set(vertices)
    mean = {}
    for i in model.graph.order:
        if i not in wanted:
            continue
        cpd = model.cpds[i]
        mean[i] = cpd.intercept + cpd.noise_mean + sum(
            b * mean[p] for p, b in zip(cpd.parents, cpd.coefficients))
    return mean


def model_uncertainty_index(model: DirectedGraphModel, qoi: Union[QuantityOfInterest, int],
                            eta: float, mc_config: Optional[MonteCarloConfig] = None,
                            backend: str = "auto") -> IndexResult:
    """+-inf_{c>0} [Lambda(+-c)/c + eta/c] over the whole-model KL ball"""
    _check_eta(eta)
    qoi = _as_qoi(qoi)
    handle, used = qoi_handle(model, qoi, mc_config, backend)
    plus, minus = _solve_pair(handle, eta)
    diagnostics = {}
    if plus.case == "c_capped_mc" or minus.case == "c_capped_mc":
        diagnostics["heavy_tail_suspected"] = True
        logger.warning("Tilt capped for %s; the MGF may not exist near the optimum", qoi.name)
    logger.info("Whole-model index for %s at eta=%g: [%.6g, %.6g] (%s)",
                qoi.name, eta, minus.value, plus.value, used)
    return IndexResult(plus, minus, "whole_model", True, used, None, eta, diagnostics=diagnostics)


def gaussian_model_uncertainty_index(model: DirectedGraphModel, k: int, a: float, eta: float) -> IndexResult:
    """+-sqrt(2 a^2 C_kk eta) with optimal tilt sqrt(2 eta / (a^2 C_kk))"""
    _check_eta(eta)
    if not is_linear_gaussian(model):
        raise NonGaussianModel("Closed-form index needs a linear-Gaussian model")
    k = model.graph.check_vertex(k)
    variance = a * a * gaussian_joint_moments(model).covariance[k, k]
    plus, minus = _solve_pair(GaussianCGF(variance), eta)
    return IndexResult(plus, minus, "whole_model", True, "gaussian_closed_form", None, eta,
                       diagnostics={"variance": variance})


# ==================== OPTIMIZER NETWORK ====================

def optimizer_network(model: DirectedGraphModel, qoi: Union[QuantityOfInterest, int],
                      eta: float, sign: int = 1) -> DirectedGraphModel:
    """The network Q attaining the whole-model index (exponential tilt of P)"""
    _check_eta(eta)
    qoi = _as_qoi(qoi)
    if eta == 0:
        return model
    if _gaussian_applicable(model, qoi):
        return _gaussian_optimizer(model, qoi, eta, sign)
    if is_enumerable(model):
        return _discrete_optimizer(model, qoi, eta, sign)
    raise UnsupportedFamily("Optimizer networks need a linear-Gaussian or a finite-discrete model")


def _gaussian_optimizer(model, qoi, eta, sign) -> DirectedGraphModel:
    moments = gaussian_joint_moments(model)
    k = qoi.vertex
    solution = solve_index(GaussianCGF(qoi.slope ** 2 * moments.covariance[k, k]), eta, sign)
    if not math.isfinite(solution.tilt):
        return model
    # tilt by exp(t a x_k): covariance and regression weights stay, means shift by t a C[:, k]
    t = solution.tilt * qoi.slope
    shifted = moments.mean + t * moments.covariance[:, k]
    cpds = []
    for i, cpd in enumerate(model.cpds):
        parents = list(cpd.parents)
        beta = np.asarray(cpd.coefficients)
        intercept = shifted[i] - (beta @ shifted[parents] if parents else 0.0)
        cpds.append(LinearGaussianCPD(cpd.parents, intercept, cpd.coefficients, cpd.noise_sd))
    return DirectedGraphModel(model.graph, tuple(cpds))


def _optimizer_parents(model: DirectedGraphModel, qoi: QuantityOfInterest, i: int,
                       relevant: frozenset) -> Tuple[int, ...]:
    """pi_i plus earlier vertices the tilt weight E[exp(t f) | x_<=i] still depends on"""
    position = {v: n for n, v in enumerate(model.graph.order)}
    extra = set()
    for j in relevant:
        if position[j] >= position[i]:
            continue
        if j in qoi.vertices or any(
                c in relevant and position[c] >= position[i] for c in model.graph.children(j)):
            extra.add(j)
    return tuple(sorted(set(model.graph.parents(i)) | extra))


def _discrete_optimizer(model, qoi, eta, sign) -> DirectedGraphModel:
    configs, probs = enumerate_joint(model)
    f = qoi.evaluate(configs)
    solution = solve_index(DiscreteCGF(f, probs), eta, sign)
    if math.isfinite(solution.tilt):
        log_q = np.log(np.where(probs > 0, probs, 1.0)) + solution.tilt * f
        log_q = np.where(probs > 0, log_q, -np.inf)
        q = np.exp(log_q - log_q.max())
    else:
        # saturated: P conditioned on the extreme value of f
        top = np.isclose(sign * f, np.max(sign * f[probs > 0]), rtol=0, atol=1e-12)
        q = np.where(top, probs, 0.0)
    q /= q.sum()

    relevant = qoi_ancestors(model, qoi)
    cpds = list(model.cpds)
    for i in relevant:
        parents = _optimizer_parents(model, qoi, i, relevant)
        supports = [model.cpds[p].outcomes for p in parents]
        outcomes = model.cpds[i].outcomes
        rows = np.zeros(len(configs), dtype=int)
        for p, support in zip(parents, supports):
            rows = rows * len(support) + FiniteDiscreteCPD._lookup(support, configs[:, p])
        cols = FiniteDiscreteCPD._lookup(outcomes, configs[:, i])
        table = np.zeros((int(np.prod([len(s) for s in supports])), len(outcomes)))
        np.add.at(table, (rows, cols), q)
        mass = table.sum(axis=1, keepdims=True)
        table = np.where(mass > 0, table / np.where(mass > 0, mass, 1.0), 1.0 / len(outcomes))
        cpds[i] = FiniteDiscreteCPD(parents, outcomes, table, tuple(supports))
    return DirectedGraphModel.from_cpds(cpds, model.graph.vertex_labels)


# ==================== EFFECTIVE COEFFICIENTS ====================

@dataclass
class EffectiveCoefficient:
    value: float
    paths: List[Tuple[Tuple[int, ...], float]]


def _edge_coefficient(model: DirectedGraphModel, parent: int, child: int) -> float:
    cpd = model.cpds[child]
    return float(cpd.coefficients[cpd.parents.index(parent)])


def _path_vertices(model: DirectedGraphModel, k: int, l: int) -> frozenset:
    """Vertices strictly after l on some directed path l -> k"""
    return (descendants(model.graph, l) & closed_ancestors(model.graph, k)) - {l}


def paths_linear(model: DirectedGraphModel, k: int, l: int) -> bool:
    return all(model.cpds[v].is_linear for v in _path_vertices(model, k, l))


def effective_coefficient(model: DirectedGraphModel, k: int, l: int) -> EffectiveCoefficient:
    """Sum over directed paths l -> k of the product of edge coefficients"""
    graph = model.graph
    k, l = graph.check_vertex(k), graph.check_vertex(l)
    if l not in closed_ancestors(graph, k):
        raise NotAncestor(f"{graph.label(l)} is not an ancestor of {graph.label(k)}",
                          {"k": graph.label(k), "l": graph.label(l)})
    if not paths_linear(model, k, l):
        raise NonGaussianModel("Effective coefficients need linear CPDs along every path")
    on_path = _path_vertices(model, k, l)
    weight = {l: 1.0}
    for v in graph.order:
        if v in on_path:
            weight[v] = sum(_edge_coefficient(model, p, v) * weight[p]
                            for p in graph.parents(v) if p in weight)
    paths = []
    for path in directed_paths(graph, l, k):
        product = 1.0
        for parent, child in zip(path[:-1], path[1:]):
            product *= _edge_coefficient(model, parent, child)
        paths.append((path, product))
    return EffectiveCoefficient(weight.get(k, 0.0), paths)


# ==================== CONDITIONAL MEAN F ====================

class ConditionalMean:
    """
    F(x_l, x_rho_l) = E[f(X_A) | X_l = x_l, X_rho_l = x_rho_l].
    rho_l is an ancestral set, so the conditional law of the remaining vertices
    is obtained by clamping and forward sampling. Linear models give an affine F.
    """

    def __init__(self, model: DirectedGraphModel, qoi: QuantityOfInterest, l: int,
                 mc: Optional[MonteCarloConfig] = None):
        self.model = model
        self.qoi = qoi
        self.mc = mc or MonteCarloConfig.from_env()
        graph = model.graph
        self.l = graph.check_vertex(l)
        relevant = qoi_ancestors(model, qoi)
        if self.l not in relevant:
            raise NotAncestor(f"{graph.label(self.l)} is not an ancestor of the QoI",
                              {"l": graph.label(self.l)})
        self.rho = tuple(sorted(ancestors(graph, self.l)))
        self.clamped = self.rho + (self.l,)
        self.free = frozenset(relevant) - frozenset(self.clamped)
        self.needs_sampling = any(not model.cpds[v].is_deterministic for v in self.free)
        self.seed = _child_seeds(self.mc.seed, 3)[2]
        self.intercept = None
        self.coefficients = None
        if qoi.is_affine and all(model.cpds[v].is_linear for v in self.free):
            self._build_affine()
        self.backend = "affine" if self.coefficients is not None else "clamped_sampling"

    def _build_affine(self):
        position = {v: n for n, v in enumerate(self.clamped)}
        const, coef = {}, {}
        for v in self.model.graph.order:
            if v in position:
                const[v] = 0.0
                coef[v] = np.eye(len(self.clamped))[position[v]]
            elif v in self.free:
                cpd = self.model.cpds[v]
                const[v] = cpd.intercept + cpd.noise_mean + sum(
                    b * const[p] for p, b in zip(cpd.parents, cpd.coefficients))
                coef[v] = sum((b * coef[p] for p, b in zip(cpd.parents, cpd.coefficients)),
                              np.zeros(len(self.clamped)))
        k = self.qoi.vertex
        self.intercept = self.qoi.slope * const[k] + self.qoi.offset
        self.coefficients = self.qoi.slope * coef[k]

    def _rows(self, x_l, rho_values) -> Tuple[np.ndarray, np.ndarray]:
        x_l = np.atleast_1d(np.asarray(x_l, dtype=float))
        if rho_values is None or len(self.rho) == 0:
            rho_values = np.empty((len(x_l), len(self.rho)))
        rho_values = np.asarray(rho_values, dtype=float)
        if rho_values.ndim == 1:
            rho_values = np.broadcast_to(rho_values, (len(x_l), len(self.rho)))
        if rho_values.shape != (len(x_l), len(self.rho)):
            raise InvalidParams(f"Expected {len(self.rho)} ancestor values per point")
        return x_l, rho_values

    def __call__(self, x_l, rho_values=None) -> np.ndarray:
        x_l, rho_values = self._rows(x_l, rho_values)
        if self.coefficients is not None:
            return self.intercept + rho_values @ self.coefficients[:-1] + self.coefficients[-1] * x_l
        if not self.needs_sampling:
            clamp = {v: rho_values[:, j] for j, v in enumerate(self.rho)}
            clamp[self.l] = x_l
            filled = sample(self.model, len(x_l), self.seed, clamp=clamp, restrict_to=self.qoi.vertices)
            return self.qoi.evaluate(filled)
        out = np.empty(len(x_l))
        for n in range(len(x_l)):
            out[n] = self._clamped_mean(x_l[n], rho_values[n])
        return out

    def _clamped_mean(self, x_l: float, rho_row: np.ndarray) -> float:
        # same seed at every point: common random numbers across evaluations
        clamp = {v: float(rho_row[j]) for j, v in enumerate(self.rho)}
        clamp[self.l] = float(x_l)
        draws = sample(self.model, self.mc.f_samples, self.seed, clamp=clamp,
                       restrict_to=self.qoi.vertices)
        return float(np.mean(self.qoi.evaluate(draws)))

    def at_draws(self, draws: np.ndarray, rho_row: np.ndarray) -> np.ndarray:
        """F at many x_l draws for one ancestor configuration, interpolating on quantile nodes"""
        if self.coefficients is not None or not self.needs_sampling:
            return self(draws, rho_row)
        nodes = np.unique(np.quantile(draws, np.linspace(0.0, 1.0, self.mc.f_grid)))
        values = self(nodes, rho_row)
        if nodes.size == 1:
            return np.full(draws.shape, values[0])
        return np.interp(draws, nodes, values)


def conditional_mean_F(model: DirectedGraphModel, qoi: Union[QuantityOfInterest, int], l: int,
                       mc_config: Optional[MonteCarloConfig] = None) -> ConditionalMean:
    return ConditionalMean(model, _as_qoi(qoi), l, mc_config)


# ==================== SENSITIVITY ====================

def _additive_noise(cpd):
    """Parentless noise density e with X_l = linear(parents) + e, or None"""
    if isinstance(cpd, LinearGaussianCPD):
        return cpd.noise_density()
    if isinstance(cpd, LinearAdditiveCPD):
        return cpd.noise
    if not cpd.parents and not cpd.is_deterministic:
        return cpd
    return None


def _noise_handle(noise, scale: float, mc: MonteCarloConfig, seed: int) -> Tuple[CGFHandle, str]:
    """CGF of scale * (e - E e)"""
    if isinstance(noise, LinearGaussianCPD):
        return GaussianCGF(scale ** 2 * noise.noise_sd ** 2), "gaussian_closed_form"
    if isinstance(noise, FiniteDiscreteCPD):
        return DiscreteCGF(scale * np.asarray(noise.outcomes), noise.table[0]), "exact_enumeration"
    if isinstance(noise, GammaCPD):
        return GammaCGF(noise.shape, noise.scale, scale), "closed_form"
    draws = noise.sample_values(mc.inner, np.random.default_rng(seed))
    return SampleCGF(scale * draws, mc.ess_threshold, seed), "monte_carlo"


def _tightness(model: DirectedGraphModel, qoi: QuantityOfInterest, l: int, ambiguity: str) -> bool:
    if ambiguity != "D_lP":
        return True
    return all(cond_indep_given_parents(model.graph, k, l)
               for k in qoi.vertices if l in closed_ancestors(model.graph, k))


def _combine(solutions: Sequence[TiltSolution], weights: np.ndarray) -> TiltSolution:
    values = np.array([s.value for s in solutions])
    mean = float(weights @ values)
    cases = Counter(s.case for s in solutions)
    case = next(iter(cases)) if len(cases) == 1 else "mixed"
    spread = float(np.sqrt(weights @ (values - mean) ** 2))
    diagnostics = {"configurations": len(solutions), "cases": dict(cases)}
    if len(solutions) > 1:
        diagnostics["std_error"] = spread / math.sqrt(len(solutions))
    tilts = np.array([s.tilt for s in solutions])
    tilt = float(weights @ tilts) if np.all(np.isfinite(tilts)) else math.nan
    return TiltSolution(mean, tilt, case, float(weights @ np.array([s.achieved_eta for s in solutions])),
                        diagnostics, lower_bound=any(s.lower_bound for s in solutions))


def sensitivity_index(model: DirectedGraphModel, qoi: Union[QuantityOfInterest, int], l: int,
                      eta: float, ambiguity: str = "D_l",
                      mc_config: Optional[MonteCarloConfig] = None,
                      jensen: bool = False, backend: str = "auto") -> IndexResult:
    """
    Index of the QoI when only vertex l's CPD varies within a KL ball of radius eta.

    D_l lets the perturbed CPD depend on all ancestors of l; D_lP keeps the
    parents of l. Both share the same value; D_lP is tight only when the QoI
    vertex is conditionally independent of l's other ancestors given its parents.
    """
    _check_eta(eta)
    _check_backend(backend)
    if ambiguity not in ("D_l", "D_lP"):
        raise InvalidParams(f"ambiguity must be D_l or D_lP, got {ambiguity!r}")
    mc = mc_config or MonteCarloConfig.from_env()
    qoi = _as_qoi(qoi)
    graph = model.graph
    l = graph.check_vertex(l)
    kind = AMBIGUITY_SETS[ambiguity]

    if l not in qoi_ancestors(model, qoi):
        return _zero_result(kind, "structural_zero", l, eta)
    cpd = model.cpds[l]
    if cpd.is_deterministic:
        return _zero_result(kind, "structural_zero", l, eta, deterministic_vertex=True)

    tight = _tightness(model, qoi, l, ambiguity)
    noise = _additive_noise(cpd)
    linear_route = qoi.is_affine and noise is not None and paths_linear(model, qoi.vertex, l)

    if backend == "gaussian_closed_form":
        if not (linear_route and isinstance(noise, LinearGaussianCPD)):
            raise NonGaussianModel("Gaussian sensitivity needs linear paths and Gaussian noise at l")
    if linear_route and backend in ("auto", "gaussian_closed_form"):
        result = _linear_noise_index(model, qoi, l, eta, noise, mc)
    elif backend == "exact_enumeration" or (backend == "auto" and is_enumerable(model)):
        result = _enumerated_index(model, qoi, l, eta, jensen)
    else:
        result = _sampled_index(model, qoi, l, eta, mc, jensen)

    result.ambiguity = kind
    result.tight = tight
    if not tight:
        result.diagnostics["upper_bound"] = True
    logger.info("Sensitivity of %s to %s at eta=%g: [%.6g, %.6g] (%s%s)", qoi.name, graph.label(l),
                eta, result.minus.value, result.plus.value, result.backend,
                ", upper bound" if not tight else "")
    return result


def _linear_noise_index(model, qoi, l, eta, noise, mc) -> IndexResult:
    scale = qoi.slope * effective_coefficient(model, qoi.vertex, l).value
    if scale == 0.0:
        return _zero_result("", "gaussian_closed_form", l, eta, effective_coefficient=0.0)
    handle, backend = _noise_handle(noise, scale, mc, _child_seeds(mc.seed, 3)[1])
    plus, minus = _solve_pair(handle, eta)
    return IndexResult(plus, minus, "", True, backend, l, eta,
                       diagnostics={"effective_scale": scale, "route": "linear_noise"})


def _enumerated_index(model, qoi, l, eta, jensen) -> IndexResult:
    if not is_enumerable(model):
        raise UnsupportedFamily("Exact enumeration needs a finite-discrete model")
    configs, probs = enumerate_joint(model)
    f = qoi.evaluate(configs)
    rho = sorted(ancestors(model.graph, l))
    cols = rho + [l]
    full, inverse = np.unique(configs[:, cols], axis=0, return_inverse=True)
    inverse = inverse.ravel()
    mass = np.bincount(inverse, weights=probs, minlength=len(full))
    F = np.bincount(inverse, weights=probs * f, minlength=len(full)) / np.where(mass > 0, mass, 1.0)

    if rho:
        groups, group_of = np.unique(full[:, :-1], axis=0, return_inverse=True)
        group_of = group_of.ravel()
    else:
        groups, group_of = np.empty((1, 0)), np.zeros(len(full), dtype=int)
    cpd = model.cpds[l]
    parent_cols = [rho.index(p) for p in cpd.parents]

    handles, weights = [], []
    for g in range(len(groups)):
        rows = np.flatnonzero(group_of == g)
        weight = float(mass[rows].sum())
        if weight <= 0:
            continue
        x_l = full[rows, -1]
        inner = np.exp(cpd.log_density(x_l, np.repeat(groups[g][None, parent_cols], len(rows), axis=0)))
        handles.append(DiscreteCGF(np.where(inner > 0, F[rows], 0.0), inner / inner.sum()))
        weights.append(weight)
    return _outer_average(handles, np.asarray(weights), eta, jensen, "exact_enumeration", l)


def _outer_average(handles, weights, eta, jensen, backend, l, threads: int = 1) -> IndexResult:
    weights = weights / weights.sum()
    if jensen:
        plus, minus = _solve_pair(AveragedCGF(handles, weights), eta)
    else:
        if threads > 1 and len(handles) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                pairs = list(pool.map(lambda h: _solve_pair(h, eta), handles))
        else:
            pairs = [_solve_pair(h, eta) for h in handles]
        plus = _combine([p for p, _ in pairs], weights)
        minus = _combine([m for _, m in pairs], weights)
    return IndexResult(plus, minus, "", True, backend, l, eta, jensen=jensen,
                       diagnostics={"configurations": len(handles)})


def _sampled_index(model, qoi, l, eta, mc, jensen) -> IndexResult:
    F = ConditionalMean(model, qoi, l, mc)
    cpd = model.cpds[l]
    outer_seed, inner_seed, _ = _child_seeds(mc.seed, 3)
    if F.rho:
        outer = sample(model, mc.outer, outer_seed, restrict_to=F.rho, threads=mc.threads)[:, list(F.rho)]
    else:
        outer = np.empty((1, 0))
    parent_cols = [F.rho.index(p) for p in cpd.parents]
    outcomes = getattr(cpd, "outcomes", None)

    handles = []
    for row in outer:
        parents = np.asarray(row[parent_cols], dtype=float)[None, :]
        if outcomes is not None:
            support = np.asarray(outcomes)
            inner = np.exp(cpd.log_density(support, np.repeat(parents, len(support), axis=0)))
            handles.append(DiscreteCGF(F(support, row), inner / inner.sum()))
            continue
        # same inner seed for every configuration
        draws = cpd.sample(np.repeat(parents, mc.inner, axis=0), np.random.default_rng(inner_seed))
        handles.append(SampleCGF(F.at_draws(draws, row), mc.ess_threshold, inner_seed))
    result = _outer_average(handles, np.ones(len(handles)), eta, jensen, "monte_carlo", l, mc.threads)
    result.diagnostics["f_backend"] = F.backend
    return result


def gaussian_sensitivity(model: DirectedGraphModel, k: int, a: float, l: int, eta: float,
                         ambiguity: str = "D_l") -> IndexResult:
    """+-|beta~_kl| sqrt(2 a^2 sigma_l^2 eta); identical for D_l and D_lP"""
    _check_eta(eta)
    if ambiguity not in ("D_l", "D_lP"):
        raise InvalidParams(f"ambiguity must be D_l or D_lP, got {ambiguity!r}")
    graph = model.graph
    k, l = graph.check_vertex(k), graph.check_vertex(l)
    kind = AMBIGUITY_SETS[ambiguity]
    if l not in closed_ancestors(graph, k):
        return _zero_result(kind, "structural_zero", l, eta)
    cpd = model.cpds[l]
    if not isinstance(cpd, LinearGaussianCPD):
        raise NonGaussianModel(f"Vertex {graph.label(l)} is not linear-Gaussian")
    beta = effective_coefficient(model, k, l).value
    variance = (a * beta * cpd.noise_sd) ** 2
    plus, minus = _solve_pair(GaussianCGF(variance), eta)
    return IndexResult(plus, minus, kind, True, "gaussian_closed_form", l, eta,
                       diagnostics={"effective_coefficient": beta})
