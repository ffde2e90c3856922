"""
Model Catalog
Ready-made networks: the oxygen-reduction (ORR) screening network, the
DFT-informed Langmuir adsorption network and Markov chains
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Sequence, Tuple

import numpy as np
import pandas as pd

from engine.bn_core import DirectedGraphModel
from engine.cpd_models import ConditionalDensity, DeterministicCPD, GammaCPD, LinearGaussianCPD
from engine.indices import QuantityOfInterest, resolve_qoi
from utils.errors import InvalidChain, InvalidParams, InvalidVertex, ParallelLines, UnknownPreset

logger = logging.getLogger(__name__)


# ==================== ORR NETWORK ====================

# Fitted intercepts and noise variances of the binding-energy corrections
ORR_OMEGA_INTERCEPTS = {
    "e0": 0.0, "d0": -0.0754, "s0": 0.0067,
    "e1": 0.0, "d1": -0.0222, "s1": -0.2967, "c1": 0.0,
    "e2": 0.0, "d2": -0.0222, "s2": -0.1209, "c2": 0.0,
}
ORR_OMEGA_VARIANCES = {
    "e0": 0.0329, "d0": 0.1032, "s0": 0.0010,
    "e1": 0.0065, "d1": 0.0354, "s1": 0.0046, "c1": 0.0347,
    "e2": 0.0065, "d2": 0.0354, "s2": 0.0054, "c2": 0.0204,
}
ORR_VERTICES = ("e0", "d0", "s0", "x", "e1", "d1", "s1", "c1", "y1", "e2", "d2", "s2", "c2", "y2")
ORR_SHARED = ("e0", "d0", "s0")

# Published optimal binding energy; fitted with unrounded parameters, kept for comparison only
ORR_REFERENCE_XSTAR = 2.0434


@dataclass(frozen=True)
class ORRParams:
    beta_y1_0: float = 0.0595
    beta_y2_0: float = 1.8231
    beta_y1_x: float = 0.5111
    beta_y2_x: float = -0.5564
    omega_intercepts: Dict[str, float] = field(default_factory=lambda: dict(ORR_OMEGA_INTERCEPTS))
    omega_variances: Dict[str, float] = field(default_factory=lambda: dict(ORR_OMEGA_VARIANCES))

    def __post_init__(self):
        for name in ORR_OMEGA_INTERCEPTS:
            if name not in self.omega_intercepts or name not in self.omega_variances:
                raise InvalidParams(f"ORR parameters lack omega {name!r}")
            if not self.omega_variances[name] > 0:
                raise InvalidParams(f"Variance of {name} must be > 0")

    @property
    def slope_gap(self) -> float:
        return self.beta_y1_x - self.beta_y2_x

    def shared_offset(self) -> float:
        return sum(self.omega_intercepts[n] for n in ORR_SHARED)

    def branch_offset(self, i: int) -> float:
        """beta_bar_i: everything in E[y_i | x0] except the y_i intercept and slope term in x0"""
        slope = self.beta_y1_x if i == 1 else self.beta_y2_x
        own = sum(self.omega_intercepts[f"{kind}{i}"] for kind in ("c", "s", "e", "d"))
        return slope * self.shared_offset() + own


def build_orr_network(params: ORRParams = None, x0: float = 0.0) -> Tuple[DirectedGraphModel, Dict[str, QuantityOfInterest]]:
    """
    x = x0 + e0 + d0 + s0 and y_i = beta_yi0 + beta_yix x + e_i + d_i + s_i + c_i,
    both with zero noise; every omega is Gaussian. QoIs y1 and y2.
    """
    params = params or ORRParams()
    index = {name: n for n, name in enumerate(ORR_VERTICES)}
    cpds = []
    for name in ORR_VERTICES:
        if name == "x":
            parents = tuple(index[n] for n in ORR_SHARED)
            cpds.append(LinearGaussianCPD(parents, x0, (1.0, 1.0, 1.0), 0.0))
        elif name in ("y1", "y2"):
            i = name[1]
            branch = ("x", f"e{i}", f"d{i}", f"s{i}", f"c{i}")
            parents = tuple(index[n] for n in branch)
            intercept = params.beta_y1_0 if i == "1" else params.beta_y2_0
            slope = params.beta_y1_x if i == "1" else params.beta_y2_x
            cpds.append(LinearGaussianCPD(parents, intercept, (slope, 1.0, 1.0, 1.0, 1.0), 0.0))
        else:
            cpds.append(LinearGaussianCPD((), params.omega_intercepts[name],
                                          (), math.sqrt(params.omega_variances[name])))
    model = DirectedGraphModel.from_cpds(cpds, ORR_VERTICES)
    qois = {name: QuantityOfInterest.affine(index[name], name=name) for name in ("y1", "y2")}
    return model, qois


def with_xstar(model: DirectedGraphModel) -> DirectedGraphModel:
    """
    Append the deterministic vertex xstar = x0 + (y2 - y1) / (beta_y1x - beta_y2x),
    the descriptor value where the two limiting-potential lines cross.
    """
    labels = model.labels
    for name in ("x", "y1", "y2"):
        if name not in labels:
            raise InvalidVertex(f"xstar needs an ORR-shaped model with vertex {name!r}")
    x, y1, y2 = (labels.index(n) for n in ("x", "y1", "y2"))
    slopes = []
    for y in (y1, y2):
        cpd = model.cpds[y]
        if not cpd.is_linear or x not in cpd.parents:
            raise InvalidParams(f"Vertex {labels[y]} must be linear in x")
        slopes.append(cpd.coefficients[cpd.parents.index(x)])
    gap = slopes[0] - slopes[1]
    if gap == 0:
        raise ParallelLines("The two limiting-potential lines are parallel")
    x0 = model.cpds[x].intercept
    xstar = LinearGaussianCPD(tuple(sorted((y1, y2))), x0,
                              (-1.0 / gap, 1.0 / gap) if y1 < y2 else (1.0 / gap, -1.0 / gap), 0.0)
    return DirectedGraphModel.from_cpds(list(model.cpds) + [xstar], labels + ("xstar",))


def orr_xstar_network(params: ORRParams = None) -> Tuple[DirectedGraphModel, QuantityOfInterest]:
    model = with_xstar(build_orr_network(params, 0.0)[0])
    return model, QuantityOfInterest((model.vertex_count - 1,), "builtin", name="xstar")


def prepare_qoi(model: DirectedGraphModel, text: str) -> Tuple[DirectedGraphModel, QuantityOfInterest]:
    """Resolve a QoI, adding the xstar vertex to ORR-shaped models when asked for it"""
    if text.strip() == "xstar" and "xstar" not in model.labels:
        model = with_xstar(model)
    return model, resolve_qoi(model, text)


def orr_conditional_means(params: ORRParams, x0) -> Tuple[np.ndarray, np.ndarray]:
    x0 = np.asarray(x0, dtype=float)
    y1 = params.beta_y1_0 + params.beta_y1_x * x0 + params.branch_offset(1)
    y2 = params.beta_y2_0 + params.beta_y2_x * x0 + params.branch_offset(2)
    return y1, y2


def orr_optimal_binding_energy(params: ORRParams = None) -> float:
    """Crossing point of E[y1 | x0] and E[y2 | x0], the peak of the volcano curve"""
    params = params or ORRParams()
    if params.slope_gap == 0:
        raise ParallelLines("beta_y1_x equals beta_y2_x; the volcano has no peak")
    numerator = (params.beta_y2_0 + params.branch_offset(2)
                 - params.beta_y1_0 - params.branch_offset(1))
    return numerator / params.slope_gap


def orr_volcano_curve(params: ORRParams, x0_grid: Sequence[float]) -> pd.DataFrame:
    """Plot-ready limiting potential min(E[y1|x0], E[y2|x0]) over a descriptor grid"""
    grid = np.asarray(x0_grid, dtype=float)
    y1, y2 = orr_conditional_means(params, grid)
    return pd.DataFrame({"x0": grid, "y1": y1, "y2": y2, "limiting": np.minimum(y1, y2)})


def orr_sensitivity_interval(params: ORRParams, l: str, eta: float) -> Tuple[float, float]:
    """
    Interval for xstar^Q - xstar^P when only omega_l varies within radius eta.
    Shared corrections move both lines; branch corrections move one.
    """
    params = params or ORRParams()
    if l not in params.omega_variances:
        raise InvalidVertex(f"{l!r} is not an ORR omega vertex", {"vertex": l})
    if not eta >= 0:
        raise InvalidParams(f"eta must be >= 0, got {eta}")
    base = math.sqrt(2 * params.omega_variances[l] * eta) / abs(params.slope_gap)
    if l in ORR_SHARED:
        base *= abs(params.beta_y1_x) + abs(params.beta_y2_x)
    return -base, base


def solvation_edge_model(P: DirectedGraphModel, s1: str = "s1", s2: str = "s2",
                         coefficient: float = 1.0, intercept: float = None,
                         noise_sd: float = None) -> DirectedGraphModel:
    """Q equal to P except that s2 gains s1 as a parent"""
    i, j = P.graph.index_of(s1), P.graph.index_of(s2)
    old = P.cpds[j]
    if not isinstance(old, LinearGaussianCPD):
        raise InvalidParams(f"Vertex {s2} must be linear-Gaussian")
    weights = dict(zip(old.parents, old.coefficients))
    weights[i] = weights.get(i, 0.0) + coefficient
    parents = tuple(sorted(weights))
    cpd = LinearGaussianCPD(parents,
                            old.intercept if intercept is None else intercept,
                            tuple(weights[p] for p in parents),
                            old.noise_sd if noise_sd is None else noise_sd)
    return P.replace_cpd(j, cpd)


# ==================== LANGMUIR NETWORK ====================

LANGMUIR_VERTICES = ("dE_H", "dE_O", "K_H2", "K_O2", "C_H", "C_O")


@dataclass(frozen=True)
class LangmuirParams:
    """
    dE_O = a dE_H + b + N(0, sigma_omega^2); dE_H gamma with mean x_h and sd x_h - y_h.
    The Gibbs energy is taken as G = -2 * energy_scale * dE. Defaults are illustrative.
    """

    a: float = 0.5
    b: float = 0.1
    sigma_omega: float = 0.02
    x_h: float = 0.3
    y_h: float = 0.25
    p_h2: float = 1.0
    p_o2: float = 1.0
    temperature: float = 300.0
    k_b: float = 8.617e-5
    energy_scale: float = 0.05

    def __post_init__(self):
        if not self.sigma_omega > 0:
            raise InvalidParams("sigma_omega must be > 0")
        if not self.x_h > self.y_h > 0:
            raise InvalidParams("Need x_h > y_h > 0")
        if not (self.p_h2 > 0 and self.p_o2 > 0 and self.temperature > 0 and self.k_b > 0):
            raise InvalidParams("Pressures, temperature and k_B must be > 0")

    @property
    def arrhenius_rate(self) -> float:
        """Exponent per unit binding energy"""
        return 2 * self.energy_scale / (self.k_b * self.temperature)


def langmuir_constants(dE_H, dE_O, params: LangmuirParams) -> Tuple[np.ndarray, np.ndarray]:
    total = params.p_h2 + params.p_o2
    k_h = np.exp(params.arrhenius_rate * np.asarray(dE_H, dtype=float)) / total
    k_o = np.exp(params.arrhenius_rate * np.asarray(dE_O, dtype=float)) / total
    return k_h, k_o


def langmuir_equilibrium(dE_H, dE_O, params: LangmuirParams = None) -> Tuple[np.ndarray, np.ndarray]:
    """Steady-state coverages of dissociative H2/O2 adsorption"""
    params = params or LangmuirParams()
    k_h, k_o = langmuir_constants(dE_H, dE_O, params)
    root_h = np.sqrt(k_h * params.p_h2)
    root_o = np.sqrt(k_o * params.p_o2)
    denominator = 1.0 + root_h + root_o
    return root_h / denominator, root_o / denominator


def langmuir_rates(state: Sequence[float], params: LangmuirParams, dE_H: float, dE_O: float,
                   desorption_rate: float = 1.0) -> np.ndarray:
    """Coverage time derivatives with k_ads = K * k_des"""
    c_h, c_o = state
    k_h, k_o = langmuir_constants(dE_H, dE_O, params)
    free = 1.0 - c_h - c_o
    return np.array([
        float(k_h) * desorption_rate * params.p_h2 * free ** 2 - desorption_rate * c_h ** 2,
        float(k_o) * desorption_rate * params.p_o2 * free ** 2 - desorption_rate * c_o ** 2,
    ])


def build_langmuir_network(params: LangmuirParams = None) -> Tuple[DirectedGraphModel, Dict[str, QuantityOfInterest]]:
    """Stochastic binding energies feeding deterministic Arrhenius constants and coverages"""
    params = params or LangmuirParams()
    index = {name: n for n, name in enumerate(LANGMUIR_VERTICES)}
    total = params.p_h2 + params.p_o2
    rate = params.arrhenius_rate

    def coverage(own: str, other: str, p_own: float, p_other: float) -> str:
        return (f"sqrt({own}*{p_own!r})/(1+sqrt({own}*{p_own!r})+sqrt({other}*{p_other!r}))")

    cpds = [
        GammaCPD.from_langmuir(params.x_h, params.y_h),
        LinearGaussianCPD((index["dE_H"],), params.b, (params.a,), params.sigma_omega),
        DeterministicCPD((index["dE_H"],), ("dE_H",), f"exp({rate!r}*dE_H)/{total!r}"),
        DeterministicCPD((index["dE_O"],), ("dE_O",), f"exp({rate!r}*dE_O)/{total!r}"),
        DeterministicCPD((index["K_H2"], index["K_O2"]), ("K_H2", "K_O2"),
                         coverage("K_H2", "K_O2", params.p_h2, params.p_o2)),
        DeterministicCPD((index["K_H2"], index["K_O2"]), ("K_H2", "K_O2"),
                         coverage("K_O2", "K_H2", params.p_o2, params.p_h2)),
    ]
    model = DirectedGraphModel.from_cpds(cpds, LANGMUIR_VERTICES)
    qois = {name: QuantityOfInterest.affine(index[name], name=name) for name in ("C_H", "C_O")}
    return model, qois


# ==================== MARKOV CHAINS ====================

def build_markov_chain(cpds: Sequence[ConditionalDensity], labels: Sequence[str] = None) -> DirectedGraphModel:
    """Chain X1 -> X2 -> ... where step i's CPD consumes only vertex i-1"""
    if not cpds:
        raise InvalidChain("A Markov chain needs at least one CPD")
    for i, cpd in enumerate(cpds):
        expected = () if i == 0 else (i - 1,)
        if tuple(cpd.parents) != expected:
            raise InvalidChain(f"Step {i} consumes {tuple(cpd.parents)}, expected {expected}",
                               {"step": i})
    labels = tuple(labels) if labels is not None else tuple(f"X{i + 1}" for i in range(len(cpds)))
    return DirectedGraphModel.from_cpds(list(cpds), labels)


def gaussian_markov_chain(length: int = 4, coefficient: float = 0.8, noise_sd: float = 1.0,
                          intercept: float = 0.0) -> DirectedGraphModel:
    if length < 1:
        raise InvalidChain("length must be >= 1")
    cpds = [LinearGaussianCPD((), intercept, (), noise_sd)]
    for i in range(1, length):
        cpds.append(LinearGaussianCPD((i - 1,), intercept, (coefficient,), noise_sd))
    return build_markov_chain(cpds)


# ==================== PRESETS ====================

PRESETS: Dict[str, Tuple[Callable[[], DirectedGraphModel], str]] = {
    "orr-tableB1": (lambda: build_orr_network()[0], "xstar"),
    "langmuir-illustrative": (lambda: build_langmuir_network()[0], "C_H"),
    "markov-chain": (gaussian_markov_chain, "X4"),
}


def load_preset(name: str) -> Tuple[DirectedGraphModel, str]:
    """(model, default QoI text) for a named preset"""
    if name not in PRESETS:
        raise UnknownPreset(f"Unknown preset {name!r}; available: {sorted(PRESETS)}",
                            {"preset": name})
    builder, qoi = PRESETS[name]
    logger.debug("Building preset %s", name)
    return builder(), qoi
