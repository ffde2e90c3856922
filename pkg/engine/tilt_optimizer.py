"""
Tilt Optimizer
Cumulant generating functions of a centred QoI and the one-dimensional
variational problem inf_{c>0} [(Lambda(+-c) + eta) / c]
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from engine.bn_core import GaussianJointMoments
from utils.config import ESS_THRESHOLD
from utils.errors import DomainExceeded, InvalidParams, MGFNonexistent

logger = logging.getLogger(__name__)

BRACKET_START = 1e-8
MAX_BISECTIONS = 200
# Doubling stops here and the bound is treated as saturated
TILT_CEILING = 1e12


# ==================== HANDLES ====================

class CGFHandle(ABC):
    """
    Lambda(c) = log E_P[exp(c * fbar)] for a centred QoI fbar.
    domain is the closed interval (d_minus, d_plus) where Lambda may be evaluated.
    """

    kind = "closed_form"
    domain: Tuple[float, float] = (-math.inf, math.inf)

    @abstractmethod
    def value(self, c: float) -> float:
        ...

    @abstractmethod
    def derivative(self, c: float) -> float:
        ...

    def ess_sup(self, sign: int = 1) -> float:
        """ess sup of sign * fbar (inf when unbounded)"""
        return math.inf

    def saturation_eta(self, sign: int = 1) -> float:
        """Limit of g(c) as c grows without bound in direction sign"""
        return math.inf

    def effective_sample_size(self, c: float) -> float:
        return math.inf

    def root_tolerance(self, eta: float) -> float:
        return max(1e-13, 1e-12 * eta)

    def check_domain(self, c: float):
        lo, hi = self.domain
        if c < lo or c > hi:
            raise DomainExceeded(f"Tilt {c:.6g} outside the CGF domain [{lo:.6g}, {hi:.6g}]",
                                 {"c": c, "domain": [lo, hi]})


class GaussianCGF(CGFHandle):
    """fbar ~ N(0, variance); Lambda(c) = c^2 variance / 2"""

    def __init__(self, variance: float):
        if not variance >= 0:
            raise InvalidParams(f"variance must be >= 0, got {variance}")
        self.variance = float(variance)

    def value(self, c):
        return 0.5 * c * c * self.variance

    def derivative(self, c):
        return c * self.variance

    def ess_sup(self, sign=1):
        return 0.0 if self.variance == 0 else math.inf

    def saturation_eta(self, sign=1):
        return 0.0 if self.variance == 0 else math.inf

    def exact_tilt(self, eta: float) -> float:
        return math.sqrt(2 * eta / self.variance)


class GammaCGF(CGFHandle):
    """fbar = a * (X - k*theta) with X ~ Gamma(shape k, scale theta)"""

    def __init__(self, shape: float, scale: float, coefficient: float = 1.0):
        if not (shape > 0 and scale > 0) or coefficient == 0:
            raise InvalidParams("Gamma CGF needs shape > 0, scale > 0 and a nonzero coefficient")
        self.shape, self.scale, self.coefficient = float(shape), float(scale), float(coefficient)
        edge = 1.0 / (abs(self.coefficient) * self.scale)
        self.domain = (-math.inf, edge) if self.coefficient > 0 else (-edge, math.inf)

    def value(self, c):
        self.check_domain(c)
        t = c * self.coefficient * self.scale
        if t >= 1.0:
            return math.inf
        return -self.shape * math.log1p(-t) - self.shape * t

    def derivative(self, c):
        self.check_domain(c)
        t = c * self.coefficient * self.scale
        if t >= 1.0:
            return math.inf
        return self.shape * self.coefficient * self.scale * t / (1.0 - t)

    def ess_sup(self, sign=1):
        # Gamma is unbounded above and bounded below by 0
        if sign * self.coefficient > 0:
            return math.inf
        return abs(self.coefficient) * self.shape * self.scale


class DiscreteCGF(CGFHandle):
    """Exact CGF of a QoI taking finitely many values"""

    def __init__(self, values: Sequence[float], probabilities: Sequence[float]):
        values = np.asarray(values, dtype=float).ravel()
        probs = np.asarray(probabilities, dtype=float).ravel()
        if values.shape != probs.shape or values.size == 0:
            raise InvalidParams("values and probabilities must be non-empty and aligned")
        if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0, atol=1e-9):
            raise InvalidParams("probabilities must be nonnegative and sum to 1")
        keep = probs > 0
        self.mean = float(probs @ values)
        self.values = values[keep] - self.mean
        self.log_probs = np.log(probs[keep])

    def value(self, c):
        return float(logsumexp(c * self.values + self.log_probs))

    def derivative(self, c):
        log_w = c * self.values + self.log_probs
        return float(np.exp(log_w - logsumexp(log_w)) @ self.values)

    def ess_sup(self, sign=1):
        return float(np.max(sign * self.values))

    def saturation_eta(self, sign=1):
        top = np.isclose(sign * self.values, self.ess_sup(sign), rtol=0, atol=1e-12)
        return float(-logsumexp(self.log_probs[top]))


class SampleCGF(CGFHandle):
    """
    Monte-Carlo CGF over a stored sample of f, centred by its sample mean.
    The same draws serve every c, so g(c) is monotone up to rounding.
    """

    kind = "mc_estimate"

    def __init__(self, f_samples: Sequence[float], ess_threshold: float = ESS_THRESHOLD,
                 seed: Optional[int] = None):
        f = np.asarray(f_samples, dtype=float).ravel()
        if f.size == 0 or not np.all(np.isfinite(f)):
            raise InvalidParams("Sample CGF needs a non-empty finite sample")
        self.mean = float(f.mean())
        self.values = f - self.mean
        self.ess_threshold = float(ess_threshold)
        self.seed = seed

    def _log_weights(self, c):
        return c * self.values

    def value(self, c):
        # log-mean-exp with max shift
        return float(logsumexp(self._log_weights(c)) - math.log(self.values.size))

    def derivative(self, c):
        log_w = self._log_weights(c)
        return float(np.exp(log_w - logsumexp(log_w)) @ self.values)

    def effective_sample_size(self, c):
        log_w = self._log_weights(c)
        return float(math.exp(2 * logsumexp(log_w) - logsumexp(2 * log_w)))

    def ess_sup(self, sign=1):
        return float(np.max(sign * self.values))

    def saturation_eta(self, sign=1):
        top = np.count_nonzero(np.isclose(sign * self.values, self.ess_sup(sign), rtol=0, atol=1e-12))
        return math.log(self.values.size / top)

    def root_tolerance(self, eta):
        return max(1e-10, 1e-6 * eta)


class AveragedCGF(CGFHandle):
    """Weighted mean of per-configuration CGFs (the Jensen relaxation)"""

    def __init__(self, handles: Sequence[CGFHandle], weights: Optional[Sequence[float]] = None):
        if not handles:
            raise InvalidParams("AveragedCGF needs at least one handle")
        self.handles = list(handles)
        w = np.full(len(handles), 1.0 / len(handles)) if weights is None else np.asarray(weights, float)
        self.weights = w / w.sum()
        self.domain = (max(h.domain[0] for h in handles), min(h.domain[1] for h in handles))
        self.kind = "mc_estimate" if any(h.kind == "mc_estimate" for h in handles) else "closed_form"

    def value(self, c):
        return float(sum(w * h.value(c) for w, h in zip(self.weights, self.handles) if w > 0))

    def derivative(self, c):
        return float(sum(w * h.derivative(c) for w, h in zip(self.weights, self.handles) if w > 0))

    def ess_sup(self, sign=1):
        return float(sum(w * h.ess_sup(sign) for w, h in zip(self.weights, self.handles) if w > 0))

    def saturation_eta(self, sign=1):
        return float(sum(w * h.saturation_eta(sign) for w, h in zip(self.weights, self.handles) if w > 0))

    def effective_sample_size(self, c):
        return min(h.effective_sample_size(c) for h in self.handles)

    def root_tolerance(self, eta):
        return max(h.root_tolerance(eta) for h in self.handles)


# ==================== SOLVER ====================

@dataclass
class TiltSolution:
    """
    Signed index value and optimal tilt. case is one of interior,
    eta_saturated_ess_sup, eta_saturated_finite_d or c_capped_mc.
    """

    value: float
    tilt: float
    case: str
    achieved_eta: float
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    lower_bound: bool = False


def cgf_eval(handle: CGFHandle, c: float) -> float:
    if c == 0:
        return 0.0
    handle.check_domain(c)
    return handle.value(c)


def eta_of_tilt(handle: CGFHandle, c: float) -> float:
    """KL of the tilted measure at tilt c: c Lambda'(c) - Lambda(c)"""
    if c == 0:
        return 0.0
    handle.check_domain(c)
    return c * handle.derivative(c) - handle.value(c)


class _Directed:
    """Lambda(s*c) viewed as a function of c > 0"""

    def __init__(self, handle: CGFHandle, sign: int):
        self.handle = handle
        self.sign = sign
        self.d_plus = handle.domain[1] if sign > 0 else -handle.domain[0]

    def value(self, c):
        if c > self.d_plus:
            return math.inf
        return self.handle.value(self.sign * c)

    def slope(self, c):
        if c > self.d_plus:
            return math.inf
        return self.sign * self.handle.derivative(self.sign * c)

    def g(self, c):
        lam = self.value(c)
        if not math.isfinite(lam):
            return math.inf
        return c * self.slope(c) - lam

    def ess(self, c):
        return self.handle.effective_sample_size(self.sign * c)


def _ess_cap(view: _Directed, good: float, bad: float, threshold: float) -> float:
    """Largest tilt in [good, bad] whose weights keep ESS >= threshold"""
    for _ in range(60):
        mid = 0.5 * (good + bad)
        if view.ess(mid) >= threshold:
            good = mid
        else:
            bad = mid
    return good


def _golden_fallback(view: _Directed, eta: float, lo: float, hi: float) -> Tuple[float, float]:
    result = minimize_scalar(lambda c: (view.value(c) + eta) / c, bounds=(lo, hi), method="bounded",
                             options={"xatol": 1e-10 * max(1.0, hi)})
    return float(result.x), float(result.fun)


def solve_index(handle: CGFHandle, eta: float, sign: int = 1) -> TiltSolution:
    """
    sign * inf_{c>0} [(Lambda(sign*c) + eta) / c].

    Interior optimum solves g(c) = c Lambda'(c) - Lambda(c) = eta by doubling
    from 1e-8 and bisecting; the value is then Lambda'(c*). Boundary cases:
    eta beyond the saturation level of a bounded QoI gives the ess sup, eta
    beyond g(d_+) with finite Lambda(d_+) gives (Lambda(d_+) + eta)/d_+, and a
    Monte-Carlo handle whose weights degenerate is capped and reported as a
    lower bound.
    """
    if sign not in (1, -1):
        raise InvalidParams(f"sign must be +1 or -1, got {sign}")
    if not eta >= 0:
        raise InvalidParams(f"eta must be >= 0, got {eta}")
    if eta == 0:
        return TiltSolution(0.0, 0.0, "interior", 0.0)

    view = _Directed(handle, sign)
    mc = handle.kind == "mc_estimate"
    tol = handle.root_tolerance(eta)
    threshold = getattr(handle, "ess_threshold", ESS_THRESHOLD)

    saturation = handle.saturation_eta(sign)
    if saturation <= eta:
        bound = handle.ess_sup(sign)
        logger.debug("eta=%.6g at or beyond saturation %.6g; ess sup %.6g", eta, saturation, bound)
        return TiltSolution(sign * bound, sign * math.inf, "eta_saturated_ess_sup", saturation,
                            {"saturation_eta": saturation}, lower_bound=mc)

    if isinstance(handle, GaussianCGF):
        c = handle.exact_tilt(eta)
        return TiltSolution(sign * c * handle.variance, sign * c, "interior", eta,
                            {"iterations": 0})

    # bracket
    lo, hi = 0.0, BRACKET_START
    g_lo = 0.0
    while True:
        if hi >= view.d_plus:
            hi = view.d_plus
            lam_edge = view.value(hi)
            if math.isfinite(lam_edge):
                g_edge = hi * view.slope(hi) - lam_edge
                if g_edge <= eta:
                    value = (lam_edge + eta) / hi
                    return TiltSolution(sign * value, sign * hi, "eta_saturated_finite_d", g_edge,
                                        {"d_plus": hi, "lambda_d_plus": lam_edge})
            break
        if mc and view.ess(hi) < threshold:
            c_cap = _ess_cap(view, lo, hi, threshold)
            value = view.slope(c_cap)
            logger.warning("ESS fell below %d; tilt capped at %.6g, index %.6g is a lower bound",
                           threshold, c_cap, value)
            return TiltSolution(sign * value, sign * c_cap, "c_capped_mc", view.g(c_cap),
                                {"ess": view.ess(c_cap)}, lower_bound=True)
        g_hi = view.g(hi)
        if g_hi >= eta:
            break
        if g_hi < g_lo - tol:
            return _fallback(view, eta, sign, BRACKET_START, 2 * hi, "bracket")
        if hi > TILT_CEILING:
            bound = handle.ess_sup(sign)
            return TiltSolution(sign * bound, sign * math.inf, "eta_saturated_ess_sup", g_hi,
                                {"tilt_ceiling": TILT_CEILING}, lower_bound=mc)
        lo, g_lo = hi, g_hi
        hi *= 2.0

    # bisect
    g_hi = view.g(hi)
    c_star = hi
    iterations = 0
    for iterations in range(1, MAX_BISECTIONS + 1):
        mid = 0.5 * (lo + hi)
        g_mid = view.g(mid)
        if mc and (g_mid < g_lo - tol or g_mid > g_hi + tol):
            return _fallback(view, eta, sign, max(lo, BRACKET_START), hi, "bisection")
        c_star = mid
        if abs(g_mid - eta) <= tol:
            break
        if g_mid < eta:
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid
        if hi - lo <= 1e-15 * hi:
            break
    value = view.slope(c_star)
    diagnostics = {"iterations": iterations}
    if mc:
        diagnostics["ess"] = view.ess(c_star)
    logger.debug("Solved tilt c=%.10g after %d bisections (eta=%.6g)", c_star, iterations, eta)
    return TiltSolution(sign * value, sign * c_star, "interior", view.g(c_star), diagnostics)


def _fallback(view: _Directed, eta: float, sign: int, lo: float, hi: float, stage: str) -> TiltSolution:
    logger.warning("g(c) is not monotone during %s (Monte-Carlo noise); using golden-section search", stage)
    c_star, value = _golden_fallback(view, eta, lo, hi)
    return TiltSolution(sign * value, sign * c_star, "interior", view.g(c_star),
                        {"fallback": "golden_section", "non_convex_estimate": True})


def index_pair(handle: CGFHandle, eta: float) -> Tuple[TiltSolution, TiltSolution]:
    return solve_index(handle, eta, 1), solve_index(handle, eta, -1)


# ==================== TILTED DISTRIBUTIONS ====================

@dataclass
class TiltedWeights:
    weights: np.ndarray
    ess: float
    degenerate: bool


def tilt_weights(f_values: Sequence[float], c: float, ess_threshold: float = ESS_THRESHOLD) -> TiltedWeights:
    """Self-normalised importance weights proportional to exp(c f)"""
    if not math.isfinite(c):
        raise MGFNonexistent("Tilt must be finite")
    log_w = c * np.asarray(f_values, dtype=float)
    log_w -= logsumexp(log_w)
    weights = np.exp(log_w)
    ess = float(1.0 / np.sum(weights ** 2))
    degenerate = ess < ess_threshold
    if degenerate:
        logger.warning("Tilted weights degenerate: ESS %.1f below %g", ess, ess_threshold)
    return TiltedWeights(weights, ess, degenerate)


def tilt_gaussian(moments: GaussianJointMoments, coefficients: Sequence[float], c: float) -> GaussianJointMoments:
    """Exponential tilt of a Gaussian along the linear QoI coefficients . x"""
    direction = np.asarray(coefficients, dtype=float)
    return GaussianJointMoments(moments.mean + c * moments.covariance @ direction, moments.covariance.copy())


def tilt_discrete(probabilities: Sequence[float], f_values: Sequence[float], c: float) -> np.ndarray:
    log_p = np.log(np.asarray(probabilities, dtype=float)) + c * np.asarray(f_values, dtype=float)
    return np.exp(log_p - logsumexp(log_p))


def tilt_distribution(target, f_values, c: float, ess_threshold: float = ESS_THRESHOLD):
    """
    Tilted representation of P by exp(c f):
    GaussianJointMoments with a coefficient vector -> shifted moments,
    a probability vector over enumerated configurations -> reweighted probabilities,
    None (plain samples of f) -> importance weights.
    """
    if isinstance(target, GaussianJointMoments):
        return tilt_gaussian(target, f_values, c)
    if target is not None:
        return tilt_discrete(target, f_values, c)
    return tilt_weights(f_values, c, ess_threshold)
