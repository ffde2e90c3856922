"""
Conditional Density Models
Parameterised CPDs with log-density, sampling and mean access, plus fitting from data
"""

import dataclasses
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from engine.bn_core import DirectedGraph, DirectedGraphModel
from utils.errors import (
    DimensionMismatch,
    EmptyData,
    InsufficientData,
    InvalidParams,
    NonpositiveBandwidth,
    RankDeficientDesign,
    UnresolvedParent,
    UnsupportedCPDFamily,
)
from utils.expression import ExpressionAst, parse_expression

logger = logging.getLogger(__name__)

# Values within this tolerance satisfy a deterministic (Dirac) constraint
DIRAC_TOLERANCE = 1e-12
# Above this many kernel centres the KDE is evaluated on a binned grid
KDE_EXACT_LIMIT = 20000
KDE_GRID_CELLS = 4096


def _dirac_log_density(x: np.ndarray, value: np.ndarray) -> np.ndarray:
    hit = np.isclose(x, value, rtol=DIRAC_TOLERANCE, atol=DIRAC_TOLERANCE)
    return np.where(hit, 0.0, -np.inf)


class ConditionalDensity(ABC):
    """
    Common interface of every CPD.
    parent_matrix arguments have one row per draw and one column per parent,
    in the order of `parents`.
    """

    parents: Tuple[int, ...]
    kind = "abstract"
    is_linear = False

    @property
    def is_deterministic(self) -> bool:
        return False

    @abstractmethod
    def log_density(self, x: np.ndarray, parent_matrix: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def sample(self, parent_matrix: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def mean(self, parent_matrix: np.ndarray) -> np.ndarray:
        ...

    # parentless conveniences
    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.log_density(x, np.empty((len(x), 0)))

    def sample_values(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample(np.empty((n, 0)), rng)

    @property
    def mean_value(self) -> float:
        return float(self.mean(np.empty((1, 0)))[0])

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if not np.array_equal(np.asarray(a), np.asarray(b)):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = object.__hash__


def _as_float_tuple(values) -> Tuple[float, ...]:
    return tuple(float(v) for v in values)


def _rows(parent_matrix: np.ndarray) -> int:
    return np.asarray(parent_matrix).shape[0]


# ==================== PARAMETRIC FAMILIES ====================

@dataclass(frozen=True, eq=False)
class LinearGaussianCPD(ConditionalDensity):
    """X_i = intercept + coefficients . x_parents + noise_sd * N(0, 1); noise_sd = 0 is deterministic"""

    parents: Tuple[int, ...] = ()
    intercept: float = 0.0
    coefficients: Tuple[float, ...] = ()
    noise_sd: float = 1.0

    kind = "linear_gaussian"
    is_linear = True
    noise_mean = 0.0

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "coefficients", _as_float_tuple(self.coefficients))
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "noise_sd", float(self.noise_sd))
        if len(self.coefficients) != len(self.parents):
            raise DimensionMismatch(
                f"{len(self.coefficients)} coefficients for {len(self.parents)} parents"
            )
        if not np.isfinite(self.noise_sd) or self.noise_sd < 0:
            raise InvalidParams(f"noise_sd must be finite and >= 0, got {self.noise_sd}")

    @property
    def is_deterministic(self) -> bool:
        return self.noise_sd == 0.0

    def mean(self, parent_matrix):
        parent_matrix = np.asarray(parent_matrix, dtype=float)
        if not self.parents:
            return np.full(_rows(parent_matrix), self.intercept)
        return self.intercept + parent_matrix @ np.asarray(self.coefficients)

    def log_density(self, x, parent_matrix):
        x = np.asarray(x, dtype=float)
        centre = self.mean(parent_matrix)
        if self.noise_sd == 0.0:
            return _dirac_log_density(x, centre)
        return stats.norm.logpdf(x, loc=centre, scale=self.noise_sd)

    def sample(self, parent_matrix, rng):
        centre = self.mean(parent_matrix)
        if self.noise_sd == 0.0:
            return centre
        return centre + self.noise_sd * rng.standard_normal(len(centre))

    def noise_density(self) -> "LinearGaussianCPD":
        return LinearGaussianCPD(intercept=0.0, noise_sd=self.noise_sd)

    @property
    def std_value(self) -> float:
        return self.noise_sd


@dataclass(frozen=True, eq=False)
class GammaCPD(ConditionalDensity):
    """Parentless gamma density with shape a and scale b (mean a*b)"""

    shape: float
    scale: float

    kind = "gamma"
    parents = ()

    def __post_init__(self):
        object.__setattr__(self, "shape", float(self.shape))
        object.__setattr__(self, "scale", float(self.scale))
        if not (self.shape > 0 and self.scale > 0):
            raise InvalidParams(f"Gamma shape/scale must be > 0, got {self.shape}, {self.scale}")

    @classmethod
    def from_langmuir(cls, x_h: float, y_h: float) -> "GammaCPD":
        """Shape x^2/(x-y)^2 and scale (x-y)^2/x, so the mean is x_h"""
        if not x_h > y_h > 0:
            raise InvalidParams(f"Need x_h > y_h > 0, got x_h={x_h}, y_h={y_h}")
        gap = (x_h - y_h) ** 2
        return cls(shape=x_h ** 2 / gap, scale=gap / x_h)

    def mean(self, parent_matrix):
        return np.full(_rows(parent_matrix), self.shape * self.scale)

    def log_density(self, x, parent_matrix):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            values = stats.gamma.logpdf(np.where(x > 0, x, 1.0), a=self.shape, scale=self.scale)
        return np.where(x > 0, values, -np.inf)

    def sample(self, parent_matrix, rng):
        return rng.gamma(self.shape, self.scale, _rows(parent_matrix))

    @property
    def std_value(self) -> float:
        return float(np.sqrt(self.shape) * self.scale)

    @property
    def support(self) -> Tuple[float, float]:
        return 0.0, np.inf


@dataclass(frozen=True, eq=False)
class DeterministicCPD(ConditionalDensity):
    """X_i = expression(parents); log-density 0 on the constraint, -inf elsewhere"""

    parents: Tuple[int, ...]
    parent_names: Tuple[str, ...]
    expression: str

    kind = "deterministic"

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "parent_names", tuple(str(n) for n in self.parent_names))
        if len(self.parent_names) != len(self.parents):
            raise DimensionMismatch("parent_names must align with parents")
        unknown = self.ast.variables - set(self.parent_names)
        if unknown:
            raise UnresolvedParent(
                f"Expression {self.expression!r} references undeclared {sorted(unknown)}",
                {"names": sorted(unknown)},
            )

    @cached_property
    def ast(self) -> ExpressionAst:
        return parse_expression(self.expression)

    @property
    def is_deterministic(self) -> bool:
        return True

    def value(self, parent_matrix) -> np.ndarray:
        parent_matrix = np.asarray(parent_matrix, dtype=float)
        env = {name: parent_matrix[:, j] for j, name in enumerate(self.parent_names)}
        result = np.asarray(self.ast.evaluate(env), dtype=float)
        return np.broadcast_to(result, (_rows(parent_matrix),)).astype(float)

    def mean(self, parent_matrix):
        return self.value(parent_matrix)

    def log_density(self, x, parent_matrix):
        return _dirac_log_density(np.asarray(x, dtype=float), self.value(parent_matrix))

    def sample(self, parent_matrix, rng):
        return self.value(parent_matrix)


# ==================== NONPARAMETRIC DENSITIES ====================

@dataclass(frozen=True, eq=False)
class HistogramDensity(ConditionalDensity):
    """Piecewise-constant density on bins [e_k, e_k+1); zero outside the edges"""

    edges: np.ndarray
    counts: np.ndarray

    kind = "histogram"
    parents = ()

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        if edges.ndim != 1 or len(edges) != len(counts) + 1:
            raise DimensionMismatch("Histogram needs len(edges) == len(counts) + 1")
        if np.any(np.diff(edges) <= 0):
            raise InvalidParams("Histogram edges must be strictly increasing")
        if np.any(counts < 0) or counts.sum() <= 0:
            raise InvalidParams("Histogram counts must be nonnegative with a positive total")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @cached_property
    def bin_density(self) -> np.ndarray:
        return self.counts / (self.total * np.diff(self.edges))

    @property
    def support(self) -> Tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])

    @property
    def breakpoints(self) -> np.ndarray:
        return self.edges

    def log_density(self, x, parent_matrix=None):
        x = np.asarray(x, dtype=float)
        index = np.searchsorted(self.edges, x, side="right") - 1
        index = np.where(x == self.edges[-1], len(self.counts) - 1, index)
        inside = (index >= 0) & (index < len(self.counts))
        density = np.where(inside, self.bin_density[np.clip(index, 0, len(self.counts) - 1)], 0.0)
        with np.errstate(divide="ignore"):
            return np.log(density)

    def sample(self, parent_matrix, rng):
        rows = _rows(parent_matrix)
        bins = rng.choice(len(self.counts), size=rows, p=self.counts / self.total)
        return self.edges[bins] + rng.random(rows) * np.diff(self.edges)[bins]

    def mean(self, parent_matrix):
        centres = 0.5 * (self.edges[:-1] + self.edges[1:])
        return np.full(_rows(parent_matrix), float(centres @ (self.counts / self.total)))

    @property
    def std_value(self) -> float:
        p = self.counts / self.total
        lo, hi = self.edges[:-1], self.edges[1:]
        second = p @ ((hi ** 3 - lo ** 3) / (3 * (hi - lo)))
        return float(np.sqrt(max(second - self.mean_value ** 2, 0.0)))


@dataclass(frozen=True, eq=False)
class KernelDensity(ConditionalDensity):
    """Normal-kernel mixture centred on the sample points with bandwidth h"""

    points: np.ndarray
    bandwidth: float

    kind = "kde"
    parents = ()

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).ravel()
        if points.size == 0:
            raise EmptyData("KDE needs at least one sample point")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise NonpositiveBandwidth(f"Bandwidth must be > 0, got {self.bandwidth}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @cached_property
    def _centres(self) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """(centres, weights); large samples are binned on a fine grid"""
        if self.points.size <= KDE_EXACT_LIMIT:
            return self.points, None
        lo, hi = self.points.min(), self.points.max()
        counts, edges = np.histogram(self.points, bins=KDE_GRID_CELLS, range=(lo, hi))
        keep = counts > 0
        centres = 0.5 * (edges[:-1] + edges[1:])
        return centres[keep], counts[keep] / self.points.size

    @cached_property
    def _kde(self) -> Optional[stats.gaussian_kde]:
        """scipy estimator with its kernel sd pinned to `bandwidth`; None for a single location"""
        centres, weights = self._centres
        if np.ptp(centres) == 0:
            return None
        kde = stats.gaussian_kde(centres, weights=weights)
        data_sd = np.sqrt(kde.covariance[0, 0]) / kde.factor
        kde.set_bandwidth(self.bandwidth / data_sd)
        return kde

    @property
    def support(self) -> Tuple[float, float]:
        return -np.inf, np.inf

    def log_density(self, x, parent_matrix=None):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self._kde is None:
            return stats.norm.logpdf(x, loc=self.points[0], scale=self.bandwidth)
        return self._kde.logpdf(x.ravel()).reshape(x.shape)

    def sample(self, parent_matrix, rng):
        rows = _rows(parent_matrix)
        picks = rng.integers(0, self.points.size, rows)
        return self.points[picks] + self.bandwidth * rng.standard_normal(rows)

    def mean(self, parent_matrix):
        return np.full(_rows(parent_matrix), float(self.points.mean()))

    @property
    def std_value(self) -> float:
        return float(np.sqrt(self.points.var() + self.bandwidth ** 2))


@dataclass(frozen=True, eq=False)
class FiniteDiscreteCPD(ConditionalDensity):
    """
    Probability table over finite outcomes. Rows enumerate parent configurations
    in mixed radix (first parent most significant) over parent_outcomes.
    """

    parents: Tuple[int, ...]
    outcomes: Tuple[float, ...]
    table: np.ndarray
    parent_outcomes: Tuple[Tuple[float, ...], ...] = ()

    kind = "discrete"

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "outcomes", _as_float_tuple(self.outcomes))
        object.__setattr__(self, "parent_outcomes",
                           tuple(_as_float_tuple(po) for po in self.parent_outcomes))
        table = np.atleast_2d(np.asarray(self.table, dtype=float))
        object.__setattr__(self, "table", table)
        if len(self.parent_outcomes) != len(self.parents):
            raise DimensionMismatch("parent_outcomes must list one support per parent")
        if np.any(np.diff(self.outcomes) <= 0):
            raise InvalidParams("Discrete outcomes must be strictly increasing")
        expected = (int(np.prod([len(po) for po in self.parent_outcomes])), len(self.outcomes))
        if table.shape != expected:
            raise DimensionMismatch(f"Table shape {table.shape}, expected {expected}")
        if np.any(table < 0) or np.any(table > 1):
            raise InvalidParams("Table entries must lie in [0, 1]")
        if np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-12):
            raise InvalidParams("Each table row must sum to 1 within 1e-12")

    @staticmethod
    def _lookup(support: Tuple[float, ...], values: np.ndarray) -> np.ndarray:
        """Index of each value in support, -1 when absent"""
        support = np.asarray(support)
        idx = np.clip(np.searchsorted(support, values), 0, len(support) - 1)
        for shift in (0, -1):
            cand = np.clip(idx + shift, 0, len(support) - 1)
            hit = np.isclose(support[cand], values, rtol=0, atol=DIRAC_TOLERANCE)
            idx = np.where(hit, cand, idx)
        found = np.isclose(support[idx], values, rtol=0, atol=DIRAC_TOLERANCE)
        return np.where(found, idx, -1)

    def row_index(self, parent_matrix) -> np.ndarray:
        parent_matrix = np.asarray(parent_matrix, dtype=float)
        rows = np.zeros(_rows(parent_matrix), dtype=int)
        valid = np.ones(_rows(parent_matrix), dtype=bool)
        for j, support in enumerate(self.parent_outcomes):
            idx = self._lookup(support, parent_matrix[:, j])
            valid &= idx >= 0
            rows = rows * len(support) + np.maximum(idx, 0)
        return np.where(valid, rows, -1)

    def probabilities(self, parent_matrix) -> np.ndarray:
        rows = self.row_index(parent_matrix)
        if np.any(rows < 0):
            raise InvalidParams("Parent value outside the declared parent outcomes")
        return self.table[rows]

    def log_density(self, x, parent_matrix):
        x = np.asarray(x, dtype=float)
        rows = self.row_index(parent_matrix)
        col = self._lookup(self.outcomes, x)
        ok = (rows >= 0) & (col >= 0)
        prob = np.where(ok, self.table[np.maximum(rows, 0), np.maximum(col, 0)], 0.0)
        with np.errstate(divide="ignore"):
            return np.log(prob)

    def sample(self, parent_matrix, rng):
        probs = self.probabilities(parent_matrix)
        u = rng.random(len(probs))
        picks = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        return np.asarray(self.outcomes)[np.minimum(picks, len(self.outcomes) - 1)]

    def mean(self, parent_matrix):
        return self.probabilities(parent_matrix) @ np.asarray(self.outcomes)

    @property
    def std_value(self) -> float:
        """Outcome spread of a parentless table"""
        if self.parents:
            raise UnsupportedCPDFamily("std_value needs a parentless discrete table",
                                       {"parents": list(self.parents)})
        p = self.table[0]
        values = np.asarray(self.outcomes)
        return float(np.sqrt(p @ values ** 2 - (p @ values) ** 2))


@dataclass(frozen=True, eq=False)
class LinearAdditiveCPD(ConditionalDensity):
    """X_i = intercept + coefficients . x_parents + eps, eps from a parentless density"""

    parents: Tuple[int, ...]
    intercept: float
    coefficients: Tuple[float, ...]
    noise: ConditionalDensity

    kind = "linear_additive"
    is_linear = True

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "coefficients", _as_float_tuple(self.coefficients))
        object.__setattr__(self, "intercept", float(self.intercept))
        if len(self.coefficients) != len(self.parents):
            raise DimensionMismatch(
                f"{len(self.coefficients)} coefficients for {len(self.parents)} parents"
            )
        if self.noise.parents:
            raise InvalidParams("Additive noise density must be parentless")

    @property
    def noise_mean(self) -> float:
        return self.noise.mean_value

    def linear_part(self, parent_matrix) -> np.ndarray:
        parent_matrix = np.asarray(parent_matrix, dtype=float)
        if not self.parents:
            return np.full(_rows(parent_matrix), self.intercept)
        return self.intercept + parent_matrix @ np.asarray(self.coefficients)

    def mean(self, parent_matrix):
        return self.linear_part(parent_matrix) + self.noise_mean

    def log_density(self, x, parent_matrix):
        return self.noise.logpdf(np.asarray(x, dtype=float) - self.linear_part(parent_matrix))

    def sample(self, parent_matrix, rng):
        base = self.linear_part(parent_matrix)
        return base + self.noise.sample_values(len(base), rng)


# ==================== OPERATIONS ====================

def cpd_log_density(cpd: ConditionalDensity, x_i: float, parent_values: Sequence[float]) -> float:
    parent_values = np.asarray(parent_values, dtype=float).ravel()
    if parent_values.size != len(cpd.parents):
        raise DimensionMismatch(
            f"CPD expects {len(cpd.parents)} parent values, got {parent_values.size}"
        )
    return float(cpd.log_density(np.array([float(x_i)]), parent_values[None, :])[0])


def _as_matrix(data: Union[np.ndarray, pd.DataFrame], graph: DirectedGraph) -> np.ndarray:
    if isinstance(data, pd.DataFrame):
        missing = [label for label in graph.labels if label not in data.columns]
        if missing:
            raise DimensionMismatch(f"Data lacks columns {missing}", {"columns": missing})
        data = data[list(graph.labels)].to_numpy(dtype=float)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != graph.vertex_count:
        raise DimensionMismatch(
            f"Data shape {data.shape} does not match {graph.vertex_count} vertices"
        )
    if not np.all(np.isfinite(data)):
        raise InsufficientData("Data contains non-finite values")
    return data


def fit_linear_gaussian_mle(data: Union[np.ndarray, pd.DataFrame], graph: DirectedGraph) -> DirectedGraphModel:
    """Per-vertex least squares of X_i on X_parents; noise variance uses divisor n"""
    data = _as_matrix(data, graph)
    n = data.shape[0]
    cpds = []
    for i in range(graph.vertex_count):
        parents = graph.parents(i)
        if n < len(parents) + 2:
            raise InsufficientData(
                f"Vertex {graph.label(i)} needs at least {len(parents) + 2} rows, got {n}",
                {"vertex": graph.label(i)},
            )
        design = np.column_stack([np.ones(n), data[:, list(parents)]])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise RankDeficientDesign(
                f"Parents of {graph.label(i)} are collinear", {"vertex": graph.label(i)}
            )
        beta, *_ = np.linalg.lstsq(design, data[:, i], rcond=None)
        resid = data[:, i] - design @ beta
        sd = float(np.sqrt(np.mean(resid ** 2)))
        cpds.append(LinearGaussianCPD(parents, beta[0], tuple(beta[1:]), sd))
        logger.debug("Fitted %s: intercept=%.6g sd=%.6g", graph.label(i), beta[0], sd)
    return DirectedGraphModel(graph, tuple(cpds))


def residuals(model: DirectedGraphModel, data: Union[np.ndarray, pd.DataFrame]) -> Dict[int, np.ndarray]:
    """x_i minus the linear part of its CPD, for every linear stochastic vertex"""
    data = _as_matrix(data, model.graph)
    out = {}
    for i, cpd in enumerate(model.cpds):
        if not cpd.is_linear or cpd.is_deterministic:
            continue
        linear = cpd.linear_part(data[:, list(cpd.parents)]) if isinstance(cpd, LinearAdditiveCPD) \
            else cpd.mean(data[:, list(cpd.parents)])
        out[i] = data[:, i] - linear
    return out


def _clean_sample(values) -> np.ndarray:
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise EmptyData("No data supplied")
    if not np.all(np.isfinite(values)):
        raise InsufficientData("Data contains non-finite values")
    return values


def fit_histogram(residuals: Sequence[float], bin_count: int) -> HistogramDensity:
    """Equal-width bins spanning [min, max]; constant data gets an epsilon-padded bin"""
    values = _clean_sample(residuals)
    if int(bin_count) < 1:
        raise InvalidParams(f"bin_count must be >= 1, got {bin_count}")
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        pad = max(1e-9, 1e-9 * abs(lo))
        lo, hi = lo - pad, hi + pad
    counts, edges = np.histogram(values, bins=int(bin_count), range=(lo, hi))
    return HistogramDensity(edges, counts)


def silverman_bandwidth(values: Sequence[float]) -> float:
    """Rule of thumb 1.06 * sd * n^(-1/5)"""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return 1.06 * float(np.std(values, ddof=1)) * values.size ** (-1 / 5)


def fit_kde(residuals: Sequence[float], bandwidth: Optional[float] = None) -> KernelDensity:
    values = _clean_sample(residuals)
    if bandwidth is None:
        bandwidth = silverman_bandwidth(values)
        if bandwidth <= 0:
            raise NonpositiveBandwidth(
                "Default bandwidth is zero (constant or single-point data); pass one explicitly"
            )
    elif bandwidth <= 0:
        raise NonpositiveBandwidth(f"Bandwidth must be > 0, got {bandwidth}")
    return KernelDensity(values, bandwidth)


def centered(density: ConditionalDensity) -> ConditionalDensity:
    """Shift a parentless density so its mean is zero"""
    shift = density.mean_value
    if isinstance(density, KernelDensity):
        return KernelDensity(density.points - shift, density.bandwidth)
    if isinstance(density, HistogramDensity):
        return HistogramDensity(density.edges - shift, density.counts)
    if isinstance(density, FiniteDiscreteCPD) and not density.parents:
        return FiniteDiscreteCPD((), np.asarray(density.outcomes) - shift, density.table)
    if isinstance(density, LinearGaussianCPD) and not density.parents:
        return LinearGaussianCPD(intercept=0.0, noise_sd=density.noise_sd)
    raise InvalidParams(f"Cannot centre a {density.kind} density")


def two_point_noise(half_width: float) -> FiniteDiscreteCPD:
    """Mean-zero noise taking -h and +h with probability 1/2 each"""
    if not half_width > 0:
        raise InvalidParams(f"half_width must be > 0, got {half_width}")
    return FiniteDiscreteCPD((), (-half_width, half_width), np.array([[0.5, 0.5]]))


def with_noise(cpd: ConditionalDensity, noise: ConditionalDensity) -> LinearAdditiveCPD:
    """Keep a linear CPD's mean structure, replace its noise"""
    if not cpd.is_linear:
        raise InvalidParams(f"Cannot replace the noise of a {cpd.kind} CPD")
    return LinearAdditiveCPD(cpd.parents, cpd.intercept, cpd.coefficients, noise)
