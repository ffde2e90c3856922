"""
Bayesian Network Core
DAG structure, structural queries, joint density, forward sampling and Gaussian moments
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from utils.config import SAMPLE_BLOCK_ROWS
from utils.errors import (
    CycleDetected,
    DimensionMismatch,
    InvalidVertex,
    NonGaussianModel,
    NotAncestor,
    UnsupportedFamily,
    UnsupportedSampling,
)

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]


def build_digraph(vertex_count: int, edges: Iterable[Edge]) -> nx.DiGraph:
    """networkx view of the structure; every vertex is present even when isolated"""
    G = nx.DiGraph()
    G.add_nodes_from(range(vertex_count))
    G.add_edges_from(edges)
    return G


def _cycle_of(G: nx.DiGraph) -> List[int]:
    """One directed cycle as a closed vertex list"""
    cycle_edges = nx.find_cycle(G)
    return [u for u, _ in cycle_edges] + [cycle_edges[-1][1]]


@dataclass(frozen=True)
class DirectedGraph:
    """
    Directed acyclic graph over vertices 0..vertex_count-1.
    Labels are metadata only; all structure is expressed with integer ids.
    """

    vertex_count: int
    edges: FrozenSet[Edge] = field(default_factory=frozenset)
    vertex_labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        edges = frozenset((int(u), int(v)) for u, v in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.vertex_labels is not None:
            labels = tuple(str(label) for label in self.vertex_labels)
            if len(labels) != self.vertex_count:
                raise DimensionMismatch(
                    f"{len(labels)} labels for {self.vertex_count} vertices"
                )
            if len(set(labels)) != len(labels):
                raise InvalidVertex("Vertex labels must be unique")
            object.__setattr__(self, "vertex_labels", labels)
        for u, v in edges:
            for endpoint in (u, v):
                if not 0 <= endpoint < self.vertex_count:
                    raise InvalidVertex(
                        f"Edge ({u}, {v}) has endpoint outside [0, {self.vertex_count})",
                        {"edge": [u, v]},
                    )
            if u == v:
                raise CycleDetected([u, u])
        # fail fast on cycles
        _ = self.order

    @cached_property
    def digraph(self) -> nx.DiGraph:
        return build_digraph(self.vertex_count, self.edges)

    @cached_property
    def order(self) -> Tuple[int, ...]:
        # smallest ready vertex first gives the lexicographic tie-break
        try:
            return tuple(nx.lexicographical_topological_sort(self.digraph))
        except nx.NetworkXUnfeasible:
            raise CycleDetected(_cycle_of(self.digraph))

    @cached_property
    def _ancestor_sets(self) -> Tuple[FrozenSet[int], ...]:
        return tuple(frozenset(nx.ancestors(self.digraph, v)) for v in range(self.vertex_count))

    @cached_property
    def _descendant_sets(self) -> Tuple[FrozenSet[int], ...]:
        return tuple(frozenset(nx.descendants(self.digraph, v)) for v in range(self.vertex_count))

    def check_vertex(self, k: int) -> int:
        if not isinstance(k, (int, np.integer)) or not 0 <= k < self.vertex_count:
            raise InvalidVertex(f"Vertex {k!r} not in graph of {self.vertex_count} vertices",
                                {"vertex": str(k)})
        return int(k)

    def parents(self, k: int) -> Tuple[int, ...]:
        return tuple(sorted(self.digraph.predecessors(self.check_vertex(k))))

    def children(self, k: int) -> Tuple[int, ...]:
        return tuple(sorted(self.digraph.successors(self.check_vertex(k))))

    @property
    def labels(self) -> Tuple[str, ...]:
        if self.vertex_labels is None:
            return tuple(f"X{i}" for i in range(self.vertex_count))
        return self.vertex_labels

    def label(self, k: int) -> str:
        return self.labels[self.check_vertex(k)]

    def index_of(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise InvalidVertex(f"Unknown vertex {name!r}", {"vertex": name})


def topological_order(graph: DirectedGraph) -> List[int]:
    """Vertices ordered so every edge points forward; ties broken by smallest id"""
    return list(graph.order)


def ancestors(graph: DirectedGraph, k: int) -> FrozenSet[int]:
    return graph._ancestor_sets[graph.check_vertex(k)]


def closed_ancestors(graph: DirectedGraph, k: int) -> FrozenSet[int]:
    """rho-bar: the ancestors of k together with k itself"""
    return ancestors(graph, k) | {int(k)}


def descendants(graph: DirectedGraph, k: int) -> FrozenSet[int]:
    return graph._descendant_sets[graph.check_vertex(k)]


def directed_paths(graph: DirectedGraph, source: int, target: int) -> List[Tuple[int, ...]]:
    """All directed paths source -> ... -> target (the trivial path when source == target)"""
    source = graph.check_vertex(source)
    target = graph.check_vertex(target)
    if source == target:
        return [(source,)]
    return sorted(tuple(path) for path in nx.all_simple_paths(graph.digraph, source, target))


def cond_indep_given_parents(graph: DirectedGraph, k: int, l: int) -> bool:
    """
    Structural test that X_k is independent of X_{rho_l \\ pi_l} given X_{pi_l}:
    true iff every directed path from rho_l \\ pi_l to k passes through pi_l or l.
    """
    k = graph.check_vertex(k)
    l = graph.check_vertex(l)
    if l not in closed_ancestors(graph, k):
        raise NotAncestor(f"Vertex {l} is not in the closed ancestor set of {k}",
                          {"k": k, "l": l})
    blocked = set(graph.parents(l)) | {l}
    if k in blocked:
        return True
    sources = ancestors(graph, l) - blocked
    unblocked = nx.restricted_view(graph.digraph, blocked, [])
    return not any(nx.has_path(unblocked, s, k) for s in sources)


# ==================== MODEL ====================

@dataclass(frozen=True)
class DirectedGraphModel:
    """A DAG with one conditional density per vertex (the factorised baseline)"""

    graph: DirectedGraph
    cpds: Tuple[object, ...]

    def __post_init__(self):
        cpds = tuple(self.cpds)
        object.__setattr__(self, "cpds", cpds)
        if len(cpds) != self.graph.vertex_count:
            raise DimensionMismatch(
                f"{len(cpds)} CPDs for {self.graph.vertex_count} vertices"
            )
        for i, cpd in enumerate(cpds):
            if tuple(cpd.parents) != self.graph.parents(i):
                raise DimensionMismatch(
                    f"CPD of vertex {self.graph.label(i)} consumes parents {tuple(cpd.parents)}, "
                    f"graph has {self.graph.parents(i)}",
                    {"vertex": self.graph.label(i)},
                )

    @classmethod
    def from_cpds(cls, cpds: Sequence[object], labels: Optional[Sequence[str]] = None):
        edges = frozenset((p, i) for i, cpd in enumerate(cpds) for p in cpd.parents)
        graph = DirectedGraph(len(cpds), edges, tuple(labels) if labels is not None else None)
        return cls(graph, tuple(cpds))

    @property
    def vertex_count(self) -> int:
        return self.graph.vertex_count

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.graph.labels

    def stochastic_vertices(self) -> List[int]:
        return [i for i, cpd in enumerate(self.cpds) if not cpd.is_deterministic]

    def replace_cpd(self, k: int, cpd) -> "DirectedGraphModel":
        """Copy with vertex k's CPD swapped; the graph follows the new CPD's parents"""
        cpds = list(self.cpds)
        cpds[self.graph.check_vertex(k)] = cpd
        if tuple(cpd.parents) == self.graph.parents(k):
            return DirectedGraphModel(self.graph, tuple(cpds))
        return DirectedGraphModel.from_cpds(cpds, self.graph.vertex_labels)


@dataclass(frozen=True, eq=False)
class GaussianJointMoments:
    mean: np.ndarray
    covariance: np.ndarray


def is_linear_gaussian(model: DirectedGraphModel) -> bool:
    return all(cpd.kind == "linear_gaussian" for cpd in model.cpds)


def joint_log_density(model: DirectedGraphModel, x: Sequence[float]) -> float:
    """Sum of the CPD log-densities at a full assignment"""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.vertex_count:
        raise DimensionMismatch(
            f"Assignment has shape {x.shape}, expected ({model.vertex_count},)"
        )
    total = 0.0
    for i, cpd in enumerate(model.cpds):
        parent_values = x[list(cpd.parents)][None, :]
        total += float(cpd.log_density(x[i:i + 1], parent_values)[0])
        if total == -np.inf:
            return -np.inf
    return total


def _simulation_set(model: DirectedGraphModel, clamped: Iterable[int],
                    restrict_to: Optional[Iterable[int]]) -> List[int]:
    """Vertices to draw, in topological order, stopping the closure at clamped vertices"""
    clamped = set(clamped)
    if restrict_to is None:
        wanted = set(range(model.vertex_count))
    else:
        wanted = set()
        frontier = [model.graph.check_vertex(v) for v in restrict_to]
        while frontier:
            v = frontier.pop()
            if v in wanted:
                continue
            wanted.add(v)
            if v not in clamped:
                frontier.extend(model.graph.parents(v))
    return [v for v in model.graph.order if v in wanted and v not in clamped]


def _sample_block(model, rows, seed_seq, draw, clamp_block):
    rng = np.random.default_rng(seed_seq)
    out = np.full((rows, model.vertex_count), np.nan)
    for v, values in clamp_block.items():
        out[:, v] = values
    for v in draw:
        cpd = model.cpds[v]
        try:
            out[:, v] = cpd.sample(out[:, list(cpd.parents)], rng)
        except AttributeError as e:
            raise UnsupportedSampling(
                f"CPD of vertex {model.graph.label(v)} cannot be sampled: {e}"
            )
    return out


def sample(model: DirectedGraphModel, n: int, seed: int,
           clamp: Optional[Mapping[int, object]] = None,
           restrict_to: Optional[Iterable[int]] = None,
           threads: int = 1) -> np.ndarray:
    """
    Forward (ancestral) sampling in topological order.

    Rows are drawn in fixed-size blocks with seeds spawned from `seed`, so the
    output does not depend on `threads`. Clamped vertices take the supplied
    value (scalar or length-n array); with restrict_to only that set and its
    unclamped ancestors are drawn, other columns are NaN.
    """
    if n < 1:
        raise ValueError("sample size must be >= 1")
    clamp = dict(clamp or {})
    draw = _simulation_set(model, clamp, restrict_to)
    block_count = -(-n // SAMPLE_BLOCK_ROWS)
    seeds = np.random.SeedSequence(seed).spawn(block_count)

    jobs = []
    for b in range(block_count):
        start = b * SAMPLE_BLOCK_ROWS
        stop = min(n, start + SAMPLE_BLOCK_ROWS)
        clamp_block = {}
        for v, value in clamp.items():
            value = np.asarray(value, dtype=float)
            clamp_block[v] = value[start:stop] if value.ndim else float(value)
        jobs.append((stop - start, seeds[b], clamp_block))

    if threads > 1 and block_count > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda job: _sample_block(model, job[0], job[1], draw, job[2]), jobs))
    else:
        blocks = [_sample_block(model, rows, ss, draw, cb) for rows, ss, cb in jobs]
    return np.vstack(blocks)


def gaussian_joint_moments(model: DirectedGraphModel) -> GaussianJointMoments:
    """Exact mean and covariance of a linear-Gaussian network by forward recursion"""
    if not is_linear_gaussian(model):
        raise NonGaussianModel("Joint moments need every CPD to be linear-Gaussian")
    n = model.vertex_count
    mean = np.zeros(n)
    cov = np.zeros((n, n))
    done = []
    for i in model.graph.order:
        cpd = model.cpds[i]
        parents = list(cpd.parents)
        beta = np.asarray(cpd.coefficients, dtype=float)
        mean[i] = cpd.intercept + (beta @ mean[parents] if parents else 0.0)
        if parents:
            # cov(X_i, X_j) = sum_m beta_m cov(X_pm, X_j) for earlier j
            row = beta @ cov[parents, :]
            for j in done:
                cov[i, j] = cov[j, i] = row[j]
            cov[i, i] = cpd.noise_sd ** 2 + beta @ cov[np.ix_(parents, parents)] @ beta
        else:
            cov[i, i] = cpd.noise_sd ** 2
        done.append(i)
    return GaussianJointMoments(mean=mean, covariance=cov)


def is_linear(model: DirectedGraphModel, vertices: Optional[Iterable[int]] = None) -> bool:
    chosen = range(model.vertex_count) if vertices is None else vertices
    return all(getattr(model.cpds[v], "is_linear", False) for v in chosen)


def linear_means(model: DirectedGraphModel) -> np.ndarray:
    """Means of a linear model (linear-Gaussian and additive-noise CPDs)"""
    if not is_linear(model):
        raise NonGaussianModel("Linear means need every CPD to be linear in its parents")
    mean = np.zeros(model.vertex_count)
    for i in model.graph.order:
        cpd = model.cpds[i]
        parents = list(cpd.parents)
        beta = np.asarray(cpd.coefficients, dtype=float)
        mean[i] = cpd.intercept + cpd.noise_mean + (beta @ mean[parents] if parents else 0.0)
    return mean


def enumerate_joint(model: DirectedGraphModel, max_configurations: int = 65536):
    """All configurations of a finite-discrete model with their probabilities"""
    supports = []
    for i, cpd in enumerate(model.cpds):
        outcomes = getattr(cpd, "outcomes", None)
        if outcomes is None:
            raise UnsupportedFamily(
                f"Vertex {model.graph.label(i)} is not finite-discrete",
                {"vertex": model.graph.label(i)},
            )
        supports.append(np.asarray(outcomes, dtype=float))
    count = int(np.prod([len(s) for s in supports]))
    if count > max_configurations:
        raise UnsupportedFamily(
            f"{count} joint configurations exceed the enumeration cap {max_configurations}"
        )
    configs = np.array(list(itertools.product(*supports)), dtype=float)
    log_prob = np.zeros(len(configs))
    for i, cpd in enumerate(model.cpds):
        log_prob += cpd.log_density(configs[:, i], configs[:, list(cpd.parents)])
    return configs, np.exp(log_prob)


def is_enumerable(model: DirectedGraphModel, max_configurations: int = 65536) -> bool:
    if not all(getattr(cpd, "outcomes", None) is not None for cpd in model.cpds):
        return False
    return int(np.prod([len(cpd.outcomes) for cpd in model.cpds])) <= max_configurations


def vertex_values(model: DirectedGraphModel, samples: np.ndarray) -> Dict[str, np.ndarray]:
    """Column view of a sample matrix keyed by vertex label"""
    return {label: samples[:, i] for i, label in enumerate(model.labels)}
