"""Preprocessing, correlation graph, and anomaly-based critical-metric extraction.

The pipeline: raw series are cleaned (outlier clip, gap interpolation),
min-max normalized so heterogeneous metrics are comparable, correlated to
enrich the dependency graph, and summarized into per-window feature vectors
scored by an isolation forest. Scores are weighted by graph proximity to
SLO-referenced metrics to rank likely trouble spots.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .descriptor import Descriptor
from .telemetry import MetricStore, TimeSeries

EULER_GAMMA = 0.5772156649015329

DEFAULT_MIN_ABS_CORR = 0.7
DEFAULT_FEATURE_WINDOW = 30
CRITICALITY_THRESHOLD = 0.6
PROXIMITY_EPSILON = 0.01

ORIGIN_DECLARED = "declared"
ORIGIN_MEASURED = "measured"
ORIGIN_STRUCTURAL = "structural"  # metric <-> owning component attachment


class AnalysisError(ValueError):
    pass


def metric_node(component: str, metric: str) -> str:
    return f"{component}::{metric}"


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CleanSeries:
    """Gap-free values on a regular tick grid starting at t0."""
    component: str
    metric: str
    t0: int
    step: int
    values: tuple[float, ...]

    def __len__(self):
        return len(self.values)


def clean_and_interpolate(series: TimeSeries, grid_step: int = 1) -> CleanSeries:
    """Produce a regular, gap-free series covering [first, last] timestamp.

    Outliers (|z| > 3 over the window) are clipped to the 3-sigma bound before
    interpolation. Interior gaps are filled linearly, leading/trailing gaps
    with the nearest observed value.
    """
    if grid_step < 1:
        raise AnalysisError("grid_step must be >= 1")
    points = [(s.timestamp, s.value) for s in series.samples]
    known = [(t, v) for t, v in points if v is not None]
    if len(known) < 2:
        raise AnalysisError(
            f"insufficient data for {series.component}/{series.metric}: "
            f"{len(known)} non-missing samples (need >= 2)")

    values = np.array([v for _, v in known], dtype=float)
    mean = float(values.mean())
    std = float(values.std())
    if std > 0.0:
        lo, hi = mean - 3.0 * std, mean + 3.0 * std
        values = np.clip(values, lo, hi)

    t_first = points[0][0]
    t_last = points[-1][0]
    grid = np.arange(t_first, t_last + 1, grid_step, dtype=float)
    known_t = np.array([t for t, _ in known], dtype=float)
    # np.interp holds the edge values flat, which is exactly the nearest-fill
    # rule for leading/trailing gaps.
    interpolated = np.interp(grid, known_t, values)
    return CleanSeries(component=series.component, metric=series.metric,
                       t0=t_first, step=grid_step,
                       values=tuple(float(v) for v in interpolated))


def minmax_normalize(values) -> np.ndarray:
    """Scale to [0,1]; a constant input maps to all zeros."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise AnalysisError("cannot normalize an empty sequence")
    if not np.all(np.isfinite(arr)):
        raise AnalysisError("cannot normalize non-finite values")
    lo = arr.min()
    span = arr.max() - lo
    if span == 0.0:
        return np.zeros_like(arr)
    return (arr - lo) / span


def correlation(a, b) -> float:
    """Pearson coefficient; 0 when either side has zero variance."""
    xa = np.asarray(getattr(a, "values", a), dtype=float)
    xb = np.asarray(getattr(b, "values", b), dtype=float)
    if xa.shape != xb.shape:
        raise AnalysisError(f"length mismatch: {xa.shape[0]} vs {xb.shape[0]}")
    da = xa - xa.mean()
    db = xb - xb.mean()
    var_a = float(np.dot(da, da))
    var_b = float(np.dot(db, db))
    if var_a == 0.0 or var_b == 0.0:
        return 0.0
    return float(np.dot(da, db) / math.sqrt(var_a * var_b))


# ---------------------------------------------------------------------------
# Dependency graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphEdge:
    src: str
    dst: str
    weight: float
    origin: str


@dataclass
class DependencyGraph:
    nodes: set[str] = field(default_factory=set)
    edges: list[GraphEdge] = field(default_factory=list)

    def add_node(self, node: str) -> None:
        self.nodes.add(node)

    def add_edge(self, src: str, dst: str, weight: float, origin: str) -> None:
        self.nodes.add(src)
        self.nodes.add(dst)
        self.edges.append(GraphEdge(src, dst, weight, origin))

    def successors(self, node: str) -> list[str]:
        """Neighbors reachable in one hop; measured and structural edges are
        traversable both ways, declared dependencies only forward."""
        out = []
        for e in self.edges:
            if e.src == node:
                out.append(e.dst)
            elif e.dst == node and e.origin in (ORIGIN_MEASURED, ORIGIN_STRUCTURAL):
                out.append(e.src)
        return out

    def shortest_path(self, src: str, targets: set[str]) -> list[str] | None:
        """BFS path from src to the nearest node in targets, or None."""
        if src not in self.nodes:
            return None
        if src in targets:
            return [src]
        parent: dict[str, str] = {src: src}
        queue = deque([src])
        while queue:
            node = queue.popleft()
            for nxt in self.successors(node):
                if nxt in parent:
                    continue
                parent[nxt] = node
                if nxt in targets:
                    path = [nxt]
                    while path[-1] != src:
                        path.append(parent[path[-1]])
                    path.reverse()
                    return path
                queue.append(nxt)
        return None

    def hops(self, src: str, targets: set[str]) -> int | None:
        path = self.shortest_path(src, targets)
        if path is None:
            return None
        return len(path) - 1

    def export_edges(self) -> str:
        """Edge-list text: from,to,weight,origin per line."""
        lines = [f"{e.src},{e.dst},{e.weight:g},{e.origin}" for e in self.edges]
        return "\n".join(lines) + ("\n" if lines else "")


def build_dependency_graph(descriptor: Descriptor, batch: list[CleanSeries],
                           min_abs_corr: float = DEFAULT_MIN_ABS_CORR) -> DependencyGraph:
    """Declared component edges plus measured metric-to-metric correlation edges.

    Measured edges are stored once per unordered pair (canonical order) and
    traversed bidirectionally. Each metric node is attached to its owning
    component with structural edges so causality paths can cross components.
    """
    graph = DependencyGraph()
    for comp in descriptor.components:
        graph.add_node(comp.id)
    for src, dst in descriptor.dependencies:
        graph.add_edge(src, dst, 1.0, ORIGIN_DECLARED)

    seen_metric_nodes = set()

    def attach(component: str, metric: str) -> str:
        node = metric_node(component, metric)
        if node not in seen_metric_nodes:
            seen_metric_nodes.add(node)
            graph.add_edge(node, component, 1.0, ORIGIN_STRUCTURAL)
            graph.add_edge(component, node, 1.0, ORIGIN_STRUCTURAL)
        return node

    for spec in descriptor.metrics:
        attach(spec.component, spec.name)

    if batch:
        length = len(batch[0])
        for series in batch[1:]:
            if len(series) != length:
                raise AnalysisError("all series in a batch must share one grid")
        for series in batch:
            attach(series.component, series.metric)
        for i in range(len(batch)):
            for j in range(i + 1, len(batch)):
                a, b = batch[i], batch[j]
                node_a = metric_node(a.component, a.metric)
                node_b = metric_node(b.component, b.metric)
                if node_a == node_b:
                    continue
                r = correlation(a, b)
                if abs(r) >= min_abs_corr:
                    src, dst = sorted((node_a, node_b))
                    graph.add_edge(src, dst, r, ORIGIN_MEASURED)
    return graph


# ---------------------------------------------------------------------------
# Isolation forest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _TreeNode:
    size: int
    split_attr: int = -1
    split_value: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass(frozen=True)
class IsolationForestModel:
    trees: tuple[_TreeNode, ...]
    n_trees: int
    subsample_size: int
    seed: int
    dim: int


def average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length in a BST of n points (c(n))."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


def _build_tree(points: list[tuple[float, ...]], rng: random.Random,
                depth: int, height_limit: int, dim: int) -> _TreeNode:
    n = len(points)
    if n <= 1 or depth >= height_limit:
        return _TreeNode(size=n)
    attr = rng.randrange(dim)
    col = [p[attr] for p in points]
    lo, hi = min(col), max(col)
    if lo == hi:
        return _TreeNode(size=n)
    split = rng.uniform(lo, hi)
    left_pts = [p for p in points if p[attr] < split]
    right_pts = [p for p in points if p[attr] >= split]
    if not left_pts or not right_pts:
        return _TreeNode(size=n)
    return _TreeNode(size=n, split_attr=attr, split_value=split,
                     left=_build_tree(left_pts, rng, depth + 1, height_limit, dim),
                     right=_build_tree(right_pts, rng, depth + 1, height_limit, dim))


def fit_isolation_forest(points, n_trees: int = 100, subsample_size: int | None = None,
                         seed: int = 0) -> IsolationForestModel:
    """Fit random isolation trees; deterministic for a fixed seed."""
    data = [tuple(float(x) for x in p) for p in points]
    if len(data) < 2:
        raise AnalysisError(f"need at least 2 points to fit a forest, got {len(data)}")
    dim = len(data[0])
    for p in data:
        if len(p) != dim:
            raise AnalysisError("all points must share one dimension")
        if not all(math.isfinite(x) for x in p):
            raise AnalysisError("points must be finite")
    if subsample_size is None:
        subsample_size = min(256, len(data))
    subsample_size = min(subsample_size, len(data))
    height_limit = max(1, math.ceil(math.log2(subsample_size))) if subsample_size > 1 else 1

    rng = random.Random(seed)
    trees = []
    for _ in range(n_trees):
        sample = rng.sample(data, subsample_size)
        trees.append(_build_tree(sample, rng, 0, height_limit, dim))
    return IsolationForestModel(trees=tuple(trees), n_trees=n_trees,
                                subsample_size=subsample_size, seed=seed, dim=dim)


def tree_path_length(tree: _TreeNode, point) -> float:
    depth = 0
    node = tree
    while not node.is_leaf:
        if point[node.split_attr] < node.split_value:
            node = node.left
        else:
            node = node.right
        depth += 1
    return depth + average_path_length(node.size)


def anomaly_score(model: IsolationForestModel, point) -> float:
    """s = 2^(-E[h(x)] / c(subsample_size)); always in (0, 1]."""
    if len(point) != model.dim:
        raise AnalysisError(f"point dimension {len(point)} != model dimension {model.dim}")
    mean_path = sum(tree_path_length(t, point) for t in model.trees) / len(model.trees)
    c = average_path_length(model.subsample_size)
    if c <= 0.0:
        return 1.0
    return 2.0 ** (-mean_path / c)


# ---------------------------------------------------------------------------
# Critical metric extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricScore:
    component: str
    metric: str
    window: tuple[int, int]
    score: float       # anomaly score in [0,1]
    hops: int | None   # graph distance to the nearest SLO metric node
    proximity: float   # 1/(1+hops), or epsilon when unreachable
    combined: float    # score * proximity; ranking key

    @property
    def key(self) -> tuple[str, str]:
        return (self.component, self.metric)


def window_features(values) -> tuple[float, float, float, float]:
    """(mean, std, linear slope, last value) summary of one window."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 1:
        return (float(arr[0]), 0.0, 0.0, float(arr[0]))
    x = np.arange(arr.size, dtype=float)
    slope = float(np.polyfit(x, arr, 1)[0])
    return (float(arr.mean()), float(arr.std()), slope, float(arr[-1]))


def _history_vectors(clean: CleanSeries, window_len: int, max_windows: int):
    """Consecutive window feature vectors, newest window last."""
    values = np.asarray(clean.values, dtype=float)
    normalized = minmax_normalize(values)
    vectors = []
    end = normalized.size
    taken = 0
    while end - window_len >= 0 and taken < max_windows:
        vectors.append(window_features(normalized[end - window_len:end]))
        end -= window_len
        taken += 1
    vectors.reverse()
    return vectors


def extract_critical_metrics(descriptor: Descriptor, store: MetricStore,
                             graph: DependencyGraph, window: tuple[int, int],
                             *, feature_window: int = DEFAULT_FEATURE_WINDOW,
                             n_trees: int = 100, seed: int = 0,
                             history_windows: int = 12) -> list[MetricScore]:
    """Rank watched metrics by anomaly score weighted by graph proximity.

    Each metric's recent history is cleaned, normalized, and summarized into
    per-window feature vectors; a forest fit on every metric's historical
    vectors scores the newest window. The anomaly score is multiplied by
    1/(1+hops) where hops is the shortest graph distance to any SLO metric
    node (unreachable metrics get a small epsilon weight).
    """
    t0, t1 = window
    length = t1 - t0 + 1
    if length < feature_window:
        raise AnalysisError(
            f"analysis window of {length} ticks is shorter than the minimum "
            f"feature window of {feature_window}")

    fetch_t0 = max(0, t1 - length * history_windows + 1)
    per_metric: dict[tuple[str, str], list[tuple[float, float, float, float]]] = {}
    training: list[tuple[float, float, float, float]] = []
    for spec in descriptor.metrics:
        try:
            raw = store.query_window(spec.component, spec.name, fetch_t0, t1)
            clean = clean_and_interpolate(raw)
        except (AnalysisError, KeyError):
            continue
        if clean.t0 + len(clean) - 1 < t1 - length + 1:
            continue  # no data inside the scoring window
        vectors = _history_vectors(clean, length, history_windows)
        if not vectors:
            continue
        per_metric[spec.key] = vectors
        training.extend(vectors)

    if not per_metric or len(training) < 2:
        raise AnalysisError("insufficient history to score any watched metric")

    model = fit_isolation_forest(training, n_trees=n_trees, seed=seed)

    slo_nodes = {metric_node(s.component, s.metric) for s in descriptor.slos}
    results = []
    for (component, name), vectors in per_metric.items():
        score = anomaly_score(model, vectors[-1])
        hops = graph.hops(metric_node(component, name), slo_nodes) if slo_nodes else None
        proximity = 1.0 / (1.0 + hops) if hops is not None else PROXIMITY_EPSILON
        results.append(MetricScore(component=component, metric=name, window=(t0, t1),
                                   score=score, hops=hops, proximity=proximity,
                                   combined=score * proximity))
    results.sort(key=lambda m: (-m.combined, m.component, m.metric))
    return results
