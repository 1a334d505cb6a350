"""Core data types: samples, series, aligned matrices and dependency graphs.

Everything here is an immutable-ish value object plus a few pure helpers
(align, window, validate_topology). Timestamps are integer epoch
milliseconds throughout; missing matrix cells are NaN.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyInput

_DOTTED_QUAD = re.compile(r"^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})$")


def is_dotted_quad(ip: str) -> bool:
    m = _DOTTED_QUAD.match(ip)
    if not m:
        return False
    return all(0 <= int(octet) <= 255 for octet in m.groups())


class MetricKey(NamedTuple):
    """Identity of one monitored time series."""

    ip: str
    service: str
    metric: str


class ServiceNode(NamedTuple):
    """One node of the service dependency graph: (IP address, service name)."""

    ip: str
    service: str

    def label(self) -> str:
        return f"{self.ip}:{self.service}"


@dataclass(frozen=True)
class MetricSample:
    """A single timestamped observation of one metric on one service."""

    ts_ms: int
    ip: str
    service: str
    metric: str
    value: float

    def __post_init__(self) -> None:
        if self.ts_ms < 0:
            raise ValueError(f"ts_ms must be >= 0, got {self.ts_ms}")
        if not self.service or not self.metric:
            raise ValueError("service and metric must be non-empty")
        if not is_dotted_quad(self.ip):
            raise ValueError(f"ip must be a dotted quad, got {self.ip!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"value must be finite, got {self.value!r}")

    @property
    def key(self) -> MetricKey:
        return MetricKey(self.ip, self.service, self.metric)


@dataclass
class MetricSeries:
    """Ordered (ts_ms, value) points for one metric key.

    Points are strictly increasing in ts_ms; ingestion dedups duplicates
    before a series is built.
    """

    key: MetricKey
    points: list[tuple[int, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def timestamps(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=float)


@dataclass
class MetricMatrix:
    """Bucketed, column-aligned view of a set of series.

    Row t covers [start_ms + t * interval_ms, start_ms + (t+1) * interval_ms).
    Missing cells are NaN ("absent"); downstream analyses drop incomplete
    rows (listwise deletion) rather than interpolate.
    """

    interval_ms: int
    start_ms: int
    columns: list
    values: np.ndarray  # shape (n_rows, n_columns), NaN = absent

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise ValueError("values must be 2-D with one column per key")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column_names(self) -> list[str]:
        names = []
        for col in self.columns:
            if isinstance(col, MetricKey):
                names.append(col.metric)
            else:
                names.append(str(col))
        return names

    def complete_rows(self) -> np.ndarray:
        """Rows with no absent cell, as a float array."""
        mask = ~np.isnan(self.values).any(axis=1)
        return self.values[mask]


@dataclass
class ServiceDependencyGraph:
    """High-level call graph; edge (i, j) means node i depends on node j."""

    nodes: list[ServiceNode]
    edges: list[tuple[int, int]] = field(default_factory=list)

    def index_of(self, node: ServiceNode) -> int | None:
        try:
            return self.nodes.index(node)
        except ValueError:
            return None

    def callees(self, node: ServiceNode) -> list[ServiceNode]:
        idx = self.index_of(node)
        if idx is None:
            return []
        return [self.nodes[j] for (i, j) in self.edges if i == idx and 0 <= j < len(self.nodes)]

    def reachable_from(self, entry: ServiceNode) -> list[ServiceNode]:
        """Depth-first reachability along caller->callee edges; cycle-safe."""
        start = self.index_of(entry)
        if start is None:
            return []
        succ: dict[int, list[int]] = {}
        for i, j in self.edges:
            succ.setdefault(i, []).append(j)
        seen: set[int] = set()
        order: list[int] = []
        stack = [start]
        while stack:
            cur = stack.pop()
            if cur in seen or not (0 <= cur < len(self.nodes)):
                continue
            seen.add(cur)
            order.append(cur)
            for nxt in sorted(succ.get(cur, ()), reverse=True):
                if nxt not in seen:
                    stack.append(nxt)
        return [self.nodes[i] for i in order]

    def to_dict(self) -> dict:
        return {
            "nodes": [{"ip": n.ip, "service": n.service} for n in self.nodes],
            "edges": [[i, j] for i, j in self.edges],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ServiceDependencyGraph":
        nodes = [ServiceNode(str(n["ip"]), str(n["service"])) for n in doc.get("nodes", [])]
        edges = [(int(e[0]), int(e[1])) for e in doc.get("edges", [])]
        return cls(nodes=nodes, edges=edges)


def load_topology(path) -> ServiceDependencyGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return ServiceDependencyGraph.from_dict(json.load(fh))


def save_topology(graph: ServiceDependencyGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass
class MetricDependencyGraph:
    """Partially directed graph over metric names (a CPDAG after completion).

    directed and undirected edge sets are disjoint; undirected edges are
    stored with i < j. conflicts flags undirected edges whose orientation
    was demanded both ways; dropped records degenerate metrics removed
    before structure learning.
    """

    metrics: list[str]
    directed: set[tuple[int, int]] = field(default_factory=set)
    undirected: set[tuple[int, int]] = field(default_factory=set)
    conflicts: set[tuple[int, int]] = field(default_factory=set)
    dropped: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.undirected = {(min(i, j), max(i, j)) for i, j in self.undirected}
        overlap = {(min(i, j), max(i, j)) for i, j in self.directed} & self.undirected
        if overlap:
            raise ValueError(f"edges both directed and undirected: {sorted(overlap)}")
        if any(i == j for i, j in self.directed) or any(i == j for i, j in self.undirected):
            raise ValueError("self loops are not allowed")

    def adjacent(self, i: int, j: int) -> bool:
        a, b = min(i, j), max(i, j)
        return (a, b) in self.undirected or (i, j) in self.directed or (j, i) in self.directed

    def parents_of(self, j: int) -> set[int]:
        """Directed parents plus undirected neighbours (both ways count)."""
        out = {i for (i, k) in self.directed if k == j}
        for a, b in self.undirected:
            if a == j:
                out.add(b)
            elif b == j:
                out.add(a)
        return out

    def directed_is_acyclic(self) -> bool:
        return topological_order(len(self.metrics), self.directed) is not None

    def to_dict(self) -> dict:
        return {
            "metrics": list(self.metrics),
            "directed": sorted([list(e) for e in self.directed]),
            "undirected": sorted([list(e) for e in self.undirected]),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricDependencyGraph":
        return cls(
            metrics=[str(m) for m in doc.get("metrics", [])],
            directed={(int(e[0]), int(e[1])) for e in doc.get("directed", [])},
            undirected={(int(e[0]), int(e[1])) for e in doc.get("undirected", [])},
        )


def topological_order(n: int, edges: Iterable[tuple[int, int]]) -> list[int] | None:
    """Kahn's algorithm; None when the directed edge set has a cycle."""
    indeg = [0] * n
    succ: dict[int, list[int]] = {}
    for i, j in edges:
        succ.setdefault(i, []).append(j)
        indeg[j] += 1
    ready = sorted(i for i in range(n) if indeg[i] == 0)
    order: list[int] = []
    while ready:
        cur = ready.pop(0)
        order.append(cur)
        for nxt in sorted(succ.get(cur, ())):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
        ready.sort()
    return order if len(order) == n else None


# --- operations ---

def align(
    series_set: Iterable[MetricSeries],
    interval_ms: int,
    aggregation: str = "mean",
) -> MetricMatrix:
    """Bucket a set of series onto a common clock.

    Each sample lands in bucket floor((ts - start) / interval); co-bucketed
    samples are reduced by `aggregation` (mean or last); empty buckets stay
    NaN. start_ms is the earliest timestamp rounded down to an interval
    boundary.
    """
    series = list(series_set)
    if not series or all(len(s) == 0 for s in series):
        raise EmptyInput("align requires at least one non-empty series")
    if interval_ms <= 0:
        raise ValueError("interval_ms must be positive")
    if aggregation not in ("mean", "last"):
        raise ValueError(f"unknown aggregation {aggregation!r}")

    t_min = min(s.points[0][0] for s in series if len(s))
    t_max = max(s.points[-1][0] for s in series if len(s))
    start_ms = (t_min // interval_ms) * interval_ms
    n_rows = int((t_max - start_ms) // interval_ms) + 1

    values = np.full((n_rows, len(series)), np.nan)
    for col, s in enumerate(series):
        if not len(s):
            continue
        ts = s.timestamps()
        vals = s.values()
        buckets = (ts - start_ms) // interval_ms
        if aggregation == "last":
            uniq, rev_first = np.unique(buckets[::-1], return_index=True)
            last_idx = len(vals) - 1 - rev_first
            values[uniq, col] = vals[last_idx]
        else:
            sums = np.zeros(n_rows)
            counts = np.zeros(n_rows)
            np.add.at(sums, buckets, vals)
            np.add.at(counts, buckets, 1)
            filled = counts > 0
            values[filled, col] = sums[filled] / counts[filled]

    return MetricMatrix(
        interval_ms=interval_ms,
        start_ms=int(start_ms),
        columns=[s.key for s in series],
        values=values,
    )


def window(series: MetricSeries, length: int, stride: int) -> list[MetricSeries]:
    """Slice a series into full windows of `length` points every `stride`."""
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be >= 1")
    n = len(series)
    out: list[MetricSeries] = []
    k = 0
    while k * stride + length <= n:
        lo = k * stride
        out.append(MetricSeries(key=series.key, points=series.points[lo : lo + length]))
        k += 1
    return out


@dataclass(frozen=True)
class TopologyViolation:
    kind: str  # duplicate_node | dangling_edge | self_loop
    detail: str


def validate_topology(graph: ServiceDependencyGraph) -> list[TopologyViolation]:
    """Report-style check; an empty list means the topology is usable."""
    violations: list[TopologyViolation] = []
    seen: set[ServiceNode] = set()
    for node in graph.nodes:
        if node in seen:
            violations.append(TopologyViolation("duplicate_node", f"{node.ip}:{node.service}"))
        seen.add(node)
    n = len(graph.nodes)
    for i, j in graph.edges:
        if not (0 <= i < n) or not (0 <= j < n):
            violations.append(TopologyViolation("dangling_edge", f"({i},{j})"))
        elif i == j:
            violations.append(TopologyViolation("self_loop", f"({i},{j})"))
    return violations
