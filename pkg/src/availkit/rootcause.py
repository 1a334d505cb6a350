"""Anomaly scoring and two-level root cause localization.

Level 1 walks the service dependency graph from the entry point and keeps
the anomalous services with no anomalous callee (failures propagate
upstream, so the deepest anomalous services are the best candidates).
Level 2 ranks, inside each candidate, the anomalous metrics that have no
anomalous parent in the learned metric dependency graph.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .entropy import HealthReport
from .errors import EmptyWindow, EntryNotInTopology
from .model import MetricDependencyGraph, ServiceDependencyGraph, ServiceNode


@dataclass(frozen=True)
class AnomalyConfig:
    z_threshold: float = 3.0
    cusum_k: float = 0.5
    cusum_h: float = 5.0
    baseline_len: int = 120

    def __post_init__(self) -> None:
        if self.z_threshold <= 0 or self.cusum_k <= 0 or self.cusum_h <= 0:
            raise ValueError("z_threshold, cusum_k and cusum_h must be positive")
        if self.baseline_len < 30:
            raise ValueError("baseline_len must be >= 30")


def zscore_anomaly(baseline: Sequence[float] | np.ndarray, window: Sequence[float] | np.ndarray) -> float:
    """Worst absolute deviation of the window from the baseline, in sigma.

    A zero-variance baseline scores 0 when the window never leaves the
    baseline mean, +inf otherwise (any deviation from a flat line is
    maximally anomalous).
    """
    base = np.asarray(baseline, dtype=float)
    win = np.asarray(window, dtype=float)
    if win.size == 0:
        raise EmptyWindow("anomaly window is empty")
    if base.size == 0:
        raise EmptyWindow("baseline is empty")
    mu = float(base.mean())
    sigma = float(base.std())
    dev = np.abs(win - mu)
    if sigma == 0.0:
        return 0.0 if float(dev.max()) == 0.0 else math.inf
    return float(dev.max() / sigma)


def cusum_change(
    series: Sequence[float] | np.ndarray,
    mu0: float,
    sigma: float,
    cfg: AnomalyConfig,
) -> list[int]:
    """Two-sided tabular CUSUM change indices.

    Each side accumulates S_t = max(0, S_{t-1} + (deviation - k*sigma)),
    alarms when S_t > h*sigma, and resets after its own alarm.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(series, dtype=float)
    k = cfg.cusum_k * sigma
    h = cfg.cusum_h * sigma
    s_hi = 0.0
    s_lo = 0.0
    alarms: list[int] = []
    for t, value in enumerate(x):
        s_hi = max(0.0, s_hi + (value - mu0 - k))
        s_lo = max(0.0, s_lo + (mu0 - value - k))
        fired = False
        if s_hi > h:
            fired = True
            s_hi = 0.0
        if s_lo > h:
            fired = True
            s_lo = 0.0
        if fired:
            alarms.append(t)
    return alarms


@dataclass
class ServiceStatus:
    """Everything level 1 needs to know about one service."""

    health: HealthReport | None = None
    metric_scores: dict[str, float] = field(default_factory=dict)


@dataclass
class AnomalyAssessment:
    anomalous: set[ServiceNode]
    missing: list[ServiceNode]  # topology nodes absent from the snapshot


def service_anomaly(
    statuses: Mapping[ServiceNode, ServiceStatus],
    topology: ServiceDependencyGraph,
    cfg: AnomalyConfig,
    theta: float | None = None,
) -> AnomalyAssessment:
    """A service is anomalous when its entropy alarm fired or any of its
    metrics breached the z threshold. Topology nodes missing from the
    snapshot are treated as healthy but flagged."""
    anomalous: set[ServiceNode] = set()
    missing: list[ServiceNode] = []
    for node in topology.nodes:
        status = statuses.get(node)
        if status is None:
            missing.append(node)
            continue
        entropy_alarm = False
        if status.health is not None:
            entropy_alarm = status.health.score > theta if theta is not None else status.health.alarm
        z_alarm = any(score > cfg.z_threshold for score in status.metric_scores.values())
        if entropy_alarm or z_alarm:
            anomalous.add(node)
    return AnomalyAssessment(anomalous=anomalous, missing=missing)


@dataclass
class Diagnosis:
    entry: ServiceNode
    anomalous_services: set[ServiceNode]
    ranked_causes: list[tuple[ServiceNode, str, float]]
    produced_at_ms: int
    evidence: list[str]

    def to_dict(self) -> dict:
        return {
            "entry": {"ip": self.entry.ip, "service": self.entry.service},
            "anomalous_services": [
                {"ip": n.ip, "service": n.service} for n in sorted(self.anomalous_services)
            ],
            "ranked_causes": [
                {
                    "ip": node.ip,
                    "service": node.service,
                    "metric": metric,
                    "score": score if math.isfinite(score) else "inf",
                }
                for node, metric, score in self.ranked_causes
            ],
            "produced_at_ms": self.produced_at_ms,
            "evidence": list(self.evidence),
        }


def localize(
    topology: ServiceDependencyGraph,
    entry: ServiceNode,
    anomalous: set[ServiceNode],
    metric_graphs: Mapping[ServiceNode, MetricDependencyGraph],
    scores: Mapping[tuple[ServiceNode, str], float],
    cfg: AnomalyConfig,
    produced_at_ms: int | None = None,
) -> Diagnosis:
    """Two-level localization: deepest anomalous services, then their
    anomalous metrics with no anomalous parent, ranked by z-score with a
    total (ip, service, metric) tie-break."""
    if topology.index_of(entry) is None:
        raise EntryNotInTopology(f"{entry.label()} is not a topology node")
    if produced_at_ms is None:
        produced_at_ms = int(time.time() * 1000)

    reachable = set(topology.reachable_from(entry))
    candidates = []
    for node in sorted(anomalous):
        if node not in reachable:
            continue
        if any(callee in anomalous for callee in topology.callees(node)):
            continue
        candidates.append(node)

    causes: list[tuple[ServiceNode, str, float]] = []
    evidence_by_cause: dict[tuple[ServiceNode, str], str] = {}
    for node in candidates:
        node_scores = {
            metric: score for (svc, metric), score in scores.items() if svc == node
        }
        hot = {m for m, s in node_scores.items() if s > cfg.z_threshold}
        graph = metric_graphs.get(node)
        for metric in sorted(hot):
            parents: set[str] = set()
            if graph is not None and metric in graph.metrics:
                j = graph.metrics.index(metric)
                parents = {graph.metrics[i] for i in graph.parents_of(j)}
            hot_parents = sorted(parents & hot)
            if hot_parents:
                continue  # this anomaly is explained by an upstream metric
            score = node_scores[metric]
            causes.append((node, metric, score))
            if parents:
                detail = f"no anomalous parent among {sorted(parents)}"
            else:
                detail = "no parent metric in the dependency graph"
            shown = "inf" if math.isinf(score) else f"{score:.2f}"
            evidence_by_cause[(node, metric)] = (
                f"{node.label()}/{metric}: z={shown} exceeds {cfg.z_threshold}; {detail}"
            )

    causes.sort(key=lambda c: (-c[2], (c[0].ip, c[0].service, c[1])))
    evidence = [evidence_by_cause[(node, metric)] for node, metric, _ in causes]
    return Diagnosis(
        entry=entry,
        anomalous_services=set(anomalous),
        ranked_causes=causes,
        produced_at_ms=produced_at_ms,
        evidence=evidence,
    )
