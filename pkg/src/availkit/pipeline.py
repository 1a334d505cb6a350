"""End-to-end diagnosis over a store of metric series.

For every topology service this splits each metric series into a baseline
prefix and a detection window, computes z-scores and the entropy health
report on the window, learns the metric dependency CPDAG from baseline
rows, and feeds everything into the two-level localization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .causal import PCConfig, learn_metric_graph
from .entropy import EntropyConfig, health_score
from .errors import EngineError, NoUsableMetric
from .model import MetricDependencyGraph, MetricKey, MetricMatrix, MetricSeries, ServiceDependencyGraph, ServiceNode, align
from .rootcause import AnomalyConfig, Diagnosis, ServiceStatus, localize, service_anomaly, zscore_anomaly

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiagnosisSettings:
    baseline_n: int | None = None   # points per series used as baseline (default: half)
    window_n: int | None = None     # detection window length (default: entropy window)
    interval_ms: int | None = None  # alignment interval (default: inferred)
    pc_row_stride: int = 1          # subsample baseline rows for structure learning
    theta: float | None = None      # entropy alarm threshold override


def _infer_interval(series_map: Mapping[MetricKey, MetricSeries]) -> int:
    diffs = []
    for series in series_map.values():
        ts = series.timestamps()
        if ts.size >= 2:
            d = np.diff(ts)
            d = d[d > 0]
            if d.size:
                diffs.append(int(d.min()))
    return min(diffs) if diffs else 1000


def _split_lengths(
    series_map: Mapping[MetricKey, MetricSeries],
    econf: EntropyConfig,
    aconf: AnomalyConfig,
    settings: DiagnosisSettings,
) -> tuple[int, int]:
    shortest = min((len(s) for s in series_map.values()), default=0)
    baseline_n = settings.baseline_n
    if baseline_n is None:
        baseline_n = max(aconf.baseline_len, shortest // 2)
    window_n = settings.window_n
    if window_n is None:
        window_n = min(econf.window_len, max(0, shortest - baseline_n))
    return baseline_n, window_n


@dataclass
class ServiceAnalysis:
    node: ServiceNode
    status: ServiceStatus
    graph: MetricDependencyGraph | None
    warnings: list[str]


def analyze_service(
    node: ServiceNode,
    series_map: Mapping[MetricKey, MetricSeries],
    econf: EntropyConfig,
    pconf: PCConfig,
    aconf: AnomalyConfig,
    settings: DiagnosisSettings = DiagnosisSettings(),
    computed_at_ms: int | None = None,
) -> ServiceAnalysis:
    """Scores, health report and learned metric graph for one service."""
    warnings: list[str] = []
    baseline_n, window_n = _split_lengths(series_map, econf, aconf, settings)

    zscores: dict[str, float] = {}
    windows: dict[str, np.ndarray] = {}
    for key, series in series_map.items():
        values = series.values()
        if len(values) < baseline_n + 1 or window_n == 0:
            warnings.append(f"{key.metric}: too short for baseline/window split")
            continue
        baseline = values[:baseline_n]
        detection = values[-window_n:]
        zscores[key.metric] = zscore_anomaly(baseline, detection)
        windows[key.metric] = detection

    health = None
    if windows:
        try:
            health = health_score(node, windows, econf, computed_at_ms=computed_at_ms)
        except NoUsableMetric as exc:
            warnings.append(str(exc))

    graph: MetricDependencyGraph | None = None
    if len(series_map) >= 2:
        interval = settings.interval_ms or _infer_interval(series_map)
        try:
            matrix = align(list(series_map.values()), interval_ms=interval)
            rows = matrix.values[: matrix.n_rows]  # full span; trim to baseline ticks
            n_base = min(matrix.n_rows, baseline_n)
            base_values = rows[:n_base][:: max(1, settings.pc_row_stride)]
            base_matrix = MetricMatrix(
                interval_ms=interval,
                start_ms=matrix.start_ms,
                columns=matrix.columns,
                values=base_values,
            )
            graph = learn_metric_graph(base_matrix, pconf)
        except EngineError as exc:
            warnings.append(f"structure learning skipped: {exc}")
    return ServiceAnalysis(
        node=node,
        status=ServiceStatus(health=health, metric_scores=zscores),
        graph=graph,
        warnings=warnings,
    )


def diagnose(
    series_by_key: Mapping[MetricKey, MetricSeries],
    topology: ServiceDependencyGraph,
    entry: ServiceNode,
    econf: EntropyConfig = EntropyConfig(),
    pconf: PCConfig = PCConfig(),
    aconf: AnomalyConfig = AnomalyConfig(),
    settings: DiagnosisSettings = DiagnosisSettings(),
    produced_at_ms: int | None = None,
) -> Diagnosis:
    """Full two-level diagnosis from raw series."""
    per_service: dict[ServiceNode, dict[MetricKey, MetricSeries]] = {}
    for key, series in series_by_key.items():
        per_service.setdefault(ServiceNode(key.ip, key.service), {})[key] = series

    statuses: dict[ServiceNode, ServiceStatus] = {}
    graphs: dict[ServiceNode, MetricDependencyGraph] = {}
    scores: dict[tuple[ServiceNode, str], float] = {}
    for node in topology.nodes:
        series_map = per_service.get(node)
        if not series_map:
            continue  # flagged as missing by service_anomaly
        analysis = analyze_service(
            node, series_map, econf, pconf, aconf, settings, computed_at_ms=produced_at_ms
        )
        for warning in analysis.warnings:
            log.debug("%s: %s", node.label(), warning)
        statuses[node] = analysis.status
        if analysis.graph is not None:
            graphs[node] = analysis.graph
        for metric, score in analysis.status.metric_scores.items():
            scores[(node, metric)] = score

    assessment = service_anomaly(statuses, topology, aconf, theta=settings.theta)
    return localize(
        topology,
        entry,
        assessment.anomalous,
        graphs,
        scores,
        aconf,
        produced_at_ms=produced_at_ms,
    )
