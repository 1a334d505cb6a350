"""Canonical simulation scenarios used by the demos and the test harness.

three_tier_spec models a web -> app -> db deployment with plain
linear-Gaussian metrics (exact PC assumptions, clean z-score baselines);
degradation_spec layers periodic workload texture on the db so that its
healthy phase is regular and a mem_leak + io_saturation phase visibly
raises the entropy health score.
"""

from __future__ import annotations

from .faultsim import FaultEvent, FaultKind, ServiceModel, SimSpec
from .model import ServiceDependencyGraph, ServiceNode

WEB = ServiceNode("10.0.0.1", "web")
APP = ServiceNode("10.0.0.2", "app")
DB = ServiceNode("10.0.0.3", "db")

DB_METRICS = ["cpu_util", "mem_used", "io_wait", "threads_connected", "latency"]


def _db_model(seasonal: bool) -> ServiceModel:
    k = len(DB_METRICS)
    return ServiceModel(
        node=DB,
        metrics=DB_METRICS,
        # cpu, mem and io drive latency; threads_connected is a set-point
        # gauge with no load coupling
        edges=[(0, 4), (1, 4), (2, 4)],
        weights=[0.8, 0.5, 0.7],
        noise_scales=[0.3] * k if seasonal else [1.0] * k,
        measure_noise=[0.15] * k if seasonal else [0.25] * k,
        seasonal_amp=[3.0, 2.5, 3.5, 2.0, 3.0] if seasonal else None,
        seasonal_period=[90.0, 110.0, 130.0, 150.0, 170.0] if seasonal else None,
        seasonal_phase=[0.0, 0.9, 1.8, 2.7, 3.6] if seasonal else None,
        interface_metric=4,  # latency is what callers see
    )


def _mid_tier_model(node: ServiceNode, seasonal: bool) -> ServiceModel:
    metrics = ["cpu_util", "mem_used", "backend_latency", "latency"]
    k = len(metrics)
    return ServiceModel(
        node=node,
        metrics=metrics,
        edges=[(0, 3), (1, 3), (2, 3)],
        weights=[0.7, 0.4, 0.9],
        noise_scales=[0.3] * k if seasonal else [1.0] * k,
        measure_noise=[0.15] * k if seasonal else [0.25] * k,
        seasonal_amp=[2.5, 2.0, 0.0, 0.0] if seasonal else None,
        seasonal_period=[95.0, 125.0, 0.0, 0.0] if seasonal else None,
        seasonal_phase=[0.5, 1.4, 0.0, 0.0] if seasonal else None,
        interface_metric=3,
        coupled_metric=2,  # backend_latency follows the callee's latency
        coupling_weight=0.8,
    )


def three_tier_spec(
    seed: int,
    duration_ticks: int = 3600,
    tick_ms: int = 1000,
    seasonal: bool = False,
) -> SimSpec:
    """web -> app -> db chain; entry point is the web service."""
    topology = ServiceDependencyGraph(nodes=[WEB, APP, DB], edges=[(0, 1), (1, 2)])
    services = [
        _mid_tier_model(WEB, seasonal),
        _mid_tier_model(APP, seasonal),
        _db_model(seasonal),
    ]
    return SimSpec(
        topology=topology,
        services=services,
        tick_ms=tick_ms,
        duration_ticks=duration_ticks,
        faults=[],
        seed=seed,
    )


# metric each fault kind lands on, and a magnitude that clears the
# detection thresholds without trivializing the run
FAULT_TARGETS: dict[FaultKind, tuple[str, float]] = {
    FaultKind.cpu_hog: ("cpu_util", 8.0),
    FaultKind.mem_leak: ("mem_used", 8.0),
    FaultKind.io_saturation: ("io_wait", 24.0),
    FaultKind.config_error: ("threads_connected", 8.0),
    FaultKind.dependency_slowdown: ("latency", 8.0),
}


def three_tier_with_fault(
    kind: FaultKind,
    seed: int,
    start_tick: int = 2400,
    end_tick: int = 3600,
    duration_ticks: int = 3600,
) -> SimSpec:
    """The chain with one fault of the given kind injected at the db."""
    spec = three_tier_spec(seed, duration_ticks=duration_ticks)
    metric, magnitude = FAULT_TARGETS[kind]
    spec.faults = [FaultEvent(start_tick, end_tick, (DB, metric), kind, magnitude)]
    return spec


def degradation_spec(
    seed: int,
    start_tick: int = 2400,
    end_tick: int = 3600,
    duration_ticks: int = 3600,
) -> SimSpec:
    """Slow degradation at the db: a memory leak plus io saturation that
    turns its regular workload texture noisy. Healthy windows score low
    entropy, failure windows high."""
    spec = three_tier_spec(seed, duration_ticks=duration_ticks, seasonal=True)
    spec.faults = [
        FaultEvent(start_tick, end_tick, (DB, "mem_used"), FaultKind.mem_leak, 2.0),
        FaultEvent(start_tick, end_tick, (DB, "cpu_util"), FaultKind.io_saturation, 20.0),
        FaultEvent(start_tick, end_tick, (DB, "io_wait"), FaultKind.io_saturation, 20.0),
        FaultEvent(start_tick, end_tick, (DB, "threads_connected"), FaultKind.io_saturation, 20.0),
        FaultEvent(start_tick, end_tick, (DB, "latency"), FaultKind.io_saturation, 20.0),
    ]
    return spec
