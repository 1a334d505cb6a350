"""Deterministic multi-tier workload and fault-injection simulator.

Each service carries a linear-Gaussian structural model over its metrics
(an acyclic within-tick DAG: x_j = sum_k w_jk * x_k + e_j), and callers
are coupled to their designated callee's interface metric with a one-tick
lag. Faults perturb means, drifts, noise scales or coupling weights while
active; a service is "down" while any of its metrics sits more than six
stationary sigmas from its no-fault mean. Identical seeds give
byte-identical output files.

Three optional per-metric knobs extend the plain white-noise model: an
AR(1) smoothing coefficient on the structural innovations, a separate
white observation-noise scale, and a deterministic seasonal level
(periodic workload). All default to zero (the plain model); degradation
scenarios use them to give healthy traffic a regular texture that
saturation faults then disrupt, which is what makes entropy-based health
scoring observable at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .availability import UpDownEvent, serialize_event_line
from .errors import DegenerateSpec, InvalidSpec
from .ingest import serialize_metric_line
from .model import (
    MetricKey,
    MetricSample,
    ServiceDependencyGraph,
    ServiceNode,
    save_topology,
    topological_order,
    validate_topology,
)


class FaultKind(Enum):
    cpu_hog = "cpu_hog"
    mem_leak = "mem_leak"
    io_saturation = "io_saturation"
    config_error = "config_error"
    dependency_slowdown = "dependency_slowdown"


@dataclass(frozen=True)
class FaultEvent:
    start_tick: int
    end_tick: int
    target: tuple[ServiceNode, str]
    kind: FaultKind
    magnitude: float


@dataclass
class ServiceModel:
    """Structural model of one service's metrics."""

    node: ServiceNode
    metrics: list[str]
    edges: list[tuple[int, int]] = field(default_factory=list)  # (parent, child)
    weights: list[float] = field(default_factory=list)
    noise_scales: list[float] = field(default_factory=list)
    base_levels: list[float] | None = None
    smoothing: list[float] | None = None        # AR(1) on innovations, default 0
    measure_noise: list[float] | None = None    # white observation noise, default 0
    seasonal_amp: list[float] | None = None     # periodic workload amplitude, default 0
    seasonal_period: list[float] | None = None  # period in ticks (0 = none)
    seasonal_phase: list[float] | None = None   # phase offset in radians
    interface_metric: int = 0                   # exported to callers
    coupled_metric: int | None = None           # driven by the designated callee
    coupling_weight: float = 0.0

    def __post_init__(self) -> None:
        k = len(self.metrics)
        if not self.noise_scales:
            self.noise_scales = [1.0] * k
        if self.base_levels is None:
            self.base_levels = [0.0] * k
        if self.smoothing is None:
            self.smoothing = [0.0] * k
        if self.measure_noise is None:
            self.measure_noise = [0.0] * k
        if self.seasonal_amp is None:
            self.seasonal_amp = [0.0] * k
        if self.seasonal_period is None:
            self.seasonal_period = [0.0] * k
        if self.seasonal_phase is None:
            self.seasonal_phase = [0.0] * k


@dataclass
class SimSpec:
    topology: ServiceDependencyGraph
    services: list[ServiceModel]
    tick_ms: int = 1000
    duration_ticks: int = 5000
    faults: list[FaultEvent] = field(default_factory=list)
    seed: int = 0

    def violations(self) -> list[str]:
        problems = [f"topology: {v.kind} {v.detail}" for v in validate_topology(self.topology)]
        if len(self.services) != len(self.topology.nodes):
            problems.append("one service model per topology node is required")
            return problems
        for model, node in zip(self.services, self.topology.nodes):
            name = node.label()
            if model.node != node:
                problems.append(f"{name}: model node does not match topology node")
            k = len(model.metrics)
            if k == 0:
                problems.append(f"{name}: no metrics")
                continue
            if len(set(model.metrics)) != k:
                problems.append(f"{name}: duplicate metric names")
            if len(model.weights) != len(model.edges):
                problems.append(f"{name}: weights not aligned with edges")
            if topological_order(k, model.edges) is None:
                problems.append(f"{name}: metric dependency model has a cycle")
            for i, j in model.edges:
                if not (0 <= i < k and 0 <= j < k):
                    problems.append(f"{name}: edge ({i},{j}) out of range")
            for arr, label in (
                (model.noise_scales, "noise_scales"),
                (model.base_levels, "base_levels"),
                (model.smoothing, "smoothing"),
                (model.measure_noise, "measure_noise"),
                (model.seasonal_amp, "seasonal_amp"),
                (model.seasonal_period, "seasonal_period"),
                (model.seasonal_phase, "seasonal_phase"),
            ):
                if arr is not None and len(arr) != k:
                    problems.append(f"{name}: {label} not aligned with metrics")
            if model.smoothing and any(not (0.0 <= phi < 1.0) for phi in model.smoothing):
                problems.append(f"{name}: smoothing coefficients must lie in [0, 1)")
            if not (0 <= model.interface_metric < k):
                problems.append(f"{name}: interface_metric out of range")
            if model.coupled_metric is not None and not (0 <= model.coupled_metric < k):
                problems.append(f"{name}: coupled_metric out of range")
        by_node = {m.node: m for m in self.services}
        for fault in self.faults:
            node, metric = fault.target
            model = by_node.get(node)
            if model is None:
                problems.append(f"fault targets unknown service {node.label()}")
            elif metric not in model.metrics:
                problems.append(f"fault targets unknown metric {node.label()}/{metric}")
            if not (0 <= fault.start_tick < fault.end_tick <= self.duration_ticks):
                problems.append(
                    f"fault window [{fault.start_tick},{fault.end_tick}) outside run"
                )
            if fault.magnitude <= 0:
                problems.append("fault magnitude must be positive")
        if self.tick_ms <= 0 or self.duration_ticks <= 0:
            problems.append("tick_ms and duration_ticks must be positive")
        return problems

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise InvalidSpec("; ".join(problems))


@dataclass
class _Assembled:
    columns: list[MetricKey]
    offsets: list[int]              # global index of each service's metric 0
    minv: np.ndarray                # (I - W)^-1 over all metrics
    coupling: np.ndarray            # one-tick-lag matrix C
    phi: np.ndarray                 # AR(1) smoothing per metric
    noise: np.ndarray               # innovation scales
    measure: np.ndarray             # observation noise scales
    base: np.ndarray
    seasonal_amp: np.ndarray
    seasonal_omega: np.ndarray      # 2*pi/period (0 when no seasonality)
    seasonal_phase: np.ndarray
    coupled_rows: dict[ServiceNode, int]  # global row the service's coupling enters

    def seasonal_at(self, tick: int) -> np.ndarray:
        return self.seasonal_amp * np.sin(self.seasonal_omega * tick + self.seasonal_phase)


def _assemble(spec: SimSpec) -> _Assembled:
    offsets: list[int] = []
    columns: list[MetricKey] = []
    total = 0
    for model in spec.services:
        offsets.append(total)
        for metric in model.metrics:
            columns.append(MetricKey(model.node.ip, model.node.service, metric))
        total += len(model.metrics)

    w = np.zeros((total, total))
    for model, off in zip(spec.services, offsets):
        for (parent, child), weight in zip(model.edges, model.weights):
            w[off + child, off + parent] = weight

    coupling = np.zeros((total, total))
    coupled_rows: dict[ServiceNode, int] = {}
    node_index = {node: k for k, node in enumerate(spec.topology.nodes)}
    first_callee: dict[int, int] = {}
    for i, j in spec.topology.edges:
        first_callee.setdefault(i, j)
    for model, off in zip(spec.services, offsets):
        if model.coupled_metric is None or model.coupling_weight == 0.0:
            continue
        caller = node_index[model.node]
        callee = first_callee.get(caller)
        if callee is None:
            continue
        callee_model = spec.services[callee]
        src = offsets[callee] + callee_model.interface_metric
        row = off + model.coupled_metric
        coupling[row, src] = model.coupling_weight
        coupled_rows[model.node] = row

    minv = np.linalg.inv(np.eye(total) - w)
    phi = np.concatenate([np.asarray(m.smoothing, dtype=float) for m in spec.services])
    noise = np.concatenate([np.asarray(m.noise_scales, dtype=float) for m in spec.services])
    measure = np.concatenate([np.asarray(m.measure_noise, dtype=float) for m in spec.services])
    base = np.concatenate([np.asarray(m.base_levels, dtype=float) for m in spec.services])
    amp = np.concatenate([np.asarray(m.seasonal_amp, dtype=float) for m in spec.services])
    period = np.concatenate([np.asarray(m.seasonal_period, dtype=float) for m in spec.services])
    phase = np.concatenate([np.asarray(m.seasonal_phase, dtype=float) for m in spec.services])
    omega = np.where(period > 0, 2.0 * np.pi / np.where(period > 0, period, 1.0), 0.0)
    return _Assembled(
        columns, offsets, minv, coupling, phi, noise, measure, base,
        amp, omega, phase, coupled_rows,
    )


@dataclass
class StationaryStats:
    mean: np.ndarray        # no-fault observed mean per metric
    std: np.ndarray         # no-fault observed stddev per metric
    longrun_sd: np.ndarray  # sqrt of the long-run variance (for mean SEs)
    columns: list[MetricKey]


def stationary_stats(spec: SimSpec) -> StationaryStats:
    """Analytic no-fault stationary mean/std of every observed metric.

    The system is linear with a one-tick lag, so the stationary covariance
    solves a discrete Lyapunov equation (solved by fixed-point iteration;
    the coupling part is nilpotent for acyclic topologies, smoothing keeps
    the spectral radius below one). The deterministic seasonal level is
    excluded here; the down-rule compensates for it tick by tick.
    """
    asm = _assemble(spec)
    p = len(asm.columns)
    mc = asm.minv @ asm.coupling
    mphi = asm.minv @ np.diag(asm.phi)
    a = np.block([[mc, mphi], [np.zeros((p, p)), np.diag(asm.phi)]])
    g = np.vstack([asm.minv, np.eye(p)])
    q = g @ np.diag(asm.noise**2) @ g.T

    sigma = q.copy()
    for _ in range(200000):
        nxt = a @ sigma @ a.T + q
        delta = float(np.max(np.abs(nxt - sigma)))
        sigma = nxt
        if delta < 1e-13 * (1.0 + float(np.max(np.abs(sigma)))):
            break
    var_u = np.diag(sigma)[:p]
    std = np.sqrt(var_u + asm.measure**2)

    eye2 = np.eye(2 * p)
    s_lr = np.linalg.solve(eye2 - a, np.linalg.solve(eye2 - a, q.T).T)
    longrun = np.sqrt(np.maximum(np.diag(s_lr)[:p], 0.0) + asm.measure**2)
    return StationaryStats(mean=asm.base.copy(), std=std, longrun_sd=longrun, columns=asm.columns)


@dataclass
class SimFrames:
    """In-memory simulation result."""

    columns: list[MetricKey]
    values: np.ndarray                       # (ticks, metrics) observed values
    events: list[UpDownEvent]
    labels: list[dict]
    stats: StationaryStats


def simulate_frames(spec: SimSpec) -> SimFrames:
    """Run the simulation and keep everything in memory."""
    spec.validate()
    asm = _assemble(spec)
    stats = stationary_stats(spec)
    p = len(asm.columns)
    rng = np.random.default_rng(spec.seed)

    col_index = {key: g for g, key in enumerate(asm.columns)}
    service_of: dict[ServiceNode, list[int]] = {}
    for g, key in enumerate(asm.columns):
        service_of.setdefault(ServiceNode(key.ip, key.service), []).append(g)

    def fault_globals(fault: FaultEvent) -> int:
        node, metric = fault.target
        return col_index[MetricKey(node.ip, node.service, metric)]

    values = np.zeros((spec.duration_ticks, p))
    eps = np.zeros(p)
    u = np.zeros(p)
    events: list[UpDownEvent] = []
    state_down = {node: False for node in spec.topology.nodes}
    for node in spec.topology.nodes:
        events.append(UpDownEvent(ts_ms=0, target=node, state="up"))

    for t in range(spec.duration_ticks):
        shift = np.zeros(p)
        s_eff = asm.noise.copy()
        mn_eff = asm.measure.copy()
        coupling = asm.coupling
        coupling_scaled = False
        for fault in spec.faults:
            g = fault_globals(fault)
            sigma_g = stats.std[g]
            active = fault.start_tick <= t < fault.end_tick
            if fault.kind is FaultKind.config_error:
                if t >= fault.start_tick:  # permanent step
                    shift[g] += fault.magnitude * sigma_g
                continue
            if not active:
                continue
            if fault.kind is FaultKind.cpu_hog:
                shift[g] += fault.magnitude * sigma_g
            elif fault.kind is FaultKind.mem_leak:
                shift[g] += fault.magnitude * sigma_g * (t - fault.start_tick) / 100.0
            elif fault.kind is FaultKind.io_saturation:
                if mn_eff[g] > 0.0:
                    mn_eff[g] *= 1.0 + fault.magnitude
                else:
                    s_eff[g] *= 1.0 + fault.magnitude
            elif fault.kind is FaultKind.dependency_slowdown:
                shift[g] += fault.magnitude * sigma_g
                row = asm.coupled_rows.get(fault.target[0])
                if row is not None:
                    if not coupling_scaled:
                        coupling = asm.coupling.copy()
                        coupling_scaled = True
                    coupling[row, :] *= 1.0 + fault.magnitude
        eta = rng.normal(size=p) * s_eff
        eps = asm.phi * eps + eta
        u = asm.minv @ (coupling @ u + eps + shift)
        seasonal = asm.seasonal_at(t)
        obs = asm.base + seasonal + u + rng.normal(size=p) * mn_eff
        values[t] = obs

        if t >= 1:
            expected = stats.mean + seasonal  # no-fault mean at this tick
            for node, indices in service_of.items():
                down = bool(
                    np.any(np.abs(obs[indices] - expected[indices]) > 6.0 * stats.std[indices])
                )
                if down != state_down[node]:
                    state_down[node] = down
                    events.append(
                        UpDownEvent(
                            ts_ms=t * spec.tick_ms,
                            target=node,
                            state="down" if down else "up",
                        )
                    )

    labels = [
        {
            "tick_start": f.start_tick,
            "tick_end": f.end_tick,
            "ip": f.target[0].ip,
            "service": f.target[0].service,
            "metric": f.target[1],
            "kind": f.kind.value,
        }
        for f in spec.faults
    ]
    return SimFrames(columns=asm.columns, values=values, events=events, labels=labels, stats=stats)


@dataclass
class SimOutput:
    metrics_path: Path
    labels_path: Path
    events_path: Path
    topology_path: Path
    n_samples: int
    n_ticks: int


def simulate(spec: SimSpec, out_dir) -> SimOutput:
    """Run the simulation and write the four output files.

    metrics.ndjson uses the ingestion line format, events.ndjson the
    event-log format, topology.json the topology document, labels.ndjson
    one ground-truth record per injected fault.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = simulate_frames(spec)

    metrics_path = out / "metrics.ndjson"
    n_samples = 0
    with open(metrics_path, "w", encoding="utf-8") as fh:
        for t in range(frames.values.shape[0]):
            ts = t * spec.tick_ms
            row = frames.values[t]
            for g, key in enumerate(frames.columns):
                sample = MetricSample(
                    ts_ms=ts, ip=key.ip, service=key.service, metric=key.metric,
                    value=float(row[g]),
                )
                fh.write(serialize_metric_line(sample))
                n_samples += 1

    events_path = out / "events.ndjson"
    with open(events_path, "w", encoding="utf-8") as fh:
        for event in frames.events:
            fh.write(serialize_event_line(event))

    labels_path = out / "labels.ndjson"
    with open(labels_path, "w", encoding="utf-8") as fh:
        for label in frames.labels:
            fh.write(json.dumps(label, separators=(", ", ": ")) + "\n")

    topology_path = out / "topology.json"
    save_topology(spec.topology, topology_path)

    return SimOutput(
        metrics_path=metrics_path,
        labels_path=labels_path,
        events_path=events_path,
        topology_path=topology_path,
        n_samples=n_samples,
        n_ticks=spec.duration_ticks,
    )


def generate_random_spec(
    n_services: int,
    metrics_per_service: int,
    expected_degree: float,
    seed: int,
    duration_ticks: int = 5000,
    tick_ms: int = 1000,
) -> SimSpec:
    """Random tree topology plus random per-service metric DAGs.

    The tree is rooted at service 0 (the entry); metric DAG edges are
    sampled over a random topological order with probability
    expected_degree/(metrics_per_service - 1), weights uniform in
    [0.5, 1.5] with random sign, unit noise.
    """
    if n_services < 1 or metrics_per_service < 2:
        raise DegenerateSpec("need n_services >= 1 and metrics_per_service >= 2")
    if expected_degree < 0:
        raise DegenerateSpec("expected_degree must be non-negative")
    rng = np.random.default_rng(seed)

    nodes = [ServiceNode(f"10.0.0.{k + 1}", f"svc{k}") for k in range(n_services)]
    edges = [(int(rng.integers(0, k)), k) for k in range(1, n_services)]
    topology = ServiceDependencyGraph(nodes=nodes, edges=edges)

    p_edge = min(1.0, expected_degree / (metrics_per_service - 1))
    services: list[ServiceModel] = []
    for node in nodes:
        order = [int(v) for v in rng.permutation(metrics_per_service)]
        dag_edges: list[tuple[int, int]] = []
        weights: list[float] = []
        for a in range(metrics_per_service):
            for b in range(a + 1, metrics_per_service):
                if rng.uniform() < p_edge:
                    dag_edges.append((order[a], order[b]))
                    sign = 1.0 if rng.uniform() < 0.5 else -1.0
                    weights.append(float(sign * rng.uniform(0.5, 1.5)))
        services.append(
            ServiceModel(
                node=node,
                metrics=[f"m{i}" for i in range(metrics_per_service)],
                edges=dag_edges,
                weights=weights,
                noise_scales=[1.0] * metrics_per_service,
                interface_metric=order[-1],
                coupled_metric=order[0],
                coupling_weight=1.0,
            )
        )
    return SimSpec(
        topology=topology,
        services=services,
        tick_ms=tick_ms,
        duration_ticks=duration_ticks,
        faults=[],
        seed=seed,
    )


# --- spec (de)serialization for the CLI ---

def spec_to_dict(spec: SimSpec) -> dict:
    return {
        "tick_ms": spec.tick_ms,
        "duration_ticks": spec.duration_ticks,
        "seed": spec.seed,
        "topology": spec.topology.to_dict(),
        "services": [
            {
                "ip": m.node.ip,
                "service": m.node.service,
                "metrics": list(m.metrics),
                "edges": [[i, j] for i, j in m.edges],
                "weights": list(m.weights),
                "noise_scales": list(m.noise_scales),
                "base_levels": list(m.base_levels or []),
                "smoothing": list(m.smoothing or []),
                "measure_noise": list(m.measure_noise or []),
                "seasonal_amp": list(m.seasonal_amp or []),
                "seasonal_period": list(m.seasonal_period or []),
                "seasonal_phase": list(m.seasonal_phase or []),
                "interface_metric": m.interface_metric,
                "coupled_metric": m.coupled_metric,
                "coupling_weight": m.coupling_weight,
            }
            for m in spec.services
        ],
        "faults": [
            {
                "start_tick": f.start_tick,
                "end_tick": f.end_tick,
                "ip": f.target[0].ip,
                "service": f.target[0].service,
                "metric": f.target[1],
                "kind": f.kind.value,
                "magnitude": f.magnitude,
            }
            for f in spec.faults
        ],
    }


def spec_from_dict(doc: dict) -> SimSpec:
    topology = ServiceDependencyGraph.from_dict(doc["topology"])
    services = []
    for svc in doc.get("services", []):
        node = ServiceNode(str(svc["ip"]), str(svc["service"]))
        services.append(
            ServiceModel(
                node=node,
                metrics=[str(m) for m in svc["metrics"]],
                edges=[(int(e[0]), int(e[1])) for e in svc.get("edges", [])],
                weights=[float(w) for w in svc.get("weights", [])],
                noise_scales=[float(v) for v in svc.get("noise_scales", [])] or None,
                base_levels=[float(v) for v in svc.get("base_levels", [])] or None,
                smoothing=[float(v) for v in svc.get("smoothing", [])] or None,
                measure_noise=[float(v) for v in svc.get("measure_noise", [])] or None,
                seasonal_amp=[float(v) for v in svc.get("seasonal_amp", [])] or None,
                seasonal_period=[float(v) for v in svc.get("seasonal_period", [])] or None,
                seasonal_phase=[float(v) for v in svc.get("seasonal_phase", [])] or None,
                interface_metric=int(svc.get("interface_metric", 0)),
                coupled_metric=(
                    None if svc.get("coupled_metric") is None else int(svc["coupled_metric"])
                ),
                coupling_weight=float(svc.get("coupling_weight", 0.0)),
            )
        )
    faults = []
    for f in doc.get("faults", []):
        faults.append(
            FaultEvent(
                start_tick=int(f["start_tick"]),
                end_tick=int(f["end_tick"]),
                target=(ServiceNode(str(f["ip"]), str(f["service"])), str(f["metric"])),
                kind=FaultKind(str(f["kind"])),
                magnitude=float(f["magnitude"]),
            )
        )
    return SimSpec(
        topology=topology,
        services=services,
        tick_ms=int(doc.get("tick_ms", 1000)),
        duration_ticks=int(doc.get("duration_ticks", 5000)),
        faults=faults,
        seed=int(doc.get("seed", 0)),
    )


def load_spec(path) -> SimSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def save_spec(spec: SimSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2)
        fh.write("\n")
