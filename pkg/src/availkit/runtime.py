"""Shared engine state behind the HTTP API, the CLI and the service loops.

One EngineRuntime owns the metric store, the method bus, the mutable
control parameters, the subscription schedulers, the cached reports and
the maintenance cycle.
"""

from __future__ import annotations

import itertools
import logging
import threading
import time
from dataclasses import dataclass

from .availability import availability as availability_stats
from .availability import load_event_log
from .bus import InputKind, MethodBus
from .causal import PCConfig
from .config import EngineConfig
from .entropy import EntropyConfig, HealthReport, health_score
from .errors import EngineError, NoUsableMetric, UnknownMethod
from .ingest import MetricStore
from .maintenance import MaintenanceAction, MaintenanceLoop, decide_action
from .model import MetricKey, ServiceDependencyGraph, ServiceNode, load_topology
from .pipeline import diagnose
from .rootcause import Diagnosis

log = logging.getLogger(__name__)


@dataclass
class Subscription:
    id: str
    method: str
    target: dict  # {"ip", "service"} or {"ip", "service", "metric"}
    params: dict
    period_s: int
    created_at_ms: int
    latest_payload: dict | None = None
    latest_error: str | None = None
    runs: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "method": self.method,
            "target": dict(self.target),
            "params": dict(self.params),
            "period_s": self.period_s,
            "created_at_ms": self.created_at_ms,
            "runs": self.runs,
            "latest_payload": self.latest_payload,
            "latest_error": self.latest_error,
        }


class EngineRuntime:
    def __init__(self, config: EngineConfig | None = None) -> None:
        self.config = config or EngineConfig()
        self.store = MetricStore.from_config(self.config.ingest)
        self.bus = MethodBus()
        self.topology = ServiceDependencyGraph(nodes=[], edges=[])
        if self.config.topology_path:
            self.topology = load_topology(self.config.topology_path)
        self._lock = threading.RLock()
        self._entropy = self.config.entropy
        self._pc = self.config.pc
        self._anomaly = self.config.anomaly
        self._policy = self.config.policy
        self._settings = self.config.diagnosis
        self._health_cache: dict[ServiceNode, HealthReport] = {}
        self._latest_diagnosis: Diagnosis | None = None
        self._subscriptions: dict[str, Subscription] = {}
        self._sub_stops: dict[str, threading.Event] = {}
        self._sub_counter = itertools.count(1)
        self._action_counter = itertools.count(1)
        self.actions: list[str] = []  # emitted maintenance messages (XML)
        self.loop: MaintenanceLoop | None = None

    # --- parameters ---

    @property
    def entropy_config(self) -> EntropyConfig:
        with self._lock:
            return self._entropy

    @property
    def pc_config(self) -> PCConfig:
        with self._lock:
            return self._pc

    @property
    def anomaly_config(self):
        with self._lock:
            return self._anomaly

    @property
    def policy(self):
        with self._lock:
            return self._policy

    def get_params(self) -> dict:
        with self._lock:
            cycle = self.loop.cycle_s if self.loop else self.config.maintenance_cycle_s
            return {
                "maintenance_cycle_s": cycle,
                "alarm_threshold": self._entropy.alarm_threshold,
                "alpha": self._pc.alpha,
            }

    def set_params(self, updates: dict) -> dict:
        """Atomically apply any of maintenance_cycle_s, alarm_threshold, alpha."""
        known = {"maintenance_cycle_s", "alarm_threshold", "alpha"}
        unknown = set(updates) - known
        if unknown:
            raise ValueError(f"unknown parameter(s): {sorted(unknown)}")
        with self._lock:
            if "alarm_threshold" in updates:
                value = float(updates["alarm_threshold"])
                self._entropy = EntropyConfig(
                    m=self._entropy.m,
                    r_fraction=self._entropy.r_fraction,
                    max_scale=self._entropy.max_scale,
                    window_len=self._entropy.window_len,
                    alarm_threshold=value,
                )
            if "alpha" in updates:
                value = float(updates["alpha"])
                self._pc = PCConfig(
                    alpha=value,
                    max_cond=self._pc.max_cond,
                    standardize=self._pc.standardize,
                    min_rows=self._pc.min_rows,
                )
            if "maintenance_cycle_s" in updates:
                cycle = int(updates["maintenance_cycle_s"])
                if cycle < 1:
                    raise ValueError("maintenance_cycle_s must be >= 1")
                self.config.maintenance_cycle_s = cycle
                if self.loop is not None:
                    self.loop.set_cycle_s(cycle)
            return self.get_params()

    # --- health ---

    def refresh_health(self, node: ServiceNode) -> HealthReport | None:
        """Compute and cache the entropy health report for one service."""
        series_map = self.store.series_for_service(node)
        if not series_map:
            return None
        econf = self.entropy_config
        windows = {}
        for key, series in series_map.items():
            values = series.values()
            if values.size:
                windows[key.metric] = values[-econf.window_len :]
        if not windows:
            return None
        try:
            report = health_score(node, windows, econf)
        except NoUsableMetric:
            return None
        with self._lock:
            self._health_cache[node] = report
        return report

    def health(self, node: ServiceNode) -> HealthReport | None:
        with self._lock:
            cached = self._health_cache.get(node)
        if cached is not None:
            return cached
        return self.refresh_health(node)

    # --- diagnosis ---

    def run_diagnosis(self, entry: ServiceNode) -> Diagnosis:
        diag = diagnose(
            self.store.all_series(),
            self.topology,
            entry,
            econf=self.entropy_config,
            pconf=self.pc_config,
            aconf=self.anomaly_config,
            settings=self._settings,
        )
        with self._lock:
            self._latest_diagnosis = diag
        return diag

    def latest_diagnosis(self) -> Diagnosis | None:
        with self._lock:
            return self._latest_diagnosis

    # --- availability ---

    def availability_report(self, node: ServiceNode):
        if not self.config.events_path:
            return None
        logs = load_event_log(self.config.events_path)
        events = logs.get(node)
        if not events:
            return None
        return availability_stats(events)

    # --- subscriptions ---

    def subscribe(self, method: str, target: dict, params: dict, period_s: int) -> Subscription:
        if not self.bus.has(method):
            raise UnknownMethod(f"no method named {method!r}")
        if period_s < 1:
            raise ValueError("period_s must be >= 1")
        with self._lock:
            sub_id = f"sub-{next(self._sub_counter)}"
            sub = Subscription(
                id=sub_id,
                method=method,
                target=dict(target),
                params=dict(params),
                period_s=period_s,
                created_at_ms=int(time.time() * 1000),
            )
            self._subscriptions[sub_id] = sub
            stop = threading.Event()
            self._sub_stops[sub_id] = stop
        thread = threading.Thread(
            target=self._subscription_loop, args=(sub, stop),
            name=f"subscription-{sub_id}", daemon=True,
        )
        thread.start()
        return sub

    def unsubscribe(self, sub_id: str) -> bool:
        with self._lock:
            sub = self._subscriptions.pop(sub_id, None)
            stop = self._sub_stops.pop(sub_id, None)
        if stop is not None:
            stop.set()
        return sub is not None

    def subscriptions(self) -> list[Subscription]:
        with self._lock:
            return [self._subscriptions[k] for k in sorted(self._subscriptions)]

    def _subscription_input(self, sub: Subscription):
        desc = self.bus.describe(sub.method)
        ip = str(sub.target.get("ip", ""))
        service = str(sub.target.get("service", ""))
        node = ServiceNode(ip, service)
        if desc.input_kind is InputKind.single_series:
            metric = sub.target.get("metric")
            if not metric:
                raise ValueError(f"method {sub.method!r} needs a metric in the target")
            return self.store.series(MetricKey(ip, service, str(metric)))
        if desc.input_kind is InputKind.metric_matrix:
            from .model import align

            series_map = self.store.series_for_service(node)
            if not series_map:
                raise ValueError(f"no data for {node.label()}")
            return align(list(series_map.values()), interval_ms=self._infer_interval(series_map))
        if desc.input_kind is InputKind.event_log:
            if not self.config.events_path:
                raise ValueError("no events file configured")
            logs = load_event_log(self.config.events_path)
            return logs.get(node, [])
        return {n.label(): self.store.series_for_service(n) for n in self.topology.nodes}

    @staticmethod
    def _infer_interval(series_map) -> int:
        from .pipeline import _infer_interval

        return _infer_interval(series_map)

    def run_subscription_once(self, sub: Subscription) -> None:
        try:
            input_value = self._subscription_input(sub)
            report = self.bus.run(sub.method, input_value, sub.params, target=sub.target)
            sub.latest_payload = report.payload
            sub.latest_error = None
            if sub.method == "mse" and "service" in sub.target:
                # keep the health cache warm for the GET route
                self.refresh_health(ServiceNode(sub.target["ip"], sub.target["service"]))
        except (EngineError, ValueError) as exc:
            sub.latest_error = str(exc)
        finally:
            sub.runs += 1

    def _subscription_loop(self, sub: Subscription, stop: threading.Event) -> None:
        while not stop.wait(timeout=sub.period_s):
            self.run_subscription_once(sub)

    # --- maintenance ---

    def entry_node(self) -> ServiceNode | None:
        if self.config.entry is not None:
            return self.config.entry
        if self.topology.nodes:
            return self.topology.nodes[0]
        return None

    def maintenance_evaluate(self) -> MaintenanceAction | None:
        """One maintenance evaluation: health refresh, diagnose on alarm."""
        entry = self.entry_node()
        if entry is None:
            return None
        alarmed = False
        for node in self.topology.nodes:
            report = self.refresh_health(node)
            if report is not None and report.alarm:
                alarmed = True
        if not alarmed:
            return None
        diag = self.run_diagnosis(entry)
        cycle = self.loop.cycle_s if self.loop else self.config.maintenance_cycle_s
        return decide_action(
            diag,
            self.policy,
            action_id=f"act-{next(self._action_counter)}",
            issued_at_ms=int(time.time() * 1000),
            cycle_s=cycle,
        )

    def emit_action(self, xml: str) -> None:
        with self._lock:
            self.actions.append(xml)
        log.info("maintenance action emitted:\n%s", xml)

    def start_maintenance_loop(self) -> MaintenanceLoop:
        loop = MaintenanceLoop(
            self.maintenance_evaluate, self.emit_action, self.config.maintenance_cycle_s
        )
        self.loop = loop
        thread = threading.Thread(target=loop.run, name="maintenance-cycle", daemon=True)
        thread.start()
        return loop

    def stop(self) -> None:
        if self.loop is not None:
            self.loop.stop()
        with self._lock:
            stops = list(self._sub_stops.values())
        for stop in stops:
            stop.set()
