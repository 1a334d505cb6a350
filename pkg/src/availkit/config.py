"""Engine configuration file: one JSON document holding every knob.

Every section is optional; omitted sections fall back to the defaults
declared on the corresponding config dataclass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .causal import PCConfig
from .entropy import EntropyConfig
from .errors import FileUnreadable, MalformedRecord
from .ingest import IngestConfig
from .maintenance import ActionKind, MaintenancePolicy, default_policy
from .model import ServiceNode
from .pipeline import DiagnosisSettings
from .rootcause import AnomalyConfig


@dataclass
class EngineConfig:
    ingest: IngestConfig = field(default_factory=IngestConfig)
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    pc: PCConfig = field(default_factory=PCConfig)
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)
    policy: MaintenancePolicy = field(default_factory=default_policy)
    diagnosis: DiagnosisSettings = field(default_factory=DiagnosisSettings)
    topology_path: str | None = None
    events_path: str | None = None
    entry: ServiceNode | None = None
    maintenance_cycle_s: int = 300


def _policy_from_dict(doc: dict) -> MaintenancePolicy:
    base = default_policy()
    costs = dict(base.costs)
    for name, cost in doc.get("costs", {}).items():
        costs[ActionKind(name)] = float(cost)
    applicability = {cat: set(kinds) for cat, kinds in base.applicability.items()}
    for cat, kinds in doc.get("applicability", {}).items():
        applicability[cat] = {ActionKind(k) for k in kinds}
    rules = [tuple(rule) for rule in doc.get("category_rules", [])] or list(base.category_rules)
    return MaintenancePolicy(costs=costs, applicability=applicability, category_rules=rules)


def policy_to_dict(policy: MaintenancePolicy) -> dict:
    return {
        "costs": {kind.value: cost for kind, cost in policy.costs.items()},
        "applicability": {
            cat: sorted(k.value for k in kinds) for cat, kinds in policy.applicability.items()
        },
        "category_rules": [list(rule) for rule in policy.category_rules],
    }


def load_config(path) -> EngineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc, base_dir=Path(path).parent)


def config_from_dict(doc: dict, base_dir: Path | None = None) -> EngineConfig:
    def resolve(p):
        if p is None:
            return None
        path = Path(p)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return str(path)

    entry = None
    if doc.get("entry"):
        entry = ServiceNode(str(doc["entry"]["ip"]), str(doc["entry"]["service"]))
    return EngineConfig(
        ingest=IngestConfig(**doc.get("ingest", {})),
        entropy=EntropyConfig(**doc.get("entropy", {})),
        pc=PCConfig(**doc.get("pc", {})),
        anomaly=AnomalyConfig(**doc.get("anomaly", {})),
        policy=_policy_from_dict(doc.get("policy", {})),
        diagnosis=DiagnosisSettings(**doc.get("diagnosis", {})),
        topology_path=resolve(doc.get("topology_path")),
        events_path=resolve(doc.get("events_path")),
        entry=entry,
        maintenance_cycle_s=int(doc.get("maintenance_cycle_s", 300)),
    )
