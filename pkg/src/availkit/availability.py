"""Failure modeling over up/down event logs, plus entropy-trend forecasting.

MTTF and MTTR are means over completed intervals only; a trailing open
interval is excluded rather than guessed at. The failure-time forecast is
an ordinary least squares line over the trailing entropy scores, solved
for the threshold crossing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    FileUnreadable,
    MalformedRecord,
    NoCompletedInterval,
    NonAlternatingLog,
    TooFewPoints,
)
from .model import ServiceNode

UP = "up"
DOWN = "down"


@dataclass(frozen=True)
class UpDownEvent:
    ts_ms: int
    target: ServiceNode
    state: str  # "up" | "down"

    def __post_init__(self) -> None:
        if self.state not in (UP, DOWN):
            raise ValueError(f"state must be 'up' or 'down', got {self.state!r}")


@dataclass(frozen=True)
class AvailabilityReport:
    target: ServiceNode
    mttf_ms: float
    mttr_ms: float
    availability: float
    n_failures: int

    def to_dict(self) -> dict:
        return {
            "target": {"ip": self.target.ip, "service": self.target.service},
            "mttf_ms": self.mttf_ms,
            "mttr_ms": self.mttr_ms,
            "availability": self.availability,
            "n_failures": self.n_failures,
        }


def _check_alternating(log: Sequence[UpDownEvent]) -> None:
    last_ts = None
    last_state = None
    for event in log:
        if last_ts is not None and event.ts_ms <= last_ts:
            raise NonAlternatingLog(f"timestamps not strictly increasing at {event.ts_ms}")
        if last_state is not None and event.state == last_state:
            raise NonAlternatingLog(f"state {event.state!r} repeats at {event.ts_ms}")
        last_ts = event.ts_ms
        last_state = event.state


def _intervals(log: Sequence[UpDownEvent], opening: str) -> list[float]:
    """Durations of completed intervals that start with `opening`."""
    _check_alternating(log)
    out: list[float] = []
    open_ts = None
    for event in log:
        if event.state == opening:
            open_ts = event.ts_ms
        elif open_ts is not None:
            out.append(float(event.ts_ms - open_ts))
            open_ts = None
    return out


def mttf(log: Sequence[UpDownEvent]) -> float:
    """Mean completed up-interval duration in milliseconds."""
    ups = _intervals(log, UP)
    if not ups:
        raise NoCompletedInterval("log holds no completed up interval")
    return float(np.mean(ups))


def mttr(log: Sequence[UpDownEvent]) -> float:
    """Mean completed down-interval duration in milliseconds."""
    downs = _intervals(log, DOWN)
    if not downs:
        raise NoCompletedInterval("log holds no completed down interval")
    return float(np.mean(downs))


def availability(log: Sequence[UpDownEvent]) -> AvailabilityReport:
    """Steady-state availability MTTF/(MTTF+MTTR) with failure count."""
    target = log[0].target if log else ServiceNode("0.0.0.0", "unknown")
    up_mean = mttf(log)
    down_mean = mttr(log)
    downs = _intervals(log, DOWN)
    return AvailabilityReport(
        target=target,
        mttf_ms=up_mean,
        mttr_ms=down_mean,
        availability=up_mean / (up_mean + down_mean),
        n_failures=len(downs),
    )


@dataclass(frozen=True)
class Forecast:
    kind: str  # "crossing" | "already_exceeded" | "no_trend"
    crossing_ts_ms: float | None = None
    slope_per_ms: float = 0.0
    intercept: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "crossing_ts_ms": self.crossing_ts_ms,
            "slope_per_ms": self.slope_per_ms,
            "intercept": self.intercept,
        }


def forecast_failure_time(
    entropy_history: Sequence[tuple[int, float]],
    theta: float,
    fit_window: int,
) -> Forecast:
    """Project the entropy trend to the alarm threshold.

    Fits an OLS line over the trailing fit_window points. The latest score
    already above theta short-circuits to already_exceeded; a slope at or
    below 1e-12 per ms reports no_trend; otherwise the analytic crossing
    time is returned (already_exceeded when the fitted line crossed in the
    past).
    """
    if fit_window < 2:
        raise ValueError("fit_window must be >= 2")
    points = list(entropy_history)[-fit_window:]
    if len(points) < 2:
        raise TooFewPoints(f"need >= 2 points in the fit window, got {len(points)}")
    ts = np.array([p[0] for p in points], dtype=float)
    ys = np.array([p[1] for p in points], dtype=float)
    latest_ts, latest_score = points[-1]

    if latest_score > theta:
        return Forecast(kind="already_exceeded")

    t_mean = ts.mean()
    y_mean = ys.mean()
    denom = float(((ts - t_mean) ** 2).sum())
    if denom == 0.0:
        return Forecast(kind="no_trend")
    slope = float(((ts - t_mean) * (ys - y_mean)).sum() / denom)
    intercept = y_mean - slope * t_mean
    if slope <= 1e-12:
        return Forecast(kind="no_trend", slope_per_ms=slope, intercept=intercept)
    crossing = (theta - intercept) / slope
    if crossing < latest_ts:
        # fitted line crossed in the past even though the last point is low
        return Forecast(kind="already_exceeded", slope_per_ms=slope, intercept=intercept)
    return Forecast(
        kind="crossing",
        crossing_ts_ms=float(crossing),
        slope_per_ms=slope,
        intercept=intercept,
    )


# --- event-log file format ---

def parse_event_line(line: str) -> UpDownEvent:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"bad event record: {line.strip()!r}") from exc
    if not isinstance(doc, dict):
        raise MalformedRecord(f"bad event record: {line.strip()!r}")
    try:
        return UpDownEvent(
            ts_ms=int(doc["ts_ms"]),
            target=ServiceNode(str(doc["ip"]), str(doc["service"])),
            state=str(doc["state"]),
        )
    except KeyError as exc:
        raise MalformedRecord(f"event record missing {exc.args[0]}: {line.strip()!r}") from exc
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(f"bad event record: {line.strip()!r}") from exc


def serialize_event_line(event: UpDownEvent) -> str:
    doc = {
        "ts_ms": event.ts_ms,
        "ip": event.target.ip,
        "service": event.target.service,
        "state": event.state,
    }
    return json.dumps(doc, separators=(", ", ": ")) + "\n"


def load_event_log(path) -> dict[ServiceNode, list[UpDownEvent]]:
    """Events grouped per target, in file order."""
    logs: dict[ServiceNode, list[UpDownEvent]] = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    with fh:
        for line in fh:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            event = parse_event_line(stripped)
            logs.setdefault(event.target, []).append(event)
    return logs
