"""Multi-scale sample entropy and the health score built on it.

Sample entropy here is the template-counting definition: B counts ordered
pairs (i, j), i != j, of length-m templates within Chebyshev tolerance r;
A counts the same for length m+1; both draw templates from the first
N - m start positions so every m-template has an extension. The result is
-ln(A/B). Multi-scale curves reuse one absolute r, derived from the
scale-1 standard deviation, at every scale.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import NonPositiveTolerance, NoUsableMetric, SeriesTooShort
from .model import ServiceNode


@dataclass(frozen=True)
class EntropyConfig:
    m: int = 2
    r_fraction: float = 0.15
    max_scale: int = 10
    window_len: int = 600
    alarm_threshold: float = 1.0

    def __post_init__(self) -> None:
        if self.m < 1 or self.max_scale < 1 or self.window_len < 1:
            raise ValueError("m, max_scale and window_len must be positive")
        if self.r_fraction <= 0 or self.alarm_threshold <= 0:
            raise ValueError("r_fraction and alarm_threshold must be positive")
        if self.window_len // self.max_scale < self.m + 2:
            raise ValueError(
                "window_len/max_scale must leave at least m+2 coarse points"
            )


class SampEnResult(NamedTuple):
    """One entropy value; value None means undefined (no template matches).

    capped marks the A=0 surrogate ln(B+1): the window was so irregular
    that no m+1 template matched, so the true value is unbounded.
    """

    value: float | None
    capped: bool = False

    @property
    def defined(self) -> bool:
        return self.value is not None


def coarse_grain(x: Sequence[float] | np.ndarray, tau: int) -> np.ndarray:
    """Replace each block of tau consecutive points by its mean.

    The trailing partial block is discarded; tau=1 returns the input
    unchanged.
    """
    arr = np.asarray(x, dtype=float)
    if tau < 1:
        raise ValueError("tau must be >= 1")
    n = arr.shape[0]
    if n < tau:
        raise SeriesTooShort(f"need at least tau={tau} points, got {n}")
    n_blocks = n // tau
    return arr[: n_blocks * tau].reshape(n_blocks, tau).mean(axis=1)


def _match_counts(x: np.ndarray, m: int, r: float) -> tuple[int, int]:
    """Ordered-pair template match counts (B at length m, A at length m+1).

    Pairwise Chebyshev distances are built incrementally as running
    maxima of lagged absolute differences, which keeps the whole thing in
    a handful of (T, T) array operations.
    """
    n = x.shape[0]
    t = n - m  # number of template start positions; every one extends
    if t < 2:
        return 0, 0
    dist = np.zeros((t, t))
    for k in range(m):
        seg = x[k : k + t]
        np.maximum(dist, np.abs(seg[:, None] - seg[None, :]), out=dist)
    mask_m = dist <= r
    b = int(mask_m.sum()) - t  # drop the diagonal (i == j)
    seg = x[m : m + t]
    np.maximum(dist, np.abs(seg[:, None] - seg[None, :]), out=dist)
    mask_m1 = dist <= r
    a = int(mask_m1.sum()) - t
    return b, a


def sample_entropy(x: Sequence[float] | np.ndarray, m: int, r: float) -> SampEnResult:
    """Sample entropy -ln(A/B) of one window with absolute tolerance r.

    B == 0 yields an undefined result; A == 0 with B > 0 yields the capped
    surrogate ln(B+1) so extremely irregular windows still score (high)
    instead of dropping out of downstream means.
    """
    arr = np.asarray(x, dtype=float)
    n = arr.shape[0]
    if m < 1:
        raise ValueError("m must be >= 1")
    if n < m + 2:
        raise SeriesTooShort(f"need at least m+2={m + 2} points, got {n}")
    if r <= 0:
        raise NonPositiveTolerance(f"tolerance must be positive, got {r}")
    b, a = _match_counts(arr, m, r)
    if b == 0:
        return SampEnResult(value=None)
    if a == 0:
        return SampEnResult(value=math.log(b + 1), capped=True)
    return SampEnResult(value=-math.log(a / b))


def mse_curve(x: Sequence[float] | np.ndarray, cfg: EntropyConfig) -> list[SampEnResult]:
    """Sample entropy at scales 1..max_scale with one shared absolute r.

    r = r_fraction * stddev(raw window); a constant window short-circuits
    to an all-zero curve (every template matches at every scale).
    """
    arr = np.asarray(x, dtype=float)
    n = arr.shape[0]
    if n < cfg.max_scale * (cfg.m + 2):
        raise SeriesTooShort(
            f"need at least max_scale*(m+2)={cfg.max_scale * (cfg.m + 2)} points, got {n}"
        )
    sigma = float(np.std(arr))
    if sigma == 0.0:
        return [SampEnResult(value=0.0) for _ in range(cfg.max_scale)]
    r = cfg.r_fraction * sigma
    curve: list[SampEnResult] = []
    for tau in range(1, cfg.max_scale + 1):
        curve.append(sample_entropy(coarse_grain(arr, tau), cfg.m, r))
    return curve


def curve_score(curve: Sequence[SampEnResult]) -> float | None:
    """Mean of the defined entries; None when nothing is defined."""
    vals = [e.value for e in curve if e.value is not None]
    if not vals:
        return None
    return float(np.mean(vals))


@dataclass
class HealthReport:
    """Entropy-based health snapshot of one service."""

    target: ServiceNode
    per_metric_entropy: dict[str, list[SampEnResult]]
    per_metric_score: dict[str, float]
    excluded_metrics: list[str]
    score: float
    alarm: bool
    threshold: float
    computed_at_ms: int

    def to_dict(self) -> dict:
        return {
            "target": {"ip": self.target.ip, "service": self.target.service},
            "per_metric_entropy": {
                metric: [
                    {"scale": i + 1, "value": e.value, "capped": e.capped}
                    for i, e in enumerate(curve)
                ]
                for metric, curve in self.per_metric_entropy.items()
            },
            "per_metric_score": dict(self.per_metric_score),
            "excluded_metrics": list(self.excluded_metrics),
            "score": self.score,
            "alarm": self.alarm,
            "threshold": self.threshold,
            "computed_at_ms": self.computed_at_ms,
        }


def health_score(
    target: ServiceNode,
    windows: Mapping[str, Sequence[float] | np.ndarray],
    cfg: EntropyConfig,
    computed_at_ms: int | None = None,
) -> HealthReport:
    """Score a service from per-metric windows.

    Per-metric score is the mean of the defined MSE entries; a metric
    participates only when at least ceil(max_scale/2) entries are defined
    (or the window was long enough at all). The service score is the mean
    over participating metrics; the alarm fires strictly above the
    threshold.
    """
    if computed_at_ms is None:
        computed_at_ms = int(time.time() * 1000)
    min_defined = math.ceil(cfg.max_scale / 2)

    curves: dict[str, list[SampEnResult]] = {}
    scores: dict[str, float] = {}
    excluded: list[str] = []
    for metric in sorted(windows):
        try:
            curve = mse_curve(windows[metric], cfg)
        except SeriesTooShort:
            excluded.append(metric)
            continue
        curves[metric] = curve
        n_defined = sum(1 for e in curve if e.defined)
        if n_defined < min_defined:
            excluded.append(metric)
            continue
        scores[metric] = float(np.mean([e.value for e in curve if e.defined]))
    if not scores:
        raise NoUsableMetric(
            f"no metric of {target.label()} produced enough defined entropy entries"
        )
    score = float(np.mean(list(scores.values())))
    return HealthReport(
        target=target,
        per_metric_entropy=curves,
        per_metric_score=scores,
        excluded_metrics=excluded,
        score=score,
        alarm=score > cfg.alarm_threshold,
        threshold=cfg.alarm_threshold,
        computed_at_ms=computed_at_ms,
    )


def health_alarm(report: HealthReport, theta: float) -> bool:
    """Strict threshold rule: alarm iff score > theta."""
    return report.score > theta
