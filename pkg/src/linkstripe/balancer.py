"""Stage 2: runtime fine-grained share adjustment.

A sliding window of recent per-path timings is reduced to medians, so a
single slow call cannot trigger a move.  When the median gap between
the slowest and fastest paths exceeds the threshold, a small fixed
quantum of granules shifts off the slowest path, toward NVLink when
NVLink is not itself the slowest.  Paths deactivated during initial
tuning stay out: this stage never reactivates them.
"""

from __future__ import annotations

import json
import statistics
from collections import deque
from dataclasses import dataclass
from typing import Iterable

from .collectives import (
    CollectiveSpec,
    PathTimingReport,
    ShareDistribution,
    simulate_collective,
)
from .simcore import NoiseModel
from .topo import PathKind, TopologySpec


@dataclass(frozen=True)
class BalancerConfig:
    window: int = 10
    gap_threshold: float = 0.10
    quantum: int = 10
    invocation_period: int = 10

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.gap_threshold <= 0:
            raise ValueError("gap_threshold must be > 0")
        if self.quantum < 1:
            raise ValueError("quantum must be >= 1")
        if self.invocation_period < 1:
            raise ValueError("invocation_period must be >= 1")


class TimingWindow:
    """Ring buffer of the most recent timing reports."""

    def __init__(self, capacity: int):
        self.reports: deque[PathTimingReport] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.reports)


def record(window: TimingWindow, report: PathTimingReport) -> None:
    window.reports.append(report)


def median_durations(window: TimingWindow,
                     active: Iterable[PathKind]) -> dict[PathKind, float]:
    reports = list(window.reports)
    out = {}
    for p in sorted(set(active)):
        samples = [r.durations[p] for r in reports if p in r.durations]
        if samples:
            out[p] = statistics.median(samples)
    return out


def window_gap(window: TimingWindow, active: Iterable[PathKind]
               ) -> tuple[float, PathKind, PathKind] | None:
    """Median-based (slow - fast)/fast gap, or None if not comparable."""
    medians = median_durations(window, active)
    if len(medians) < 2:
        return None
    slow = max(medians, key=lambda p: (medians[p], -int(p)))
    fast = min(medians, key=lambda p: (medians[p], int(p)))
    if medians[fast] <= 0:
        return None
    gap = (medians[slow] - medians[fast]) / medians[fast]
    return gap, slow, fast


@dataclass(frozen=True)
class Adjustment:
    source: PathKind
    target: PathKind
    granules: int
    gap: float


def evaluate(window: TimingWindow, config: BalancerConfig,
             shares: ShareDistribution,
             active: Iterable[PathKind]) -> Adjustment | None:
    """Propose one quantum move if the median gap exceeds the threshold."""
    result = window_gap(window, active)
    if result is None:
        return None
    gap, slow, fast = result
    if gap <= config.gap_threshold:
        return None
    active_set = set(active)
    if slow != PathKind.NVLINK and PathKind.NVLINK in active_set:
        target = PathKind.NVLINK
    else:
        target = fast
    return Adjustment(source=slow, target=target, granules=config.quantum, gap=gap)


def apply_adjustment(shares: ShareDistribution,
                     adjustment: Adjustment) -> tuple[ShareDistribution, int]:
    """Move the quantum, clamped to what the source still holds.

    Returns the new shares and the amount actually moved; zero marks a
    no-op against an already-empty path.
    """
    moved = min(adjustment.granules, shares.get(adjustment.source))
    if moved == 0:
        return shares, 0
    return shares.move(adjustment.source, adjustment.target, moved), moved


@dataclass(frozen=True)
class BandwidthShift:
    """A mid-run change to one link's bandwidth.

    ``duration`` counts calls; None means the change is permanent.
    """

    at_call: int
    path: PathKind
    scale: float
    duration: int | None = None

    def applies(self, call: int) -> bool:
        if call < self.at_call:
            return False
        return self.duration is None or call < self.at_call + self.duration


@dataclass
class EvalRecord:
    call: int
    gap: float | None
    adjustment: Adjustment | None
    moved: int
    shares: dict[PathKind, int]


@dataclass
class DynamicResult:
    reports: list[PathTimingReport]
    evaluations: list[EvalRecord]
    final_shares: ShareDistribution

    @property
    def adjustments_made(self) -> int:
        return sum(1 for e in self.evaluations if e.moved)


def run_dynamic(
    topo: TopologySpec,
    spec: CollectiveSpec,
    shares: ShareDistribution,
    config: BalancerConfig = BalancerConfig(),
    n_calls: int = 100,
    shifts: tuple[BandwidthShift, ...] = (),
    noise: NoiseModel | None = None,
    active: tuple[PathKind, ...] | None = None,
    alignment: int = 1,
) -> DynamicResult:
    """Drive repeated collective calls with periodic balancing.

    Link conditions may shift mid-run via ``shifts``; the balancer only
    sees timing reports, exactly as it would in production.
    """
    active_paths = tuple(sorted(active)) if active is not None else shares.loaded_paths
    window = TimingWindow(config.window)
    rng = noise.stream() if noise else None
    reports: list[PathTimingReport] = []
    evaluations: list[EvalRecord] = []

    for call in range(1, n_calls + 1):
        eff_topo = topo
        for shift in shifts:
            if shift.applies(call):
                eff_topo = eff_topo.with_scaled_bandwidth(shift.path, shift.scale)
        report = simulate_collective(eff_topo, spec, shares, noise=noise, rng=rng,
                                     paths=active_paths, alignment=alignment)
        record(window, report)
        reports.append(report)
        if call % config.invocation_period == 0:
            gap_info = window_gap(window, active_paths)
            adjustment = evaluate(window, config, shares, active_paths)
            moved = 0
            if adjustment is not None:
                shares, moved = apply_adjustment(shares, adjustment)
            evaluations.append(EvalRecord(
                call=call,
                gap=gap_info[0] if gap_info else None,
                adjustment=adjustment,
                moved=moved,
                shares=shares.as_dict(),
            ))
    return DynamicResult(reports=reports, evaluations=evaluations, final_shares=shares)


def write_adjustment_log(result: DynamicResult, fh) -> None:
    """Emit one JSON line per balancer evaluation."""
    for e in result.evaluations:
        fh.write(json.dumps({
            "call": e.call,
            "gap": e.gap,
            "moved": e.moved,
            "source": e.adjustment.source.short if e.adjustment else None,
            "target": e.adjustment.target.short if e.adjustment else None,
            "shares": {p.short: g for p, g in sorted(e.shares.items())},
        }) + "\n")
