"""Stage 1: coarse initial share tuning.

Starting from a bandwidth-proportional guess, the tuner repeatedly
measures per-path completion times, moves granules away from the
slowest path (toward NVLink whenever NVLink is not itself the
bottleneck), halves its step whenever the bottleneck identity changes,
and stops once the timing imbalance stays below threshold for several
consecutive measurements.  Paths drained to zero granules are
deactivated for good.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Callable

from .collectives import (
    GRANULE_TOTAL,
    CollectiveSpec,
    PathTimingReport,
    ShareDistribution,
    simulate_collective,
)
from .simcore import NoiseModel, effective_bandwidths
from .topo import PathKind, TopologySpec


@dataclass(frozen=True)
class TunerConfig:
    initial_step: int = 32
    convergence_threshold: float = 0.05
    stability_required: int = 3
    max_iterations: int = 100

    def __post_init__(self) -> None:
        if self.initial_step < 1:
            raise ValueError("initial_step must be >= 1")
        if self.convergence_threshold <= 0:
            raise ValueError("convergence_threshold must be > 0")
        if self.stability_required < 1:
            raise ValueError("stability_required must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class TunerState:
    shares: ShareDistribution
    active: frozenset[PathKind]
    step: int
    stability_count: int = 0
    prev_slowest: PathKind | None = None
    iteration: int = 0


@dataclass
class TuneRecord:
    iteration: int
    shares: dict[PathKind, int]
    durations: dict[PathKind, float]
    imbalance: float
    slowest: PathKind | None
    fastest: PathKind | None
    step: int
    stability_count: int
    action: str


@dataclass
class TuneTrace:
    records: list[TuneRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)


def initialize_shares(topo: TopologySpec,
                      paths: tuple[PathKind, ...] | None = None) -> ShareDistribution:
    """Bandwidth-proportional starting shares with NVLink kept dominant.

    Secondary paths are weighted by what they can actually sustain when
    running together (the shared-interface cap applies under
    contention), floored to whole granules; NVLink absorbs the rounding
    remainder and, on ties, an extra granule so it stays strictly
    largest.
    """
    present = tuple(sorted(paths)) if paths is not None else topo.present_paths
    if PathKind.NVLINK not in present:
        raise ValueError("NVLINK must be present to initialize shares")
    eff = effective_bandwidths(topo, present)
    total_bw = sum(eff.values())
    granules = {}
    for p in present:
        if p == PathKind.NVLINK:
            continue
        granules[p] = int(GRANULE_TOTAL * eff[p] / total_bw)
    granules[PathKind.NVLINK] = GRANULE_TOTAL - sum(granules.values())
    secondaries = [p for p in present if p != PathKind.NVLINK]
    while secondaries and granules[PathKind.NVLINK] <= max(granules[p] for p in secondaries):
        biggest = min(secondaries, key=lambda p: (-granules[p], p))
        granules[biggest] -= 1
        granules[PathKind.NVLINK] += 1
    return ShareDistribution(granules)


def slowest_fastest(report: PathTimingReport,
                    active: frozenset[PathKind] | set[PathKind]) -> tuple[PathKind, PathKind]:
    """Extremes of the active paths' durations; ties break by path order."""
    candidates = sorted(p for p in active if p in report.durations)
    if not candidates:
        raise ValueError("no active path has a timing sample")
    slow = max(candidates, key=lambda p: (report.durations[p], -int(p)))
    fast = min(candidates, key=lambda p: (report.durations[p], int(p)))
    return slow, fast


def imbalance(report: PathTimingReport,
              active: frozenset[PathKind] | set[PathKind]) -> float:
    """(slowest - fastest) / fastest across active paths; 0 for one path."""
    candidates = [p for p in active if p in report.durations]
    if len(candidates) <= 1:
        return 0.0
    slow, fast = slowest_fastest(report, active)
    fastest = report.durations[fast]
    if fastest <= 0:
        raise ValueError("fastest path time must be positive to compare")
    return (report.durations[slow] - fastest) / fastest


def tune_step(state: TunerState, report: PathTimingReport,
              config: TunerConfig) -> tuple[TunerState, TuneRecord]:
    """One tuning iteration: either count stability or move granules."""
    slow, fast = slowest_fastest(report, state.active)
    imb = imbalance(report, state.active)
    iteration = state.iteration + 1

    if imb < config.convergence_threshold:
        new_state = replace(state, stability_count=state.stability_count + 1,
                            iteration=iteration)
        action = "stable"
    else:
        step = state.step
        if state.prev_slowest is not None and slow != state.prev_slowest:
            step = max(step // 2, 1)
        if slow != PathKind.NVLINK and PathKind.NVLINK in state.active:
            target = PathKind.NVLINK
        else:
            target = fast
        moved = min(step, state.shares.get(slow))
        shares = state.shares.move(slow, target, moved)
        active = state.active
        action = f"move {moved} {slow.short}->{target.short}"
        if shares.get(slow) <= 0:
            active = active - {slow}
            action += f", deactivate {slow.short}"
        new_state = replace(state, shares=shares, active=active, step=step,
                            stability_count=0, prev_slowest=slow,
                            iteration=iteration)

    record = TuneRecord(
        iteration=iteration,
        shares=new_state.shares.as_dict(),
        durations=dict(report.durations),
        imbalance=imb,
        slowest=slow,
        fastest=fast,
        step=new_state.step,
        stability_count=new_state.stability_count,
        action=action,
    )
    return new_state, record


MeasureFn = Callable[[TunerState], PathTimingReport]


def initial_tune(
    topo: TopologySpec,
    spec: CollectiveSpec,
    config: TunerConfig = TunerConfig(),
    noise: NoiseModel | None = None,
    measure: MeasureFn | None = None,
    paths: tuple[PathKind, ...] | None = None,
    alignment: int = 1,
) -> tuple[ShareDistribution, TuneTrace]:
    """Run the coarse tuning loop to convergence or the iteration cap.

    ``measure`` defaults to the striped-collective simulator; tests may
    inject synthetic timings.  Returns the final shares and a trace with
    one record per iteration.
    """
    present = tuple(sorted(paths)) if paths is not None else topo.present_paths
    state = TunerState(
        shares=initialize_shares(topo, present),
        active=frozenset(present),
        step=config.initial_step,
    )
    rng = noise.stream() if noise else None

    if measure is None:
        def measure(st: TunerState) -> PathTimingReport:
            return simulate_collective(
                topo, spec, st.shares, noise=noise, rng=rng,
                paths=tuple(sorted(st.active)), alignment=alignment)

    trace = TuneTrace()
    for _ in range(config.max_iterations):
        if len(state.active) == 1 and PathKind.NVLINK in state.active:
            trace.converged = True
            trace.records.append(TuneRecord(
                iteration=state.iteration + 1, shares=state.shares.as_dict(),
                durations={}, imbalance=0.0, slowest=None, fastest=None,
                step=state.step, stability_count=state.stability_count,
                action="early_exit"))
            break
        report = measure(state)
        state, record = tune_step(state, report, config)
        trace.records.append(record)
        if state.stability_count >= config.stability_required:
            trace.converged = True
            break
    return state.shares, trace


def write_trace(trace: TuneTrace, fh, fmt: str = "csv") -> None:
    rows = [
        {
            "iteration": r.iteration,
            "action": r.action,
            "imbalance": r.imbalance,
            "slowest": r.slowest.short if r.slowest else "",
            "fastest": r.fastest.short if r.fastest else "",
            "step": r.step,
            "stability_count": r.stability_count,
            **{f"{p.short}_share": r.shares.get(p, 0) for p in PathKind},
            **{f"{p.short}_s": r.durations.get(p, "") for p in PathKind},
        }
        for r in trace.records
    ]
    if fmt == "csv":
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    elif fmt in ("json", "jsonl"):
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    else:
        raise ValueError(f"unknown trace format {fmt!r}")
