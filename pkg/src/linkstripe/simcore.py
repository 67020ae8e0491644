"""Deterministic fluid-flow transfer engine.

Concurrent transfers share links max-min fairly; when the topology has
path contention, staged and NIC flows are additionally capped by the
shared GPU interface.  Rates are piecewise constant and recomputed at
every flow arrival or completion, so runs are exactly reproducible.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field

from .topo import PathKind, TopologySpec

CONTENTION_GROUP = (PathKind.PCIE_STAGED, PathKind.RDMA_NIC)


class SimClock:
    """Monotonic simulation clock; time never moves backwards."""

    def __init__(self) -> None:
        self.now = 0.0

    def advance_to(self, t: float) -> None:
        if t < self.now:
            raise ValueError(f"clock moved backwards: {t} < {self.now}")
        self.now = t


@dataclass(frozen=True)
class NoiseModel:
    """Multiplicative duration noise, uniform in [1-sigma, 1+sigma]."""

    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.sigma <= 0.5:
            raise ValueError("sigma must lie in [0, 0.5]")

    def stream(self) -> random.Random:
        return random.Random(self.seed)

    def factor(self, rng: random.Random) -> float:
        if self.sigma == 0.0:
            return 1.0
        return rng.uniform(1.0 - self.sigma, 1.0 + self.sigma)


@dataclass(frozen=True)
class TransferRequest:
    path: PathKind
    n_bytes: float
    start_time: float = 0.0

    def __post_init__(self) -> None:
        if self.n_bytes < 0:
            raise ValueError("transfer size must be >= 0")
        if self.start_time < 0:
            raise ValueError("start_time must be >= 0")


@dataclass
class TransferRecord:
    """Event-log row for one completed transfer."""

    path: PathKind
    n_bytes: float
    start: float
    end: float

    @property
    def mean_rate(self) -> float:
        span = self.end - self.start
        return self.n_bytes / span if span > 0 else 0.0


@dataclass
class RateSegment:
    """Instantaneous rate of one flow over [t0, t1); lets tests audit caps."""

    t0: float
    t1: float
    request_index: int
    path: PathKind
    rate: float


@dataclass
class RunResult:
    records: list[TransferRecord]
    segments: list[RateSegment]
    completions: list[float] = field(default_factory=list)


def maxmin_rates(demands: dict[int, float], groups: list[tuple[set[int], float]]) -> dict[int, float]:
    """Progressive-filling max-min fair allocation.

    ``demands`` maps flow id to its own peak rate; ``groups`` are
    (member set, capacity) constraints.  Every flow is also constrained
    by its own demand.  Rates rise together until a constraint
    saturates, whose members then freeze.
    """
    rates = {f: 0.0 for f in demands}
    frozen: set[int] = set()
    level = 0.0
    constraints = [({f}, d) for f, d in demands.items()] + groups
    while len(frozen) < len(rates):
        best = None
        for members, cap in constraints:
            open_members = [f for f in members if f not in frozen]
            if not open_members:
                continue
            used = sum(rates[f] for f in members if f in frozen)
            headroom = (cap - used - level * len(open_members)) / len(open_members)
            if best is None or headroom < best[0]:
                best = (headroom, members)
        if best is None:
            break
        delta, members = best
        level += max(delta, 0.0)
        for f in members:
            if f not in frozen:
                rates[f] = level
                frozen.add(f)
    return rates


def _rates_for_active(active: dict[int, "_Flow"], topo: TopologySpec) -> dict[int, float]:
    demands = {i: topo.link(f.path).bandwidth_uni for i, f in active.items()}
    groups: list[tuple[set[int], float]] = []
    # One shared-link constraint per path with several concurrent flows.
    by_path: dict[PathKind, set[int]] = {}
    for i, f in active.items():
        by_path.setdefault(f.path, set()).add(i)
    for path, members in by_path.items():
        if len(members) > 1:
            groups.append((members, topo.link(path).bandwidth_uni))
    if topo.path_contention:
        members = {i for i, f in active.items() if f.path in CONTENTION_GROUP}
        if members:
            groups.append((members, topo.shared_interface_bw))
    return maxmin_rates(demands, groups)


@dataclass
class _Flow:
    index: int
    path: PathKind
    n_bytes: float
    start: float          # requested start
    activation: float     # start + base latency
    remaining: float
    overhead: float       # staged chunk bookkeeping appended to the duration


def run_transfers(
    requests: list[TransferRequest],
    topo: TopologySpec,
    noise: NoiseModel | None = None,
    rng: random.Random | None = None,
) -> RunResult:
    """Run all transfers to completion, returning per-request times and logs.

    Completion = start + link latency + fluid transfer under max-min fair
    sharing + per-chunk staging overhead, all scaled by one noise factor
    per request.  Identical inputs and seed give identical outputs.
    """
    flows: list[_Flow] = []
    for idx, req in enumerate(requests):
        link = topo.link(req.path)  # raises on absent path
        chunks = math.ceil(req.n_bytes / link.staging_chunk) if link.staging_chunk else 0
        flows.append(_Flow(
            index=idx,
            path=req.path,
            n_bytes=req.n_bytes,
            start=req.start_time,
            activation=req.start_time + link.base_latency,
            remaining=float(req.n_bytes),
            overhead=chunks * link.per_chunk_overhead,
        ))

    pending = sorted(flows, key=lambda f: (f.activation, f.path, f.index))
    active: dict[int, _Flow] = {}
    segments: list[RateSegment] = []
    fluid_end = [0.0] * len(flows)
    clock = SimClock()
    if pending:
        clock.advance_to(pending[0].activation)
    pos = 0

    while pos < len(pending) or active:
        while pos < len(pending) and pending[pos].activation <= clock.now:
            flow = pending[pos]
            pos += 1
            if flow.remaining <= 0:
                fluid_end[flow.index] = clock.now
            else:
                active[flow.index] = flow
        if not active:
            if pos < len(pending):
                clock.advance_to(pending[pos].activation)
            continue

        rates = _rates_for_active(active, topo)
        dt_finish = min(f.remaining / rates[i] for i, f in active.items())
        t_next = clock.now + dt_finish
        if pos < len(pending):
            t_next = min(t_next, pending[pos].activation)

        for i in sorted(active):
            flow = active[i]
            segments.append(RateSegment(clock.now, t_next, i, flow.path, rates[i]))
            flow.remaining -= rates[i] * (t_next - clock.now)
        prev = clock.now
        clock.advance_to(t_next)
        for i in sorted(active):
            flow = active[i]
            if flow.remaining <= 1e-9 * max(flow.n_bytes, 1.0) + 1e-30:
                # Snap to exact completion: credit the residual to this segment.
                flow.remaining = 0.0
                fluid_end[flow.index] = clock.now
                del active[flow.index]

    stream = rng if rng is not None else (noise.stream() if noise else None)
    records: list[TransferRecord] = []
    completions: list[float] = []
    for flow in flows:
        duration = fluid_end[flow.index] - flow.start + flow.overhead
        if noise and noise.sigma:
            duration *= noise.factor(stream)
        end = flow.start + duration
        records.append(TransferRecord(flow.path, flow.n_bytes, flow.start, end))
        completions.append(end)
    return RunResult(records=records, segments=segments, completions=completions)


def effective_bandwidths(topo: TopologySpec, active_paths) -> dict[PathKind, float]:
    """Per-path usable bandwidth when the given paths run concurrently.

    Without contention each path keeps its own link rate.  With
    contention the staged and NIC paths split the shared interface
    max-min fairly, mirroring what the fluid engine would converge to
    while all paths are busy.
    """
    active = sorted(set(active_paths))
    out = {p: topo.link(p).bandwidth_uni for p in active}
    if not topo.path_contention:
        return out
    members = [p for p in active if p in CONTENTION_GROUP]
    if not members:
        return out
    demands = {int(p): topo.link(p).bandwidth_uni for p in members}
    shared = maxmin_rates(demands, [(set(demands), topo.shared_interface_bw)])
    for p in members:
        out[p] = shared[int(p)]
    return out


def write_event_log(records: list[TransferRecord], fh, fmt: str = "csv") -> None:
    """Emit one row per transfer as CSV or JSON lines."""
    rows = [
        {
            "path": r.path.short,
            "bytes": r.n_bytes,
            "start": r.start,
            "end": r.end,
            "mean_rate": r.mean_rate,
        }
        for r in records
    ]
    if fmt == "csv":
        writer = csv.DictWriter(fh, fieldnames=["path", "bytes", "start", "end", "mean_rate"])
        writer.writeheader()
        writer.writerows(rows)
    elif fmt in ("json", "jsonl"):
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    else:
        raise ValueError(f"unknown event-log format {fmt!r}")
