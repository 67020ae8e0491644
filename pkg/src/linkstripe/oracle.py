"""Independent references for the tuner: exhaustive search and closed form.

The brute force enumerates every share split on a fixed grid and scores
it with the zero-noise simulator, so it cannot inherit mistakes from
the tuning loop it is used to validate.  The closed form solves the
equal-completion-time condition for flat alpha-beta paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from .collectives import (
    GRANULE_TOTAL,
    CollectiveSpec,
    ShareDistribution,
    simulate_collective,
)
from .topo import PathKind, TopologySpec


@dataclass(frozen=True)
class OracleResult:
    best_shares: ShareDistribution
    best_time: float
    evaluations: int


def _grid(total: int, slots: int, step: int) -> Iterator[tuple[int, ...]]:
    if slots == 1:
        yield (total,)
        return
    for head in range(0, total + 1, step):
        for rest in _grid(total - head, slots - 1, step):
            yield (head,) + rest


def optimal_shares_bruteforce(
    topo: TopologySpec,
    spec: CollectiveSpec,
    granularity: int = 10,
    paths: tuple[PathKind, ...] | None = None,
    alignment: int = 1,
) -> OracleResult:
    """Try every grid split of the 1000 granules and keep the fastest.

    Ties go to the split with the larger NVLINK share.  Paths given zero
    granules are not dispatched, so their latency does not count.
    """
    if granularity < 1 or GRANULE_TOTAL % granularity:
        raise ValueError("granularity must divide the granule total")
    search_paths = tuple(sorted(paths)) if paths is not None else topo.present_paths
    best_shares: ShareDistribution | None = None
    best_time = float("inf")
    evaluations = 0
    for combo in _grid(GRANULE_TOTAL, len(search_paths), granularity):
        shares = ShareDistribution(dict(zip(search_paths, combo)))
        report = simulate_collective(topo, spec, shares, alignment=alignment)
        evaluations += 1
        t = report.total
        better = t < best_time or (
            t == best_time
            and best_shares is not None
            and shares.get(PathKind.NVLINK) > best_shares.get(PathKind.NVLINK)
        )
        if better:
            best_time, best_shares = t, shares
    assert best_shares is not None
    return OracleResult(best_shares, best_time, evaluations)


def closed_form_shares(
    bandwidths: dict[PathKind, float],
    latencies: dict[PathKind, float],
    steps: int,
    volume: float,
) -> dict[PathKind, int]:
    """Equal-completion-time share split for flat alpha-beta paths.

    ``volume`` is the byte count a path holding all 1000 granules would
    carry across the whole collective (per-rank size * steps / n_gpus
    for a ring), so a path's time is share_fraction * volume / B +
    steps * latency.  Paths whose solution goes negative are clamped to
    zero and the rest re-solved.  Granule rounding floors the non-NVLink
    entries and hands the remainder to NVLINK.
    """
    if volume <= 0:
        raise ValueError("volume must be positive")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    active = sorted(bandwidths)
    if not active:
        raise ValueError("need at least one path")
    solution: dict[PathKind, float] = {}
    while True:
        sum_b = sum(bandwidths[p] for p in active)
        sum_bl = sum(bandwidths[p] * latencies.get(p, 0.0) for p in active)
        tau = (volume + steps * sum_bl) / sum_b
        solution = {
            p: GRANULE_TOTAL * (tau - steps * latencies.get(p, 0.0)) * bandwidths[p] / volume
            for p in active
        }
        negative = [p for p in active if solution[p] < 0]
        if not negative:
            break
        active = [p for p in active if p not in negative]
        if not active:
            raise ValueError("no path can meet the completion time; check latencies")

    granules = {p: 0 for p in bandwidths}
    for p in active:
        granules[p] = int(solution[p])
    carrier = PathKind.NVLINK if PathKind.NVLINK in active else active[0]
    granules[carrier] += GRANULE_TOTAL - sum(granules.values())
    return granules
