"""Ring collectives striped across heterogeneous paths.

Message-size semantics follow nccl-tests: ``size`` is the per-rank
buffer, every ring step moves size/N per rank, and the reported
algorithm bandwidth is size / total_time.  Striping splits each step's
payload across paths in proportion to a granule share distribution
(1000 granules total), and the collective finishes when the slowest
path finishes.
"""

from __future__ import annotations

import csv
import enum
import math
import random
from dataclasses import dataclass, field

from .simcore import NoiseModel, effective_bandwidths
from .staging import PipelineSpec, pipeline_time
from .topo import PathKind, TopologySpec

GRANULE_TOTAL = 1000


class CollectiveOp(str, enum.Enum):
    ALLREDUCE = "allreduce"
    ALLGATHER = "allgather"


def ring_steps(op: CollectiveOp, n_gpus: int) -> int:
    """Sequential ring steps: 2(N-1) for AllReduce, N-1 for AllGather."""
    if n_gpus < 2:
        raise ValueError("ring collectives need at least 2 GPUs")
    if op == CollectiveOp.ALLREDUCE:
        return 2 * (n_gpus - 1)
    if op == CollectiveOp.ALLGATHER:
        return n_gpus - 1
    raise ValueError(f"unknown collective {op!r}")


@dataclass(frozen=True)
class CollectiveSpec:
    op: CollectiveOp
    n_gpus: int
    size: int                      # bytes per rank

    def __post_init__(self) -> None:
        if self.n_gpus < 2:
            raise ValueError("n_gpus must be >= 2")
        if self.size < 0:
            raise ValueError("size must be >= 0")


@dataclass(frozen=True)
class ShareDistribution:
    """Integer granule shares per path; always sums to GRANULE_TOTAL."""

    granules: dict[PathKind, int]

    def __post_init__(self) -> None:
        for path, g in self.granules.items():
            if g < 0:
                raise ValueError(f"negative share on {path.short}")
        total = sum(self.granules.values())
        if total != GRANULE_TOTAL:
            raise ValueError(f"shares sum to {total}, expected {GRANULE_TOTAL}")

    def get(self, path: PathKind) -> int:
        return self.granules.get(path, 0)

    def fraction(self, path: PathKind) -> float:
        return self.get(path) / GRANULE_TOTAL

    @property
    def loaded_paths(self) -> tuple[PathKind, ...]:
        return tuple(sorted(p for p, g in self.granules.items() if g > 0))

    def move(self, source: PathKind, target: PathKind, amount: int) -> "ShareDistribution":
        """Shift up to ``amount`` granules from source to target."""
        moved = min(amount, self.get(source))
        if moved < 0:
            raise ValueError("cannot move a negative amount")
        granules = dict(self.granules)
        granules[source] = granules.get(source, 0) - moved
        granules[target] = granules.get(target, 0) + moved
        return ShareDistribution(granules)

    def as_dict(self) -> dict[PathKind, int]:
        return dict(self.granules)


def partition(size: int, shares: ShareDistribution | dict[PathKind, int],
              alignment: int = 1) -> dict[PathKind, int]:
    """Split ``size`` bytes across paths proportionally to granules.

    Per-path byte counts are rounded down to ``alignment``; whatever is
    left over lands on NVLINK so the split always sums to ``size``.
    """
    granules = shares.granules if isinstance(shares, ShareDistribution) else shares
    if size < 0:
        raise ValueError("size must be >= 0")
    if alignment < 1:
        raise ValueError("alignment must be >= 1")
    total_granules = sum(granules.values())
    if size > 0 and total_granules <= 0:
        raise ValueError("cannot partition bytes over all-zero shares")
    out: dict[PathKind, int] = {}
    for path in sorted(granules):
        raw = size * granules[path] // total_granules if total_granules else 0
        out[path] = raw // alignment * alignment
    remainder = size - sum(out.values())
    out[PathKind.NVLINK] = out.get(PathKind.NVLINK, 0) + remainder
    return out


@dataclass(frozen=True)
class PathTimingReport:
    """Per-path completion times for one collective call."""

    op: CollectiveOp
    n_gpus: int
    size: int
    durations: dict[PathKind, float]
    total: float
    algbw: float

    @classmethod
    def build(cls, op: CollectiveOp, n_gpus: int, size: int,
              durations: dict[PathKind, float]) -> "PathTimingReport":
        total = max(durations.values()) if durations else 0.0
        algbw = size / total if total > 0 and size > 0 else 0.0
        return cls(op, n_gpus, size, durations, total, algbw)


def simulate_collective(
    topo: TopologySpec,
    spec: CollectiveSpec,
    shares: ShareDistribution,
    noise: NoiseModel | None = None,
    rng: random.Random | None = None,
    paths: tuple[PathKind, ...] | None = None,
    alignment: int = 1,
) -> PathTimingReport:
    """Closed-form timing of one striped ring collective.

    Each path independently runs the ring schedule on its slice: per
    step it moves slice/N bytes at its effective bandwidth plus its
    per-step latency.  The host-staged path crosses two hops, so its
    step transfer goes through the chunked pipeline; with contention the
    staged and NIC paths split the shared interface while both carry
    bytes.  One multiplicative noise factor per path models run-to-run
    variance; the collective completes with its slowest path.
    """
    report_paths = tuple(sorted(paths)) if paths is not None else shares.loaded_paths
    for p in report_paths:
        topo.link(p)
    bytes_by_path = partition(spec.size, shares, alignment) if spec.size else {}
    steps = ring_steps(spec.op, spec.n_gpus)
    carrying = [p for p in report_paths if bytes_by_path.get(p, 0) > 0]
    eff = effective_bandwidths(topo, carrying)

    stream = rng if rng is not None else (noise.stream() if noise else None)
    durations: dict[PathKind, float] = {}
    for p in report_paths:
        link = topo.link(p)
        step_bytes = bytes_by_path.get(p, 0) / spec.n_gpus
        bw = eff.get(p, link.bandwidth_uni)
        if step_bytes <= 0:
            transfer = 0.0
        elif p == PathKind.PCIE_STAGED:
            pipe = PipelineSpec(
                chunk_bytes=link.staging_chunk,
                bw_pd2h=bw, bw_h2cd=bw,
                per_chunk_overhead=link.per_chunk_overhead,
            )
            transfer = pipeline_time(step_bytes, pipe)
        else:
            transfer = step_bytes / bw
            if link.staging_chunk and link.per_chunk_overhead:
                transfer += math.ceil(step_bytes / link.staging_chunk) * link.per_chunk_overhead
        duration = steps * (transfer + link.base_latency)
        if noise and noise.sigma:
            duration *= noise.factor(stream)
        durations[p] = duration
    return PathTimingReport.build(spec.op, spec.n_gpus, spec.size, durations)


def size_bucket(size: int) -> int:
    """Power-of-two bucket index used to key tuned share state."""
    return size.bit_length() - 1 if size > 0 else -1


@dataclass
class ShareTable:
    """Tuned shares stored per (operator, power-of-two size bucket)."""

    entries: dict[tuple[CollectiveOp, int], ShareDistribution] = field(default_factory=dict)

    def get(self, op: CollectiveOp, size: int) -> ShareDistribution | None:
        return self.entries.get((op, size_bucket(size)))

    def set(self, op: CollectiveOp, size: int, shares: ShareDistribution) -> None:
        self.entries[(op, size_bucket(size))] = shares


def report_row(report: PathTimingReport, shares: ShareDistribution | None = None) -> dict:
    row = {
        "op": report.op.value,
        "n_gpus": report.n_gpus,
        "size": report.size,
        "total_s": report.total,
        "algbw_gbps": report.algbw / 1e9,
    }
    for p in PathKind:
        row[f"{p.short}_s"] = report.durations.get(p, "")
        if shares is not None:
            row[f"{p.short}_share"] = shares.get(p)
    return row


def write_reports_csv(rows: list[dict], fh) -> None:
    if not rows:
        return
    writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
