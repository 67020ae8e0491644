"""Host-staged copy pipeline and its buffer-handshake protocol.

A staged transfer crosses two hops (device-to-host, then host-to-device)
through a small ring of bounce buffers.  This module gives three views
of that machinery:

* ``pipeline_time``: closed-form makespan of the chunked pipeline,
* ``simulate_pipeline_events``: the same pipeline run as discrete events
  through an actual producer/consumer handshake, for cross-checking,
* ``explore_protocol``: exhaustive interleaving search over the
  handshake itself, distinguishing the monotonic-counter scheme from a
  plain flag scheme that can serve stale data once buffers are reused.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .simcore import SimClock


@dataclass(frozen=True)
class PipelineSpec:
    """Parameters of one staged path: chunking, per-hop bandwidth, buffers."""

    chunk_bytes: int
    bw_pd2h: float                 # device-to-host hop, bytes/s
    bw_h2cd: float                 # host-to-device hop, bytes/s
    per_chunk_overhead: float = 0.0
    buffers: int = 2

    def __post_init__(self) -> None:
        if self.chunk_bytes <= 0:
            raise ValueError("chunk_bytes must be positive")
        if self.bw_pd2h <= 0 or self.bw_h2cd <= 0:
            raise ValueError("stage bandwidths must be positive")
        if self.per_chunk_overhead < 0:
            raise ValueError("per_chunk_overhead must be >= 0")
        if self.buffers not in (1, 2):
            raise ValueError("buffers must be 1 (single) or 2 (double)")


def _chunk_sizes(total: float, chunk: int) -> list[float]:
    count = math.ceil(total / chunk)
    sizes = [float(chunk)] * count
    last = total - chunk * (count - 1)
    sizes[-1] = float(last)
    return sizes


def pipeline_time(total_bytes: float, spec: PipelineSpec) -> float:
    """Makespan of pushing ``total_bytes`` through the two-hop pipeline.

    With double buffering and equal hop times t this is (K+1)*t for K
    chunks; single buffering serializes the hops to 2*K*t.  A trailing
    partial chunk is billed pro-rata.  Per-chunk overhead is bookkeeping
    that does not overlap with copies, so it adds K * overhead on top.
    """
    if total_bytes < 0:
        raise ValueError("total_bytes must be >= 0")
    if total_bytes == 0:
        return 0.0
    sizes = _chunk_sizes(total_bytes, spec.chunk_bytes)
    produce_end = [0.0] * (len(sizes) + 1)   # D2H copy completion per chunk
    consume_end = [0.0] * (len(sizes) + 1)   # H2D copy completion per chunk
    for i, size in enumerate(sizes, start=1):
        a = size / spec.bw_pd2h
        b = size / spec.bw_h2cd
        if spec.buffers == 2:
            buffer_free = consume_end[i - 2] if i >= 2 else 0.0
        else:
            buffer_free = consume_end[i - 1]
        produce_end[i] = max(produce_end[i - 1], buffer_free) + a
        consume_end[i] = max(produce_end[i], consume_end[i - 1]) + b
    return consume_end[len(sizes)] + len(sizes) * spec.per_chunk_overhead


def simulate_pipeline_events(total_bytes: float, spec: PipelineSpec) -> float:
    """Run the staged pipeline as discrete events over real buffer counters.

    The producer copies chunk k into buffer k % buffers once the
    consumer has released it; the consumer drains in order.  This is an
    independent route to the same quantity as :func:`pipeline_time`.
    """
    if total_bytes <= 0:
        return 0.0
    sizes = _chunk_sizes(total_bytes, spec.chunk_bytes)
    nbuf = spec.buffers
    sem_empty = [0] * nbuf
    sem_full = [0] * nbuf
    clock = SimClock()

    p_next, c_next = 0, 0          # next chunk index per role
    p_busy_until: float | None = None
    c_busy_until: float | None = None
    total_chunks = len(sizes)

    while c_next < total_chunks or c_busy_until is not None:
        if p_busy_until is None and p_next < total_chunks:
            buf, local = p_next % nbuf, p_next // nbuf
            if sem_empty[buf] == local:
                p_busy_until = clock.now + sizes[p_next] / spec.bw_pd2h
        if c_busy_until is None and c_next < total_chunks:
            buf, local = c_next % nbuf, c_next // nbuf
            if sem_full[buf] == local + 1:
                c_busy_until = clock.now + sizes[c_next] / spec.bw_h2cd
        upcoming = [t for t in (p_busy_until, c_busy_until) if t is not None]
        if not upcoming:
            raise RuntimeError("pipeline deadlocked; buffer handshake broken")
        t = min(upcoming)
        clock.advance_to(t)
        if p_busy_until == t:
            buf, local = p_next % nbuf, p_next // nbuf
            sem_full[buf] = local + 1
            p_next += 1
            p_busy_until = None
        if c_busy_until == t:
            buf, local = c_next % nbuf, c_next // nbuf
            sem_empty[buf] = local + 1
            c_next += 1
            c_busy_until = None
    return clock.now + total_chunks * spec.per_chunk_overhead


# --- handshake protocol exploration -----------------------------------------

PRODUCER = "producer"
CONSUMER = "consumer"


@dataclass(frozen=True)
class ProtocolAction:
    """One atomic step in an interleaving trace."""

    role: str
    action: str                    # wait / write / set / read
    variable: str                  # semEmpty / semFull / buffer
    buffer: int
    iteration: int
    value: int | None = None       # value waited for, written, or observed

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "action": self.action,
            "variable": self.variable,
            "buffer": self.buffer,
            "iteration": self.iteration,
            "value": self.value,
        }


@dataclass
class ProtocolVerdict:
    ok: bool
    witness: list[ProtocolAction] | None
    states_explored: int
    deadlocks: int = 0

    @property
    def verdict(self) -> str:
        return "ok" if self.ok else "stale_read"


class ExplorationBudgetExceeded(RuntimeError):
    def __init__(self, states: int):
        super().__init__(f"interleaving exploration exceeded budget after {states} states")
        self.states = states


def _scripts(iterations: int, buffers: int, variant: str):
    """Expand both roles' per-iteration action sequences."""
    producer, consumer = [], []
    for i in range(iterations):
        buf, local = i % buffers, i // buffers
        if variant == "counter":
            producer += [
                ("wait", "semEmpty", buf, local, i),
                ("write", "buffer", buf, i, i),
                ("set", "semFull", buf, local + 1, i),
            ]
            consumer += [
                ("wait", "semFull", buf, local + 1, i),
                ("read", "buffer", buf, i, i),
                ("set", "semEmpty", buf, local + 1, i),
            ]
        elif variant == "binary":
            producer += [
                ("wait", "semEmpty", buf, 1, i),
                ("write", "buffer", buf, i, i),
                ("set", "semFull", buf, 1, i),
            ]
            consumer += [
                ("wait", "semFull", buf, 1, i),
                ("read", "buffer", buf, i, i),
                ("set", "semEmpty", buf, 1, i),
            ]
        else:
            raise ValueError(f"unknown protocol variant {variant!r}")
    return producer, consumer


def explore_protocol(
    iterations: int,
    buffers: int = 1,
    variant: str = "counter",
    budget: int = 1_000_000,
) -> ProtocolVerdict:
    """Exhaustively interleave producer and consumer and look for stale reads.

    A read is stale when the consumer of iteration i observes buffer
    contents written by any other iteration (or nothing at all).  The
    search memoizes shared-memory states; ``budget`` bounds the number
    of distinct states visited.  Returns the first witness in a fixed
    producer-first exploration order, so runs are reproducible.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if buffers < 1:
        raise ValueError("buffers must be >= 1")
    p_script, c_script = _scripts(iterations, buffers, variant)
    init_empty = tuple(0 if variant == "counter" else 1 for _ in range(buffers))
    init_full = tuple(0 for _ in range(buffers))
    init_stored = tuple(None for _ in range(buffers))

    safe: set[tuple] = set()
    stats = {"states": 0, "deadlocks": 0}

    def step(state, role):
        """Apply one action if enabled; returns (new_state, action, stale)."""
        p_pc, c_pc, empties, fulls, stored = state
        script, pc = (p_script, p_pc) if role == PRODUCER else (c_script, c_pc)
        if pc >= len(script):
            return None
        kind, var, buf, arg, iteration = script[pc]
        sems = empties if var == "semEmpty" else fulls
        if kind == "wait":
            if sems[buf] != arg:
                return None
            action = ProtocolAction(role, "wait", var, buf, iteration, arg)
            new = state
        elif kind == "write":
            new_stored = stored[:buf] + (arg,) + stored[buf + 1:]
            action = ProtocolAction(role, "write", "buffer", buf, iteration, arg)
            new = (p_pc, c_pc, empties, fulls, new_stored)
        elif kind == "set":
            if variant == "counter" and arg < sems[buf]:
                raise AssertionError("counter decreased; protocol generator broken")
            new_sems = sems[:buf] + (arg,) + sems[buf + 1:]
            if var == "semEmpty":
                new = (p_pc, c_pc, new_sems, fulls, stored)
            else:
                new = (p_pc, c_pc, empties, new_sems, stored)
            action = ProtocolAction(role, "set", var, buf, iteration, arg)
        else:  # read
            observed = stored[buf]
            action = ProtocolAction(role, "read", "buffer", buf, iteration,
                                    observed if observed is not None else -1)
            new = state
        if role == PRODUCER:
            new = (new[0] + 1,) + new[1:]
        else:
            new = (new[0], new[1] + 1) + new[2:]
        stale = kind == "read" and stored[buf] != arg
        return new, action, stale

    def dfs(state, path):
        if state in safe:
            return None
        stats["states"] += 1
        if stats["states"] > budget:
            raise ExplorationBudgetExceeded(stats["states"])
        moved = False
        for role in (PRODUCER, CONSUMER):
            result = step(state, role)
            if result is None:
                continue
            moved = True
            new_state, action, stale = result
            path.append(action)
            if stale:
                return list(path)
            witness = dfs(new_state, path)
            if witness is not None:
                return witness
            path.pop()
        if not moved and (state[0] < len(p_script) or state[1] < len(c_script)):
            stats["deadlocks"] += 1
        safe.add(state)
        return None

    initial = (0, 0, init_empty, init_full, init_stored)
    witness = dfs(initial, [])
    return ProtocolVerdict(
        ok=witness is None,
        witness=witness,
        states_explored=stats["states"],
        deadlocks=stats["deadlocks"],
    )


def write_trace_jsonl(trace: list[ProtocolAction], fh) -> None:
    """Emit a witness trace as ordered JSON-lines action records."""
    for i, action in enumerate(trace):
        fh.write(json.dumps({
            "step": i,
            "role": action.role,
            "action": action.action,
            "variable": action.variable,
            "buffer": action.buffer,
            "iteration": action.iteration,
            "value": action.value,
        }) + "\n")
