"""Command line front end.

Subcommands:
  topo       show a topology and its idle-bandwidth headroom
  simulate   one striped collective (optionally a dynamic run with drift)
  tune       run the coarse tuner and print or dump the trace
  oracle     exhaustive best split for comparison against the tuner
  bench      full benchmark sweep, or --check to compare against goldens
  calibrate  print per-path parameters fitted from the reference table
  protocol   explore the staging handshake for stale reads
"""

from __future__ import annotations

import argparse
import json
import sys

from . import bench as bench_mod
from .balancer import BalancerConfig, BandwidthShift, run_dynamic, write_adjustment_log
from .collectives import (
    CollectiveOp,
    CollectiveSpec,
    ShareDistribution,
    report_row,
    simulate_collective,
    write_reports_csv,
)
from .oracle import optimal_shares_bruteforce
from .simcore import NoiseModel
from .staging import explore_protocol, write_trace_jsonl
from .topo import PathKind, idle_bw_opportunity, path_from_name, topology_for
from .tuner import TunerConfig, initial_tune, write_trace
from .units import format_size, parse_size


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topo", default="H800",
                   help="preset name (H800, H100, A800, GB200, GB300) or YAML path")
    p.add_argument("--op", choices=[o.value for o in CollectiveOp],
                   default="allreduce")
    p.add_argument("--gpus", type=int, default=8)
    p.add_argument("--size", default="256M", help="per-rank buffer, e.g. 64M")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0,
                   help="relative timing noise (0 disables)")
    p.add_argument("--format", choices=["csv", "json", "md"], default="md")


def _noise(args) -> NoiseModel | None:
    return NoiseModel(sigma=args.sigma, seed=args.seed) if args.sigma > 0 else None


def _spec(args) -> CollectiveSpec:
    return CollectiveSpec(CollectiveOp(args.op), args.gpus, parse_size(args.size))


def cmd_topo(args) -> int:
    topo = topology_for(args.topo)
    rows = []
    for kind in topo.present_paths:
        link = topo.link(kind)
        rows.append({
            "path": kind.short,
            "bandwidth_gbps": round(link.bandwidth_uni / 1e9, 2),
            "latency_us": round(link.base_latency * 1e6, 2),
            "staging_chunk": format_size(link.staging_chunk) if link.staging_chunk else "-",
        })
    print(bench_mod.format_rows(rows, args.format))
    print(f"n_gpus={topo.n_gpus} contention={topo.path_contention} "
          f"idle_headroom={idle_bw_opportunity(topo):.0%}")
    return 0


def cmd_simulate(args) -> int:
    topo = topology_for(args.topo)
    spec = _spec(args)
    noise = _noise(args)
    shares, trace = initial_tune(topo, spec, TunerConfig(), noise=noise)
    if args.dynamic:
        shifts = ()
        if args.shift_path:
            shifts = (BandwidthShift(
                at_call=args.shift_call,
                path=path_from_name(args.shift_path),
                scale=args.shift_scale,
                duration=args.shift_duration),)
        result = run_dynamic(topo, spec, shares, BalancerConfig(),
                             n_calls=args.calls, shifts=shifts, noise=noise)
        if args.log:
            with open(args.log, "w") as fh:
                write_adjustment_log(result, fh)
        print(f"calls={args.calls} adjustments={result.adjustments_made} "
              f"final_shares={ {k.short: v for k, v in result.final_shares.as_dict().items()} }")
        return 0
    report = simulate_collective(topo, spec, shares, noise=noise)
    rows = [report_row(report, shares)]
    if args.format == "csv":
        write_reports_csv(rows, sys.stdout)
    else:
        print(bench_mod.format_rows(rows, args.format))
    print(f"converged={trace.converged} iterations={trace.iterations}")
    return 0


def cmd_tune(args) -> int:
    topo = topology_for(args.topo)
    spec = _spec(args)
    shares, trace = initial_tune(topo, spec, TunerConfig(), noise=_noise(args))
    if args.trace:
        with open(args.trace, "w") as fh:
            write_trace(trace, fh, "jsonl" if args.trace.endswith(".jsonl") else "csv")
    print(f"converged={trace.converged} iterations={trace.iterations}")
    for kind, value in sorted(shares.as_dict().items()):
        print(f"  {kind.short}: {value}")
    return 0


def cmd_oracle(args) -> int:
    topo = topology_for(args.topo)
    spec = _spec(args)
    result = optimal_shares_bruteforce(topo, spec, granularity=args.granularity)
    print(f"evaluations={result.evaluations} best_time={result.best_time:.6f}s")
    for kind, value in sorted(result.best_shares.as_dict().items()):
        print(f"  {kind.short}: {value}")
    return 0


def cmd_bench(args) -> int:
    if args.check:
        problems = bench_mod.run_golden_checks()
        if problems:
            for problem in problems:
                print(f"MISMATCH: {problem}", file=sys.stderr)
            return 1
        print("all golden checks passed")
        return 0
    topo = topology_for(args.topo)
    sizes = tuple(parse_size(s) for s in args.sizes.split(","))
    plan = bench_mod.BenchPlan(
        topo=topo, sizes=sizes,
        gpu_counts=tuple(int(g) for g in args.gpu_counts.split(",")),
        modes=tuple(args.modes.split(",")),
        noise=_noise(args))
    rows = [row.to_dict() for row in bench_mod.run_bench(plan)]
    print(bench_mod.format_rows(rows, args.format))
    return 0


def cmd_calibrate(args) -> int:
    cal = bench_mod.calibrate(bench_mod.H800_MEASUREMENTS)
    rows = []
    for (op, n), fit in sorted(cal.nvlink.items()):
        rows.append({
            "op": op.value, "n_gpus": n, "path": "nvlink",
            "bandwidth_gbps": round(fit.bandwidth / 1e9, 2),
            "latency_us": round(fit.latency * 1e6, 2),
            "worst_residual_pct": round(100 * max(abs(r) for r in fit.residuals.values()), 2),
        })
    for (op, n, mode), fits in sorted(cal.secondary.items()):
        for kind, bw in sorted(fits.items()):
            rows.append({
                "op": op.value, "n_gpus": n, "path": f"{kind.short} ({mode})",
                "bandwidth_gbps": round(bw / 1e9, 2),
                "latency_us": "-", "worst_residual_pct": "-",
            })
    print(bench_mod.format_rows(rows, args.format))
    return 0


def cmd_protocol(args) -> int:
    verdict = explore_protocol(iterations=args.iterations, buffers=args.buffers,
                               variant=args.variant, budget=args.budget)
    print(f"variant={args.variant} buffers={args.buffers} iterations={args.iterations} "
          f"verdict={verdict.verdict} states={verdict.states_explored} "
          f"deadlocks={verdict.deadlocks}")
    if verdict.witness and args.witness:
        with open(args.witness, "w") as fh:
            write_trace_jsonl(verdict.witness, fh)
        print(f"witness written to {args.witness}")
    elif verdict.witness:
        for action in verdict.witness:
            print("  " + json.dumps(action.to_dict()))
    return 0 if verdict.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linkstripe",
        description="simulate and tune collectives striped over heterogeneous links")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topo", help="describe a topology")
    _add_common(p)
    p.set_defaults(fn=cmd_topo)

    p = sub.add_parser("simulate", help="simulate one tuned collective")
    _add_common(p)
    p.add_argument("--dynamic", action="store_true",
                   help="run repeated calls with the runtime balancer")
    p.add_argument("--calls", type=int, default=100)
    p.add_argument("--shift-call", type=int, default=50,
                   help="call index where a bandwidth shift begins")
    p.add_argument("--shift-path", default="",
                   help="path whose bandwidth shifts (nvlink/pcie/rdma)")
    p.add_argument("--shift-scale", type=float, default=0.7)
    p.add_argument("--shift-duration", type=int, default=None,
                   help="calls the shift lasts (default: permanent)")
    p.add_argument("--log", default="", help="JSONL adjustment log path")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("tune", help="run the coarse tuner")
    _add_common(p)
    p.add_argument("--trace", default="", help="write per-iteration trace here")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("oracle", help="exhaustive best split")
    _add_common(p)
    p.add_argument("--granularity", type=int, default=10)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("bench", help="benchmark sweep or golden check")
    _add_common(p)
    p.add_argument("--sizes", default="32M,64M,128M,256M")
    p.add_argument("--gpu-counts", default="2,4,8")
    p.add_argument("--modes", default=",".join(
        (bench_mod.MODE_PCIE_ONLY, bench_mod.MODE_PCIE_RDMA)))
    p.add_argument("--check", action="store_true",
                   help="verify simulated numbers against the published table")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("calibrate", help="fitted per-path parameters")
    _add_common(p)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("protocol", help="model-check the staging handshake")
    p.add_argument("--variant", choices=["counter", "binary"], default="counter")
    p.add_argument("--buffers", type=int, default=2)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--budget", type=int, default=1_000_000)
    p.add_argument("--witness", default="", help="JSONL witness trace path")
    p.set_defaults(fn=cmd_protocol)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
