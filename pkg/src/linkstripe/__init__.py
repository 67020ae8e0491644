"""Deterministic simulation and tuning of collectives striped over
heterogeneous intra-server links (direct GPU mesh, host-staged PCIe,
per-GPU RDMA NICs)."""

from .balancer import (
    Adjustment,
    BalancerConfig,
    BandwidthShift,
    DynamicResult,
    TimingWindow,
    apply_adjustment,
    evaluate,
    median_durations,
    run_dynamic,
    window_gap,
)
from .bench import (
    BenchPlan,
    BenchRow,
    CalibrationResult,
    H800_MEASUREMENTS,
    MeasuredRow,
    build_calibrated_topology,
    calibrate,
    reproduce_reference,
    run_bench,
    run_golden_checks,
)
from .collectives import (
    GRANULE_TOTAL,
    CollectiveOp,
    CollectiveSpec,
    PathTimingReport,
    ShareDistribution,
    ShareTable,
    partition,
    ring_steps,
    simulate_collective,
    size_bucket,
)
from .oracle import OracleResult, closed_form_shares, optimal_shares_bruteforce
from .simcore import (
    NoiseModel,
    RunResult,
    SimClock,
    TransferRecord,
    TransferRequest,
    effective_bandwidths,
    maxmin_rates,
    run_transfers,
)
from .staging import (
    PipelineSpec,
    ProtocolVerdict,
    explore_protocol,
    pipeline_time,
    simulate_pipeline_events,
)
from .topo import (
    LinkSpec,
    PathKind,
    TopologySpec,
    idle_bw_opportunity,
    load_topology,
    preset,
    topology_for,
)
from .tuner import (
    TuneTrace,
    TunerConfig,
    TunerState,
    initial_tune,
    initialize_shares,
    tune_step,
)
from .units import parse_bandwidth, parse_size, parse_time

__version__ = "0.1.0"

__all__ = [
    "Adjustment",
    "BalancerConfig",
    "BandwidthShift",
    "BenchPlan",
    "BenchRow",
    "CalibrationResult",
    "CollectiveOp",
    "CollectiveSpec",
    "DynamicResult",
    "GRANULE_TOTAL",
    "H800_MEASUREMENTS",
    "LinkSpec",
    "MeasuredRow",
    "NoiseModel",
    "OracleResult",
    "PathKind",
    "PathTimingReport",
    "PipelineSpec",
    "ProtocolVerdict",
    "RunResult",
    "ShareDistribution",
    "ShareTable",
    "SimClock",
    "TimingWindow",
    "TopologySpec",
    "TransferRecord",
    "TransferRequest",
    "TuneTrace",
    "TunerConfig",
    "TunerState",
    "apply_adjustment",
    "build_calibrated_topology",
    "calibrate",
    "closed_form_shares",
    "effective_bandwidths",
    "evaluate",
    "explore_protocol",
    "idle_bw_opportunity",
    "initial_tune",
    "initialize_shares",
    "load_topology",
    "maxmin_rates",
    "median_durations",
    "optimal_shares_bruteforce",
    "parse_bandwidth",
    "parse_size",
    "parse_time",
    "partition",
    "pipeline_time",
    "preset",
    "reproduce_reference",
    "ring_steps",
    "run_bench",
    "run_dynamic",
    "run_golden_checks",
    "run_transfers",
    "simulate_collective",
    "simulate_pipeline_events",
    "size_bucket",
    "topology_for",
    "tune_step",
    "window_gap",
]
