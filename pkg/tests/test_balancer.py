import io
import json

import pytest

from linkstripe.balancer import (
    Adjustment,
    BalancerConfig,
    BandwidthShift,
    TimingWindow,
    apply_adjustment,
    evaluate,
    median_durations,
    record,
    run_dynamic,
    window_gap,
    write_adjustment_log,
)
from linkstripe.collectives import (
    CollectiveOp,
    CollectiveSpec,
    PathTimingReport,
    ShareDistribution,
)
from linkstripe.topo import LinkSpec, PathKind, TopologySpec

ACTIVE = (PathKind.NVLINK, PathKind.PCIE_STAGED)


def drift_topo(nv=400e9, pcie=100e9):
    return TopologySpec(n_gpus=8, links={
        PathKind.NVLINK: LinkSpec(PathKind.NVLINK, nv, base_latency=5e-6),
        PathKind.PCIE_STAGED: LinkSpec(PathKind.PCIE_STAGED, pcie, base_latency=10e-6,
                                       staging_chunk=1 << 20),
    }, name="drift")


def fill(window, pairs):
    for nv, pcie in pairs:
        record(window, PathTimingReport.build(
            CollectiveOp.ALLREDUCE, 8, 1 << 20,
            {PathKind.NVLINK: nv, PathKind.PCIE_STAGED: pcie}))


def test_config_validation():
    with pytest.raises(ValueError):
        BalancerConfig(window=0)
    with pytest.raises(ValueError):
        BalancerConfig(gap_threshold=0.0)
    with pytest.raises(ValueError):
        BalancerConfig(quantum=0)
    with pytest.raises(ValueError):
        BalancerConfig(invocation_period=0)


def test_window_is_bounded_and_median_is_robust():
    window = TimingWindow(5)
    fill(window, [(1.0, 1.0)] * 4 + [(1.0, 50.0)])
    med = median_durations(window, ACTIVE)
    assert med[PathKind.PCIE_STAGED] == 1.0  # one spike out of five is ignored
    fill(window, [(2.0, 2.0)] * 5)  # rolls the old samples out
    med = median_durations(window, ACTIVE)
    assert med[PathKind.NVLINK] == 2.0


def test_window_gap_needs_two_paths():
    window = TimingWindow(5)
    assert window_gap(window, ACTIVE) is None
    fill(window, [(1.0, 1.2)])
    gap, slow, fast = window_gap(window, ACTIVE)
    assert gap == pytest.approx(0.2)
    assert slow is PathKind.PCIE_STAGED
    assert fast is PathKind.NVLINK
    assert window_gap(window, (PathKind.NVLINK,)) is None


def test_evaluate_below_threshold_is_none():
    window = TimingWindow(10)
    fill(window, [(1.0, 1.05)] * 10)
    shares = ShareDistribution({PathKind.NVLINK: 900, PathKind.PCIE_STAGED: 100})
    assert evaluate(window, BalancerConfig(), shares, ACTIVE) is None


def test_evaluate_moves_quantum_toward_nvlink_first():
    window = TimingWindow(10)
    fill(window, [(1.0, 1.5)] * 10)
    shares = ShareDistribution({PathKind.NVLINK: 900, PathKind.PCIE_STAGED: 100})
    adj = evaluate(window, BalancerConfig(), shares, ACTIVE)
    assert adj.source is PathKind.PCIE_STAGED
    assert adj.target is PathKind.NVLINK
    assert adj.granules == 10


def test_evaluate_falls_back_to_fastest_when_nvlink_is_slow():
    window = TimingWindow(10)
    fill(window, [(1.5, 1.0)] * 10)
    shares = ShareDistribution({PathKind.NVLINK: 900, PathKind.PCIE_STAGED: 100})
    adj = evaluate(window, BalancerConfig(), shares, ACTIVE)
    assert adj.source is PathKind.NVLINK
    assert adj.target is PathKind.PCIE_STAGED


def test_apply_adjustment_clamps_to_available():
    shares = ShareDistribution({PathKind.NVLINK: 995, PathKind.PCIE_STAGED: 5})
    adj = Adjustment(source=PathKind.PCIE_STAGED, target=PathKind.NVLINK,
                     granules=10, gap=0.5)
    new, moved = apply_adjustment(shares, adj)
    assert moved == 5
    assert new.get(PathKind.PCIE_STAGED) == 0
    empty = Adjustment(source=PathKind.RDMA_NIC, target=PathKind.NVLINK,
                       granules=10, gap=0.5)
    same, moved = apply_adjustment(shares, empty)
    assert moved == 0
    assert same.as_dict() == shares.as_dict()


def test_bandwidth_shift_window():
    shift = BandwidthShift(at_call=30, path=PathKind.PCIE_STAGED, scale=0.7, duration=5)
    assert not shift.applies(29)
    assert shift.applies(30)
    assert shift.applies(34)
    assert not shift.applies(35)
    forever = BandwidthShift(at_call=30, path=PathKind.PCIE_STAGED, scale=0.7)
    assert forever.applies(10_000)


def test_run_dynamic_steady_state_never_adjusts():
    topo = drift_topo()
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 64 << 20)
    shares = ShareDistribution({PathKind.NVLINK: 912, PathKind.PCIE_STAGED: 88})
    result = run_dynamic(topo, spec, shares, n_calls=50)
    assert result.adjustments_made == 0
    assert result.final_shares.as_dict() == shares.as_dict()
    assert len(result.reports) == 50
    assert len(result.evaluations) == 5


def test_run_dynamic_corrects_permanent_drift():
    topo = drift_topo()
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 64 << 20)
    shares = ShareDistribution({PathKind.NVLINK: 912, PathKind.PCIE_STAGED: 88})
    shift = BandwidthShift(at_call=31, path=PathKind.PCIE_STAGED, scale=0.7)
    result = run_dynamic(topo, spec, shares, n_calls=150, shifts=(shift,))
    assert 1 <= result.adjustments_made <= 5
    assert result.final_shares.get(PathKind.PCIE_STAGED) < 88
    last_gap = result.evaluations[-1].gap
    assert last_gap is not None and last_gap < BalancerConfig().gap_threshold


def test_run_dynamic_ignores_single_call_spike():
    topo = drift_topo()
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 64 << 20)
    shares = ShareDistribution({PathKind.NVLINK: 912, PathKind.PCIE_STAGED: 88})
    spike = BandwidthShift(at_call=15, path=PathKind.PCIE_STAGED, scale=0.3, duration=1)
    result = run_dynamic(topo, spec, shares, n_calls=40, shifts=(spike,))
    assert result.adjustments_made == 0
    assert result.final_shares.as_dict() == shares.as_dict()


def test_run_dynamic_never_reactivates_empty_paths():
    # a path at zero granules stays out even when it would help
    topo = drift_topo()
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 64 << 20)
    shares = ShareDistribution({PathKind.NVLINK: 1000, PathKind.PCIE_STAGED: 0})
    result = run_dynamic(topo, spec, shares, n_calls=30)
    assert result.final_shares.get(PathKind.PCIE_STAGED) == 0
    assert result.adjustments_made == 0


def test_adjustment_log_jsonl():
    topo = drift_topo()
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 64 << 20)
    shares = ShareDistribution({PathKind.NVLINK: 912, PathKind.PCIE_STAGED: 88})
    shift = BandwidthShift(at_call=11, path=PathKind.PCIE_STAGED, scale=0.7)
    result = run_dynamic(topo, spec, shares, n_calls=60, shifts=(shift,))
    buf = io.StringIO()
    write_adjustment_log(result, buf)
    rows = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert len(rows) == len(result.evaluations)
    assert rows[0]["call"] == 10
    moved_rows = [r for r in rows if r["moved"]]
    assert moved_rows and moved_rows[0]["source"] == "pcie"
    assert moved_rows[0]["target"] == "nvlink"
