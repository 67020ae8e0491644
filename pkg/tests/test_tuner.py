import io
import json

import pytest

from linkstripe.collectives import (
    CollectiveOp,
    CollectiveSpec,
    PathTimingReport,
    ShareDistribution,
)
from linkstripe.topo import LinkSpec, PathKind, TopologySpec, preset
from linkstripe.tuner import (
    TunerConfig,
    TunerState,
    imbalance,
    initial_tune,
    initialize_shares,
    slowest_fastest,
    tune_step,
    write_trace,
)


def three_path(nv=200e9, pcie=64e9, rdma=25e9, chunk=1 << 20, **kwargs):
    links = {
        PathKind.NVLINK: LinkSpec(PathKind.NVLINK, nv),
        PathKind.PCIE_STAGED: LinkSpec(PathKind.PCIE_STAGED, pcie, staging_chunk=chunk),
        PathKind.RDMA_NIC: LinkSpec(PathKind.RDMA_NIC, rdma, staging_chunk=chunk),
    }
    return TopologySpec(n_gpus=8, links=links, **kwargs)


def report_for(durations, op=CollectiveOp.ALLREDUCE, n=8, size=1 << 20):
    return PathTimingReport.build(op, n, size, durations)


def state_for(shares, step=32, **kwargs):
    dist = ShareDistribution(shares)
    return TunerState(shares=dist, active=frozenset(shares), step=step, **kwargs)


def test_config_validation():
    with pytest.raises(ValueError):
        TunerConfig(initial_step=0)
    with pytest.raises(ValueError):
        TunerConfig(convergence_threshold=0.0)
    with pytest.raises(ValueError):
        TunerConfig(stability_required=0)
    with pytest.raises(ValueError):
        TunerConfig(max_iterations=0)


def test_initialize_shares_proportional_with_floor():
    # 200/64/25 GB/s -> raw 692.0/221.4/86.5; secondaries floor, NVLINK
    # takes the remainder
    topo = three_path()
    shares = initialize_shares(topo)
    assert shares.as_dict() == {PathKind.NVLINK: 693, PathKind.PCIE_STAGED: 221,
                                PathKind.RDMA_NIC: 86}


def test_initialize_shares_respects_contention():
    topo = three_path(path_contention=True, shared_interface_bw=64e9)
    shares = initialize_shares(topo)
    # staged+NIC effectively share 64: NIC keeps 25, PCIe gets 39
    total = 200e9 + 39e9 + 25e9
    assert shares.get(PathKind.PCIE_STAGED) == int(1000 * 39e9 / total)
    assert shares.get(PathKind.RDMA_NIC) == int(1000 * 25e9 / total)
    assert shares.get(PathKind.NVLINK) == 1000 - shares.get(PathKind.PCIE_STAGED) \
        - shares.get(PathKind.RDMA_NIC)


def test_initialize_shares_keeps_nvlink_strictly_largest():
    topo = TopologySpec(n_gpus=8, links={
        PathKind.NVLINK: LinkSpec(PathKind.NVLINK, 50e9),
        PathKind.PCIE_STAGED: LinkSpec(PathKind.PCIE_STAGED, 50e9, staging_chunk=1 << 20),
    })
    shares = initialize_shares(topo)
    assert shares.as_dict() == {PathKind.NVLINK: 501, PathKind.PCIE_STAGED: 499}


def test_initialize_shares_needs_nvlink():
    topo = three_path()
    with pytest.raises(ValueError):
        initialize_shares(topo, paths=(PathKind.PCIE_STAGED, PathKind.RDMA_NIC))


def test_slowest_fastest_tie_break_by_path_order():
    report = report_for({PathKind.NVLINK: 1.0, PathKind.PCIE_STAGED: 1.0,
                         PathKind.RDMA_NIC: 1.0})
    slow, fast = slowest_fastest(report, set(report.durations))
    # ties resolve to the first path kind on both ends
    assert slow is PathKind.NVLINK
    assert fast is PathKind.NVLINK
    report = report_for({PathKind.NVLINK: 1.0, PathKind.PCIE_STAGED: 2.0,
                         PathKind.RDMA_NIC: 2.0})
    slow, _ = slowest_fastest(report, set(report.durations))
    assert slow is PathKind.PCIE_STAGED


def test_imbalance_definition():
    report = report_for({PathKind.NVLINK: 1.0, PathKind.PCIE_STAGED: 1.3})
    assert imbalance(report, set(report.durations)) == pytest.approx(0.3)
    assert imbalance(report, {PathKind.NVLINK}) == 0.0
    with pytest.raises(ValueError):
        imbalance(report_for({PathKind.NVLINK: 0.0, PathKind.PCIE_STAGED: 1.0}),
                  {PathKind.NVLINK, PathKind.PCIE_STAGED})


def test_stable_iteration_counts_up_and_freezes_shares():
    state = state_for({PathKind.NVLINK: 700, PathKind.PCIE_STAGED: 300})
    report = report_for({PathKind.NVLINK: 1.0, PathKind.PCIE_STAGED: 1.02})
    new, record = tune_step(state, report, TunerConfig())
    assert record.action == "stable"
    assert new.stability_count == 1
    assert new.shares.as_dict() == state.shares.as_dict()
    assert new.step == state.step
    assert new.prev_slowest is None


def test_move_goes_to_nvlink_when_it_is_not_the_bottleneck():
    state = state_for({PathKind.NVLINK: 700, PathKind.PCIE_STAGED: 200,
                       PathKind.RDMA_NIC: 100})
    report = report_for({PathKind.NVLINK: 1.0, PathKind.PCIE_STAGED: 2.0,
                         PathKind.RDMA_NIC: 1.5})
    new, record = tune_step(state, report, TunerConfig())
    assert new.shares.get(PathKind.PCIE_STAGED) == 168
    assert new.shares.get(PathKind.NVLINK) == 732
    assert record.action == "move 32 pcie->nvlink"
    assert new.stability_count == 0
    assert new.prev_slowest is PathKind.PCIE_STAGED


def test_move_goes_to_fastest_when_nvlink_is_the_bottleneck():
    state = state_for({PathKind.NVLINK: 700, PathKind.PCIE_STAGED: 200,
                       PathKind.RDMA_NIC: 100})
    report = report_for({PathKind.NVLINK: 2.0, PathKind.PCIE_STAGED: 1.0,
                         PathKind.RDMA_NIC: 1.5})
    new, record = tune_step(state, report, TunerConfig())
    assert record.action == "move 32 nvlink->pcie"
    assert new.shares.get(PathKind.PCIE_STAGED) == 232


def test_step_halves_only_when_bottleneck_changes():
    state = state_for({PathKind.NVLINK: 700, PathKind.PCIE_STAGED: 300},
                      prev_slowest=PathKind.PCIE_STAGED)
    same = report_for({PathKind.NVLINK: 1.0, PathKind.PCIE_STAGED: 2.0})
    new, _ = tune_step(state, same, TunerConfig())
    assert new.step == 32
    flipped = report_for({PathKind.NVLINK: 2.0, PathKind.PCIE_STAGED: 1.0})
    new, _ = tune_step(state, flipped, TunerConfig())
    assert new.step == 16
    # the first iteration has nothing to compare against
    fresh = state_for({PathKind.NVLINK: 700, PathKind.PCIE_STAGED: 300})
    new, _ = tune_step(fresh, flipped, TunerConfig())
    assert new.step == 32


def test_step_never_drops_below_one():
    state = state_for({PathKind.NVLINK: 700, PathKind.PCIE_STAGED: 300},
                      step=1, prev_slowest=PathKind.NVLINK)
    report = report_for({PathKind.NVLINK: 1.0, PathKind.PCIE_STAGED: 2.0})
    new, _ = tune_step(state, report, TunerConfig())
    assert new.step == 1


def test_drained_path_is_deactivated():
    state = state_for({PathKind.NVLINK: 980, PathKind.PCIE_STAGED: 20})
    report = report_for({PathKind.NVLINK: 1.0, PathKind.PCIE_STAGED: 5.0})
    new, record = tune_step(state, report, TunerConfig())
    assert new.shares.get(PathKind.PCIE_STAGED) == 0
    assert PathKind.PCIE_STAGED not in new.active
    assert "deactivate pcie" in record.action
    # a deactivated path stays out even if it would now look attractive
    report2 = report_for({PathKind.NVLINK: 1.0})
    new2, record2 = tune_step(new, report2, TunerConfig())
    assert PathKind.PCIE_STAGED not in new2.active
    assert record2.action == "stable"


def test_initial_tune_converges_on_stable_topology():
    topo = three_path()
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 256 << 20)
    shares, trace = initial_tune(topo, spec)
    assert trace.converged
    assert trace.iterations <= 100
    assert sum(shares.as_dict().values()) == 1000
    # the last records before convergence are the stability run
    tail = [r.action for r in trace.records[-3:]]
    assert tail == ["stable", "stable", "stable"]


def test_initial_tune_early_exit_with_only_nvlink():
    topo = TopologySpec(n_gpus=8, links={PathKind.NVLINK: LinkSpec(PathKind.NVLINK, 100e9)})
    spec = CollectiveSpec(CollectiveOp.ALLGATHER, 8, 32 << 20)
    shares, trace = initial_tune(topo, spec)
    assert trace.converged
    assert trace.iterations == 1
    assert trace.records[0].action == "early_exit"
    assert shares.as_dict() == {PathKind.NVLINK: 1000}


def test_initial_tune_hits_iteration_cap_without_convergence():
    calls = {"n": 0}
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 1 << 20)

    def hostile(state):
        calls["n"] += 1
        flip = calls["n"] % 2
        return report_for({
            PathKind.NVLINK: 1.0,
            PathKind.PCIE_STAGED: 2.0 + flip,
            PathKind.RDMA_NIC: 3.0 - flip,
        })

    shares, trace = initial_tune(three_path(), spec, TunerConfig(max_iterations=10),
                                 measure=hostile)
    assert not trace.converged
    assert trace.iterations == 10


def test_initial_tune_with_noise_is_reproducible():
    from linkstripe.simcore import NoiseModel

    topo = three_path()
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 128 << 20)
    a, _ = initial_tune(topo, spec, noise=NoiseModel(sigma=0.05, seed=11))
    b, _ = initial_tune(topo, spec, noise=NoiseModel(sigma=0.05, seed=11))
    assert a.as_dict() == b.as_dict()


def test_initial_tune_on_preset_stays_reasonable():
    topo = preset("H800")
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 256 << 20)
    shares, trace = initial_tune(topo, spec)
    assert trace.converged
    # NVLink keeps the bulk of the traffic on this machine shape
    assert shares.get(PathKind.NVLINK) >= 700


def test_write_trace_formats():
    topo = three_path()
    spec = CollectiveSpec(CollectiveOp.ALLREDUCE, 8, 64 << 20)
    _, trace = initial_tune(topo, spec)
    csv_buf = io.StringIO()
    write_trace(trace, csv_buf, "csv")
    lines = csv_buf.getvalue().strip().splitlines()
    assert len(lines) == trace.iterations + 1
    assert lines[0].startswith("iteration,action,imbalance")
    json_buf = io.StringIO()
    write_trace(trace, json_buf, "jsonl")
    rows = [json.loads(line) for line in json_buf.getvalue().splitlines()]
    assert len(rows) == trace.iterations
    assert rows[0]["iteration"] == 1
    with pytest.raises(ValueError):
        write_trace(trace, io.StringIO(), "xml")
