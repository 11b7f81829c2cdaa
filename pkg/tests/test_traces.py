import pytest

from turbo.traces import (
    AccuracyTrace, NetSample, NetworkModel, NetworkTrace, TraceError, VarianceModel, gen_traces,
    static_accuracy_trace,
)


def test_step_hold():
    tr = NetworkTrace([NetSample(0, 10, 5), NetSample(100, 0, 5), NetSample(200, 30, 7)])
    assert tr.at(0).bandwidth_mbps == 10
    assert tr.at(99.9).bandwidth_mbps == 10
    assert tr.at(150).bandwidth_mbps == 0
    assert tr.at(1e9).rtt_ms == 7
    assert tr.next_change(50) == 100
    assert tr.next_change(250) is None


def test_network_validation():
    with pytest.raises(TraceError):
        NetworkTrace([])
    with pytest.raises(TraceError):
        NetworkTrace([NetSample(0, 1, 1), NetSample(0, 1, 1)])
    with pytest.raises(TraceError):
        NetworkTrace([NetSample(0, -1, 1)])
    with pytest.raises(TraceError):
        NetworkTrace.from_csv("a,b\n1,2\n")


def test_csv_roundtrip(profiles):
    acc, net = gen_traces(profiles, seed=4, scenarios=2, frames=5)
    assert AccuracyTrace.from_csv(acc.to_csv()).to_csv() == acc.to_csv()
    assert NetworkTrace.from_csv(net.to_csv()).to_csv() == net.to_csv()


def test_same_seed_identical(profiles):
    a1, n1 = gen_traces(profiles, seed=11, scenarios=3, frames=20)
    a2, n2 = gen_traces(profiles, seed=11, scenarios=3, frames=20)
    a3, _ = gen_traces(profiles, seed=12, scenarios=3, frames=20)
    assert a1.to_csv() == a2.to_csv() and n1.to_csv() == n2.to_csv()
    assert a1.to_csv() != a3.to_csv()


def test_zero_spread_equals_profile(profiles):
    acc = static_accuracy_trace(profiles, scenarios=2, frames=3)
    for (svc, cid), mean in acc.global_means.items():
        assert mean == pytest.approx(profiles.configs[cid].accuracy)
    assert acc.get("s0001", 2, "cam_front", "ed4_dnn_jpeg90") == pytest.approx(0.34)


def test_mean_ordering_preserved(profiles):
    acc, _ = gen_traces(profiles, seed=2, scenarios=40, frames=50)
    cids = [c for c in profiles.service("cam_front").remote_configs if c.endswith("_vehicle_pre")]
    by_profile = sorted(cids, key=lambda c: profiles.configs[c].accuracy)
    by_trace = sorted(cids, key=lambda c: acc.global_means[("cam_front", c)])
    assert by_profile == by_trace


def test_service_spread_distinct(profiles):
    var = VarianceModel(spread=0.05, service_spread={"motion": 0.0})
    acc, _ = gen_traces(profiles, seed=5, scenarios=2, frames=10, variance=var)
    motion = {acc.get("s0000", f, "motion", "mtr_cloud") for f in range(10)}
    cam = {acc.get("s0000", f, "cam_front", "ed4_vehicle_pre") for f in range(10)}
    assert motion == {0.4}
    assert len(cam) > 1


def test_network_model(profiles):
    _, net = gen_traces(profiles, seed=1, scenarios=1, frames=100, network=NetworkModel(mean_mbps=0))
    assert all(s.bandwidth_mbps == 0 for s in net.samples)


def test_counts_must_be_positive(profiles):
    with pytest.raises(ValueError):
        gen_traces(profiles, seed=1, scenarios=0, frames=1)


def test_accuracy_validation():
    with pytest.raises(TraceError):
        AccuracyTrace.from_csv("scenario_id,frame_idx,service_id,config_id,accuracy\ns,0,a,b,1.5\n")
