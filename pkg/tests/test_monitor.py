import pytest

from turbo.runtime.monitor import LinkMonitor


class FakeClock:
    t = 0.0

    def __call__(self):
        return self.t


def test_ewma():
    m = LinkMonitor()
    m.on_rtt_sample(40)
    assert m.smoothed_rtt_ms == 40
    m.on_rtt_sample(80)
    assert m.smoothed_rtt_ms == pytest.approx(45)
    m.on_rtt_sample(-1)  # ignored
    assert m.smoothed_rtt_ms == pytest.approx(45)


def test_delivered_window():
    clock = FakeClock()
    m = LinkMonitor(clock=clock)
    m.on_delivered(1_250_000)  # 10 Mb
    clock.t = 0.5
    m.on_delivered(1_250_000)
    assert m.delivered_bandwidth_mbps == pytest.approx(20)
    clock.t = 1.2
    assert m.delivered_bandwidth_mbps == pytest.approx(10)
    clock.t = 3
    assert m.delivered_bandwidth_mbps == 0


def test_estimate_prefers_larger_evidence():
    clock = FakeClock()
    m = LinkMonitor(clock=clock)
    m.on_rtt_sample(30)
    m.on_delivered(125_000)
    m.on_capacity_sample(95)
    est = m.estimate()
    assert est.bandwidth_mbps == 95 and est.rtt_ms == 30
    assert m.last_update == 0.0
    clock.t = 2
    assert m.estimate().bandwidth_mbps == 0
