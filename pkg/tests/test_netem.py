import asyncio

import pytest

from turbo.runtime.netem import CapabilityError, netem_shape
from turbo.traces import NetSample, NetworkTrace


def test_unsupported_backend():
    with pytest.raises(CapabilityError):
        netem_shape(NetworkTrace.constant(1, 1), backend="tc")


def _transfer(trace, nbytes, start_delay=0.0):
    async def go():
        shaper = netem_shape(trace)
        loop = asyncio.get_running_loop()
        await asyncio.sleep(start_delay)
        t0 = loop.time()
        done = loop.create_future()
        await shaper.send(nbytes, lambda: done.set_result(loop.time()))
        return await asyncio.wait_for(done, 30) - t0

    return asyncio.run(go())


def test_one_megabit_at_100mbps():
    # 10 ms serialization + 20 ms one-way delay
    took = _transfer(NetworkTrace.constant(100, 40), 125_000)
    assert took == pytest.approx(0.030, rel=0.2)


def test_zero_bandwidth_gap_defers_delivery():
    trace = NetworkTrace([NetSample(0, 0, 0), NetSample(300, 100, 0)])
    took = _transfer(trace, 125_000)
    assert took == pytest.approx(0.31, abs=0.03)


def test_rate_change_honoured_within_a_step():
    # 100 ms at 10 Mbps then 100 Mbps: 2 Mb takes 100 ms + 10 ms
    trace = NetworkTrace([NetSample(0, 10, 0), NetSample(100, 100, 0)])
    took = _transfer(trace, 250_000)
    assert took == pytest.approx(0.110, abs=0.02)


def test_fifo_order_and_downlink():
    async def go():
        shaper = netem_shape(NetworkTrace.constant(80, 10), downlink_scale=0.5)
        loop = asyncio.get_running_loop()
        order = []
        await shaper.send(50_000, lambda: order.append("a"))
        await shaper.send(10, lambda: order.append("b"))
        got = loop.create_future()
        t0 = loop.time()
        shaper.receive(100_000, lambda: got.set_result(loop.time()))
        arrived = await got
        await asyncio.sleep(0.02)
        return order, arrived - t0

    order, took = asyncio.run(go())
    assert order == ["a", "b"]
    assert took == pytest.approx(0.020 + 0.005, rel=0.25)  # 0.8 Mb at 40 Mbps + 5 ms
