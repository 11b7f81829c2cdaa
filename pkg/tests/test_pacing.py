import asyncio

import pytest

from turbo.runtime.pacing import TokenBucket, max_window_bytes


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def test_try_acquire():
    clock = FakeClock()
    tb = TokenBucket(1000, 500, clock)
    assert tb.try_acquire(500) == 0.0
    assert tb.try_acquire(100) == pytest.approx(0.1)
    clock.t = 0.1
    assert tb.try_acquire(100) == 0.0
    assert tb.try_acquire(501) == float("inf")


def test_zero_rate_blocks_until_raised():
    async def go():
        tb = TokenBucket(0, 1)
        tb.tokens = 0
        task = asyncio.create_task(tb.acquire(100))
        await asyncio.sleep(0.05)
        assert not task.done()
        tb.set_rate(1e6, 1000)
        await asyncio.wait_for(task, 1)

    asyncio.run(go())


def test_paced_rate_conforms():
    async def go():
        rate = 200_000.0
        tb = TokenBucket(rate, 0.1 * rate)
        loop = asyncio.get_running_loop()
        events = []
        start = loop.time()
        while loop.time() - start < 2.5:
            await tb.acquire(5000)
            events.append((loop.time(), 5000))
        return events, rate

    events, rate = asyncio.run(go())
    assert max_window_bytes(events) <= 1.1 * rate


def test_max_window_bytes():
    ev = [(0.0, 10), (0.5, 10), (0.99, 10), (1.0, 10), (2.5, 100)]
    assert max_window_bytes(ev) == 100
    assert max_window_bytes(ev[:4]) == 30
    assert max_window_bytes([]) == 0
