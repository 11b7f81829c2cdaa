"""Token-bucket pacer for a lane's uplink."""

from __future__ import annotations

import asyncio
import time


class TokenBucket:
    """Byte-denominated token bucket.

    ``rate`` is bytes per second, ``burst`` the bucket depth in bytes. A rate
    of zero blocks ``acquire`` until the rate is raised.
    """

    def __init__(self, rate: float, burst: float, clock=time.monotonic):
        self.clock = clock
        self.rate = float(rate)
        self.burst = float(burst)
        self.tokens = float(burst)
        self._last = clock()
        self._changed = asyncio.Event()

    def set_rate(self, rate: float, burst: float) -> None:
        self._refill()
        self.rate = float(rate)
        self.burst = float(burst)
        self.tokens = min(self.tokens, self.burst)
        self._changed.set()

    def _refill(self) -> None:
        now = self.clock()
        self.tokens = min(self.burst, self.tokens + (now - self._last) * self.rate)
        self._last = now

    def try_acquire(self, n: float) -> float:
        """Take ``n`` tokens if available and return 0, else the seconds to wait."""
        self._refill()
        if self.tokens >= n:
            self.tokens -= n
            return 0.0
        if self.rate <= 0 or n > self.burst:
            return float("inf")
        return (n - self.tokens) / self.rate

    async def acquire(self, n: float) -> None:
        while True:
            wait = self.try_acquire(n)
            if wait == 0.0:
                return
            self._changed.clear()
            if wait == float("inf"):
                await self._changed.wait()
            else:
                try:
                    await asyncio.wait_for(self._changed.wait(), wait)
                except asyncio.TimeoutError:
                    pass


def max_window_bytes(events, window_s: float = 1.0) -> float:
    """Largest byte count inside any ``window_s`` window of (time_s, nbytes) events."""
    events = sorted(events)
    best = total = 0.0
    lo = 0
    for t, n in events:
        total += n
        while events[lo][0] <= t - window_s:
            total -= events[lo][1]
            lo += 1
        best = max(best, total)
    return best
