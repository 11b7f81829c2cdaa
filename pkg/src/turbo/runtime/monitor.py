"""Live link estimates: smoothed RTT and delivered bandwidth."""

from __future__ import annotations

import collections
import time

from ..utility import NetworkEstimate

RTT_ALPHA = 0.125


class LinkMonitor:
    """EWMA of RTT samples plus delivery rate over a sliding window.

    Delivered bytes come from acknowledged requests. Probe trains add
    capacity samples, which stay valid for one window and cover idle periods
    when no lane traffic flows.
    """

    def __init__(self, window_s: float = 1.0, clock=time.monotonic, alpha: float = RTT_ALPHA):
        self.window_s = window_s
        self.clock = clock
        self.alpha = alpha
        self.smoothed_rtt_ms: float | None = None
        self.last_update: float | None = None
        self._delivered: collections.deque[tuple[float, int]] = collections.deque()
        self._capacity: collections.deque[tuple[float, float]] = collections.deque()

    def on_rtt_sample(self, rtt_ms: float) -> None:
        if rtt_ms < 0:
            return
        if self.smoothed_rtt_ms is None:
            self.smoothed_rtt_ms = rtt_ms
        else:
            self.smoothed_rtt_ms += self.alpha * (rtt_ms - self.smoothed_rtt_ms)
        self.last_update = self.clock()

    def on_delivered(self, nbytes: int) -> None:
        now = self.clock()
        self._delivered.append((now, nbytes))
        self.last_update = now

    def on_capacity_sample(self, mbps: float) -> None:
        now = self.clock()
        self._capacity.append((now, mbps))
        self.last_update = now

    def _expire(self, now: float) -> None:
        horizon = now - self.window_s
        while self._delivered and self._delivered[0][0] <= horizon:
            self._delivered.popleft()
        while self._capacity and self._capacity[0][0] <= horizon:
            self._capacity.popleft()

    @property
    def delivered_bandwidth_mbps(self) -> float:
        now = self.clock()
        self._expire(now)
        return sum(n for _, n in self._delivered) * 8 / 1e6 / self.window_s

    @property
    def probed_bandwidth_mbps(self) -> float:
        self._expire(self.clock())
        if not self._capacity:
            return 0.0
        return max(m for _, m in self._capacity)

    def estimate(self) -> NetworkEstimate:
        bw = max(self.delivered_bandwidth_mbps, self.probed_bandwidth_mbps)
        return NetworkEstimate(bw, self.smoothed_rtt_ms or 0.0)
