"""In-process link emulation between the client and the transport.

Bytes pass through a virtual FIFO bottleneck whose rate follows the trace's
bandwidth, then wait out half the trace RTT before reaching the socket.
The downlink gets its own FIFO with the same treatment. Nothing touches the
kernel, so it works unprivileged on loopback.
"""

from __future__ import annotations

import asyncio
import math
import time

from ..traces import NetworkTrace

CHUNK_BYTES = 16 * 1024


class CapabilityError(RuntimeError):
    """The requested shaping backend is not available here."""


class _Direction:
    def __init__(self):
        self.free_at = 0.0
        self.deliver_at = 0.0


class NetemShaper:
    def __init__(self, trace: NetworkTrace, clock=time.monotonic, downlink_scale: float = 1.0):
        self.trace = trace
        self.clock = clock
        self.downlink_scale = downlink_scale
        self.t0 = clock()
        self._up = _Direction()
        self._down = _Direction()

    def restart(self) -> None:
        self.t0 = self.clock()
        self._up = _Direction()
        self._down = _Direction()

    def trace_ms(self, t: float) -> float:
        return (t - self.t0) * 1000.0

    def current(self):
        return self.trace.at(self.trace_ms(self.clock()))

    def _reserve(self, d: _Direction, nbytes: int, scale: float) -> float:
        """Book ``nbytes`` on the FIFO; return when serialization ends (inf if never)."""
        if math.isinf(d.free_at):
            return math.inf
        tm = self.trace_ms(max(self.clock(), d.free_at))  # position on the trace, ms
        remaining = nbytes
        while remaining > 0:
            sample = self.trace.at(tm)
            rate = sample.bandwidth_mbps * scale * 1e3 / 8  # bytes per ms
            nxt = self.trace.next_change(tm)
            if rate <= 0:
                if nxt is None:
                    d.free_at = math.inf
                    return math.inf
                tm = nxt  # exact, so the lookup lands in the next segment
                continue
            chunk = min(remaining, CHUNK_BYTES)
            tm += chunk / rate
            remaining -= chunk
        d.free_at = self.t0 + tm / 1000.0
        return d.free_at

    def _schedule(self, d: _Direction, ser_end: float, deliver) -> float:
        owd = self.trace.at(self.trace_ms(ser_end)).rtt_ms / 2000.0
        at = max(d.deliver_at, ser_end + owd)
        d.deliver_at = at
        loop = asyncio.get_running_loop()
        loop.call_at(loop.time() + max(0.0, at - self.clock()), deliver)
        return at

    async def send(self, nbytes: int, deliver) -> float:
        """Occupy the uplink for ``nbytes``; ``deliver()`` runs after propagation.

        Returns once serialization has finished, which is when the next bytes
        may follow.
        """
        end = self._reserve(self._up, nbytes, 1.0)
        if math.isinf(end):
            await asyncio.Event().wait()  # permanent outage; cancelled on close
        await asyncio.sleep(max(0.0, end - self.clock()))
        self._schedule(self._up, end, deliver)
        return end

    def receive(self, nbytes: int, deliver) -> None:
        """Schedule ``deliver()`` once ``nbytes`` have crossed the downlink."""
        end = self._reserve(self._down, nbytes, self.downlink_scale)
        if math.isinf(end):
            return  # dropped by a permanent outage
        loop = asyncio.get_running_loop()
        # re-check the outage at serialization end, then add propagation
        loop.call_at(
            loop.time() + max(0.0, end - self.clock()),
            lambda: self._schedule(self._down, end, deliver),
        )


def netem_shape(profile: NetworkTrace, backend: str = "inprocess", **kwargs) -> NetemShaper:
    """Return a shaper that replays ``profile`` at the client's transport boundary."""
    if backend != "inprocess":
        raise CapabilityError(
            f"shaping backend {backend!r} is unavailable; only 'inprocess' is supported"
        )
    return NetemShaper(profile, **kwargs)
