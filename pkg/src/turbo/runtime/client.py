"""On-vehicle side: per-service lanes, link monitoring, periodic reallocation.

Every frame runs the on-vehicle model. If the lane currently holds a cloud
choice, the frame is also shipped through the lane's pacer. Whichever
result is available by the SLO deadline wins, and remote wins ties. Lanes
each own a separate connection, so a backlog on one never blocks another.
"""

from __future__ import annotations

import asyncio
import csv
import gc
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..allocator import Allocation, AllocationProblem, realloc_decision
from ..profiles import ProfileSet, ServiceSpec, exec_time_ms
from ..utility import build_curves
from .monitor import LinkMonitor
from .netem import NetemShaper
from .pacing import TokenBucket
from .wire import HEADER_SIZE, FramingError, MsgType, OffloadEnvelope, WireIds, read_envelope

log = logging.getLogger(__name__)

LOG_HEADER = (
    "frame_id", "service_id", "t_capture", "t_serialized", "t_queued",
    "t_sent", "t_server_done", "t_received", "used_remote",
)
PROBE_BYTES = 128 * 1024
BURST_FRACTION = 0.1  # bucket depth as a share of one second's allowance


def _mbit_to_bytes(mbit: float) -> int:
    return int(round(mbit * 1e6 / 8))


@dataclass
class FrameResult:
    service_id: str
    frame_id: int
    used_remote: bool
    config_id: str
    result: object = None
    t_capture: float = 0.0
    t_serialized: float | None = None
    t_queued: float | None = None
    t_sent: float | None = None
    t_server_done: float | None = None
    t_received: float | None = None
    t_result: float = 0.0

    def log_row(self, t0: float = 0.0) -> list[str]:
        def ms(t):
            return "" if t is None else f"{(t - t0) * 1000:.3f}"

        return [
            str(self.frame_id), self.service_id, ms(self.t_capture), ms(self.t_serialized),
            ms(self.t_queued), ms(self.t_sent), ms(self.t_server_done), ms(self.t_received),
            str(int(self.used_remote)),
        ]


@dataclass
class _Pending:
    future: asyncio.Future
    deadline: float
    nbytes: int
    result: FrameResult


@dataclass
class LaneStats:
    remote_used: int = 0
    local_used: int = 0
    stale_responses: int = 0
    skipped_sends: int = 0
    send_log: list = field(default_factory=list)  # (t, nbytes) per paced chunk


class ServiceLane:
    def __init__(self, client: OffloadClient, service: ServiceSpec):
        self.client = client
        self.service = service
        self.service_num = client.ids.service_num(service.service_id)
        self.choice: str | None = None
        self.rate_mbps = 0.0
        self.pacer = TokenBucket(0.0, 1.0, clock=client.clock)
        self.in_flight: dict[int, _Pending] = {}
        self.stats = LaneStats()
        self.connected = False
        self._queue: asyncio.Queue = asyncio.Queue()
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._tasks: list[asyncio.Task] = []
        self._last_frame_id = -1
        self._unsent = 0  # bytes queued on this lane but not yet paced out

    @property
    def local_result_latency_ms(self) -> float:
        return exec_time_ms(self.client.profiles.configs[self.service.local_config])

    def apply(self, config_id: str | None, rate_mbps: float) -> None:
        self.choice = config_id
        self.rate_mbps = rate_mbps if config_id else 0.0
        rate = self.rate_mbps * 1e6 / 8
        frame = _mbit_to_bytes(self.client.profiles.configs[config_id].input_size_mbit) if config_id else 1
        burst = max(1.0, min(frame, BURST_FRACTION * rate))
        self.pacer.set_rate(rate, burst)

    async def connect(self) -> None:
        self._reader, self._writer = await asyncio.open_connection(self.client.host, self.client.port)
        self._queue = asyncio.Queue()  # frames queued before a disconnect are already settled
        self._unsent = 0
        self.connected = True
        self._tasks = [
            asyncio.create_task(self._send_loop()),
            asyncio.create_task(self._recv_loop()),
        ]

    def _disconnect(self, why: str) -> None:
        if not self.connected:
            return
        log.warning("lane %s disconnected: %s", self.service.service_id, why)
        self.connected = False
        for p in self.in_flight.values():
            if not p.future.done():
                p.future.set_result(None)
        self.in_flight.clear()
        if self._writer is not None:
            self._writer.close()
        self.client._spawn(self._reconnect())

    async def _reconnect(self) -> None:
        for t in self._tasks:
            if t is not asyncio.current_task():
                t.cancel()
        while not self.client.closed:
            await asyncio.sleep(self.client.reconnect_s)
            try:
                await self.connect()
                log.info("lane %s reconnected", self.service.service_id)
                return
            except OSError:
                continue

    def _write(self, data: bytes) -> None:
        if self.connected and self._writer is not None and not self._writer.is_closing():
            self._writer.write(data)

    async def _send_loop(self) -> None:
        clock = self.client.clock
        shaper = self.client.shaper
        while True:
            frame_id, head, body = await self._queue.get()
            pending = self.in_flight.get(frame_id)
            if pending is None or pending.future.done():
                self._unsent -= len(head) + len(body)
                continue
            if not self._feasible(pending.nbytes, pending.deadline, queued=0):
                self._unsent -= pending.nbytes
                self._skip(pending)
                continue
            chunk = max(1, int(self.pacer.burst))
            pieces = [head] + [body[off: off + chunk] for off in range(0, len(body), chunk)]
            for piece in pieces:
                await self.pacer.acquire(len(piece))
                self._unsent -= len(piece)
                self.stats.send_log.append((clock(), len(piece)))
                if shaper is None:
                    self._write(piece)
                else:
                    await shaper.send(len(piece), lambda p=piece: self._write(p))
            pending.result.t_sent = clock()

    def _feasible(self, nbytes: int, deadline: float, queued: int) -> bool:
        """Could ``nbytes`` queued behind ``queued`` others still return before ``deadline``?"""
        rate = self.rate_mbps * 1e6 / 8
        if rate <= 0 or self.choice is None:
            return False
        wait = max(0.0, queued + nbytes - self.pacer.tokens) / rate
        rest = (self.client.monitor.smoothed_rtt_ms or 0.0) + exec_time_ms(self.client.profiles.configs[self.choice])
        return self.client.clock() + wait + rest / 1000.0 < deadline

    def _skip(self, pending: _Pending) -> None:
        # the frame falls back to its local result as soon as that is ready
        self.stats.skipped_sends += 1
        if not pending.future.done():
            pending.future.set_result(None)

    async def _recv_loop(self) -> None:
        try:
            while True:
                env = await read_envelope(self._reader)
                if env is None:
                    raise ConnectionError("server closed the stream")
                size = len(env.payload) + HEADER_SIZE
                if self.client.shaper is None:
                    self._on_response(env)
                else:
                    self.client.shaper.receive(size, lambda e=env: self._on_response(e))
        except (ConnectionError, FramingError, OSError) as exc:
            self._disconnect(str(exc))
        except asyncio.CancelledError:
            raise

    def _on_response(self, env: OffloadEnvelope) -> None:
        pending = self.in_flight.get(env.frame_id)
        now = self.client.clock()
        if pending is None or pending.future.done() or now > pending.deadline:
            self.stats.stale_responses += 1
            return
        if env.msg_type is MsgType.RESPONSE:
            r = pending.result
            r.t_received = now
            r.t_server_done = env.deadline_unix_micros / 1e6 - self.client.wall_offset
            self.client.monitor.on_delivered(pending.nbytes)
            pending.future.set_result(env.payload)
        else:
            pending.future.set_result(None)

    async def tick(self, frame_id: int, payload: bytes | None = None, capture: float | None = None) -> FrameResult:
        """Process one frame; resolves no later than capture + SLO (plus scheduling jitter)."""
        client = self.client
        clock = client.clock
        if frame_id <= self._last_frame_id:
            raise ValueError(f"frame ids must increase per lane ({frame_id} after {self._last_frame_id})")
        self._last_frame_id = frame_id
        t_capture = clock() if capture is None else capture
        deadline = t_capture + self.service.slo_ms / 1000.0
        local = asyncio.create_task(client.run_local(self.service, payload))
        result = FrameResult(self.service.service_id, frame_id, False, self.service.local_config, t_capture=t_capture)
        choice = self.choice
        fut = None
        if not self.connected:
            choice = None
        if choice is not None:
            cfg = client.profiles.configs[choice]
            size = _mbit_to_bytes(cfg.input_size_mbit)
            if not self._feasible(size + HEADER_SIZE, deadline, self._unsent):
                # still behind earlier frames: do not send, use the local result
                self.stats.skipped_sends += 1
                choice = None
        if choice is not None:
            body = client.frame_body(payload, size)
            env = OffloadEnvelope(
                MsgType.REQUEST, self.service_num, frame_id, client.ids.config_num(choice),
                int((time.time() + (deadline - clock())) * 1e6), body,
            )
            head = env.header()  # the payload goes out as-is, never copied
            result.t_serialized = clock()
            fut = asyncio.get_running_loop().create_future()
            self.in_flight[frame_id] = _Pending(fut, deadline, len(head) + len(body), result)
            self._unsent += len(head) + len(body)
            self._queue.put_nowait((frame_id, head, body))
            result.t_queued = clock()
        remote_payload = None
        if fut is not None:
            try:
                remote_payload = await asyncio.wait_for(asyncio.shield(fut), max(0.0, deadline - clock()))
            except asyncio.TimeoutError:
                remote_payload = None
            self.in_flight.pop(frame_id, None)
            if not fut.done():
                fut.cancel()
        if remote_payload is not None:
            local.cancel()
            result.used_remote = True
            result.config_id = choice
            result.result = remote_payload
            self.stats.remote_used += 1
        else:
            result.result = await local
            self.stats.local_used += 1
        result.t_result = clock()
        client.record(result)
        return result

    async def close(self) -> None:
        for t in self._tasks:
            t.cancel()
        await _close_writer(self._writer)


class OffloadClient:
    """Owns the lanes, the link monitor and the reallocation loop.

    ``local_executor`` replaces the simulated on-vehicle model: an async
    callable taking ``(service, payload)``. ``static_allocation`` pins the
    allocation and disables the periodic solver. ``freeze_gc`` moves every
    object alive at start out of the cyclic collector, which keeps full
    collections from stalling the loop near a deadline.
    """

    def __init__(
        self,
        profiles: ProfileSet,
        host: str,
        port: int,
        services=None,
        *,
        shaper: NetemShaper | None = None,
        realloc_ms: float = 500.0,
        hysteresis: float = 0.0,
        headroom: float = 0.9,
        slack_margin_ms: float = 10.0,
        probe_bytes: int = PROBE_BYTES,
        local_executor=None,
        static_allocation: Allocation | None = None,
        clock=time.monotonic,
        freeze_gc: bool = True,
    ):
        if services is not None:
            profiles = profiles.subset(services)
        self.profiles = profiles
        self.ids = WireIds(profiles)
        self.host, self.port = host, port
        self.shaper = shaper
        self.realloc_ms = realloc_ms
        self.hysteresis = hysteresis
        self.headroom = headroom
        self.slack_margin_ms = slack_margin_ms
        self.probe_bytes = probe_bytes
        self.local_executor = local_executor
        self.static_allocation = static_allocation
        self.clock = clock
        self.freeze_gc = freeze_gc
        self.wall_offset = time.time() - clock()
        self.monitor = LinkMonitor(clock=clock)
        self.lanes = {s.service_id: ServiceLane(self, s) for s in profiles.services}
        self.allocation: Allocation | None = None
        self.solve_ms: list[float] = []
        self.results: list[FrameResult] = []
        self.reconnect_s = 0.5
        self.closed = False
        self.t0 = clock()
        self._tasks: set[asyncio.Task] = set()
        self._probe_waiters: dict[int, asyncio.Future] = {}
        self._probe_seq = 0
        self._zeros: dict[int, memoryview] = {}
        self._probe_writer: asyncio.StreamWriter | None = None

    def _spawn(self, coro) -> asyncio.Task:
        task = asyncio.create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        return task

    async def start(self) -> None:
        if self.freeze_gc:
            gc.collect()
            gc.freeze()
        self.t0 = self.clock()
        if self.shaper is not None:
            self.shaper.restart()
        for lane in self.lanes.values():
            try:
                await lane.connect()
            except OSError as exc:
                log.warning("lane %s starts local-only: %s", lane.service.service_id, exc)
                self._spawn(lane._reconnect())
        if self.static_allocation is not None:
            self.publish(self.static_allocation)
        else:
            self.publish(None)
            self._spawn(self._probe_loop())
            self._spawn(self.monitor_and_realloc())

    def publish(self, allocation: Allocation | None) -> None:
        """Swap in a new allocation and retune every lane's pacer."""
        self.allocation = allocation
        for sid, lane in self.lanes.items():
            if allocation is None:
                lane.apply(None, 0.0)
            else:
                lane.apply(allocation.choices.get(sid), allocation.bandwidth_mbps.get(sid, 0.0))

    def solve_once(self) -> Allocation:
        est = self.monitor.estimate()
        started = time.perf_counter()
        # plan against a slightly longer RTT so paced uploads land before the deadline
        curves = build_curves(self.profiles, est.rtt_ms + self.slack_margin_ms)
        problem = AllocationProblem(tuple(curves), est.bandwidth_mbps * self.headroom)
        alloc = realloc_decision(self.allocation, problem, self.hysteresis)
        self.solve_ms.append((time.perf_counter() - started) * 1000)
        return alloc

    async def monitor_and_realloc(self) -> None:
        while not self.closed:
            await asyncio.sleep(self.realloc_ms / 1000.0)
            if self.monitor.smoothed_rtt_ms is None:
                continue
            try:
                self.publish(self.solve_once())
            except Exception:  # keep the previous allocation
                log.exception("allocation failed; keeping the previous one")

    async def _probe_conn(self):
        reader, writer = await asyncio.open_connection(self.host, self.port)
        self._probe_writer = writer

        async def recv():
            while True:
                env = await read_envelope(reader)
                if env is None:
                    return
                fut = self._probe_waiters.pop(env.frame_id, None)
                if fut is None:
                    continue
                stamp = env.deadline_unix_micros / 1e6

                def done(f=fut, stamp=stamp):
                    if not f.done():
                        f.set_result((self.clock(), stamp))

                if self.shaper is None:
                    done()
                else:
                    self.shaper.receive(len(env.payload) + HEADER_SIZE, done)

        return writer, self._spawn(recv())

    async def _send_probe(self, writer, nbytes: int) -> asyncio.Future:
        self._probe_seq += 1
        seq = self._probe_seq
        fut = asyncio.get_running_loop().create_future()
        self._probe_waiters[seq] = fut
        data = OffloadEnvelope(MsgType.PROBE, 0, seq, 0, 0, bytes(nbytes)).encode()
        if self.shaper is None:
            writer.write(data)
        else:
            self._spawn(self.shaper.send(len(data), lambda: writer.is_closing() or writer.write(data)))
        return fut

    async def _probe_loop(self) -> None:
        """Pairs of an empty and a padded probe.

        RTT comes from the empty probe. Capacity comes from the gap between
        the server's receive stamps, which are immune to downlink queueing.
        """
        writer = None
        while not self.closed:
            try:
                if writer is None or writer.is_closing():
                    writer, _ = await self._probe_conn()
                sent = self.clock()
                small = await self._send_probe(writer, 0)
                big = await self._send_probe(writer, self.probe_bytes)
                timeout = self.realloc_ms / 1000.0
                done, _ = await asyncio.wait({small, big}, timeout=timeout)
                if small in done:
                    self.monitor.on_rtt_sample((small.result()[0] - sent) * 1000)
                if small in done and big in done:
                    gap = big.result()[1] - small.result()[1]
                    if gap > 0:
                        self.monitor.on_capacity_sample(self.probe_bytes * 8 / gap / 1e6)
                for f in (small, big):
                    if not f.done():
                        f.cancel()
                rest = timeout - (self.clock() - sent)
                if rest > 0:
                    await asyncio.sleep(rest)
            except OSError as exc:
                log.warning("probe connection failed: %s", exc)
                writer = None
                await asyncio.sleep(self.reconnect_s)

    def frame_body(self, payload, size: int) -> memoryview:
        """``size`` bytes of frame payload; zeros when no real frame is supplied."""
        if payload is not None and len(payload) >= size:
            return memoryview(payload)[:size]
        zeros = self._zeros.get(size)
        if zeros is None:
            zeros = self._zeros[size] = memoryview(bytes(size))
        return zeros

    async def run_local(self, service: ServiceSpec, payload):
        if self.local_executor is not None:
            return await self.local_executor(service, payload)
        await asyncio.sleep(exec_time_ms(self.profiles.configs[service.local_config]) / 1000.0)
        return service.local_config

    async def tick(self, service_id: str, frame_id: int, payload: bytes | None = None) -> FrameResult:
        return await self.lanes[service_id].tick(frame_id, payload)

    def record(self, result: FrameResult) -> None:
        self.results.append(result)

    def write_log(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_HEADER)
            for r in sorted(self.results, key=lambda r: (r.t_capture, r.service_id)):
                w.writerow(r.log_row(self.t0))

    async def close(self) -> None:
        self.closed = True
        for t in list(self._tasks):
            t.cancel()
        for lane in self.lanes.values():
            await lane.close()
        await _close_writer(self._probe_writer)
        await asyncio.sleep(0)  # let cancelled tasks unwind


async def _close_writer(writer) -> None:
    if writer is None:
        return
    writer.close()
    try:
        await asyncio.wait_for(writer.wait_closed(), 1.0)
    except (OSError, asyncio.TimeoutError):
        pass


async def client_frame_tick(lane: ServiceLane, frame: bytes | None, allocation: Allocation | None, clock=None) -> FrameResult:
    """One frame on one lane under ``allocation`` (None keeps the lane's current one)."""
    if allocation is not None:
        sid = lane.service.service_id
        lane.apply(allocation.choices.get(sid), allocation.bandwidth_mbps.get(sid, 0.0))
    capture = clock() if clock is not None else None
    return await lane.tick(lane._last_frame_id + 1, frame, capture)


async def run_cameras(client: OffloadClient, duration_s: float, fps: float = 10.0, frames=None) -> list[FrameResult]:
    """Drive every lane at ``fps`` for ``duration_s``; ``frames`` optionally supplies payload bytes per lane."""
    period = 1.0 / fps
    loop = asyncio.get_running_loop()
    start = loop.time()
    n = int(round(duration_s * fps))
    pending = []
    for i in range(n):
        target = start + i * period
        delay = target - loop.time()
        if delay > 0:
            await asyncio.sleep(delay)
        for sid in client.lanes:
            payload = frames(sid, i) if frames is not None else None
            pending.append(asyncio.create_task(client.tick(sid, i, payload)))
    return list(await asyncio.gather(*pending))
