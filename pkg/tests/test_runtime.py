import asyncio
import csv
import struct

import pytest

from turbo.allocator import Allocation
from turbo.runtime.client import LOG_HEADER, OffloadClient, client_frame_tick, run_cameras
from turbo.runtime.netem import netem_shape
from turbo.runtime.pacing import max_window_bytes
from turbo.runtime.server import OffloadServer
from turbo.runtime.wire import HEADER_SIZE, MsgType, OffloadEnvelope, WireIds, read_envelope
from turbo.traces import NetSample, NetworkTrace

JITTER_S = 0.005


def static(choices: dict, rates: dict) -> Allocation:
    return Allocation(choices, {s: rates.get(s, 0.0) for s in choices}, 0.0)


async def _with_server(profiles, body, executor=None):
    server = OffloadServer(profiles, executor=executor)
    await server.start()
    try:
        return await body(server)
    finally:
        await server.close()


def on_time(client, results):
    return all(
        r.t_result - r.t_capture <= client.lanes[r.service_id].service.slo_ms / 1000 + JITTER_S for r in results
    )


# -- server ------------------------------------------------------------------


async def _request(port, env: OffloadEnvelope):
    reader, writer = await asyncio.open_connection("127.0.0.1", port)
    loop = asyncio.get_running_loop()
    t0 = loop.time()
    writer.write(env.encode())
    reply = await read_envelope(reader)
    took = loop.time() - t0
    writer.close()
    return reply, took


def test_server_mock_inference(profiles):
    ids = WireIds(profiles)

    async def body(server):
        ed4 = OffloadEnvelope(MsgType.REQUEST, 0, 7, ids.config_num("ed4_dnn_jpeg90"), 0, b"x" * 100)
        reply, took = await _request(server.port, ed4)
        assert reply.msg_type is MsgType.RESPONSE and reply.frame_id == 7
        assert len(reply.payload) == round(7.9 * 1000 / 8)
        assert took >= 0.072  # 25 + 11.1 + 6 + 30 ms of mock compute
        mtr = OffloadEnvelope(MsgType.REQUEST, 5, 8, ids.config_num("mtr_cloud"), 0, b"")
        reply, _ = await _request(server.port, mtr)
        assert len(reply.payload) == 246 * 1000 // 8
        unknown = OffloadEnvelope(MsgType.REQUEST, 0, 9, 999, 0, b"")
        reply, _ = await _request(server.port, unknown)
        assert reply.msg_type is MsgType.ERROR and reply.payload == b""
        local = OffloadEnvelope(MsgType.REQUEST, 0, 10, ids.config_num("ed1_local"), 0, b"")
        reply, _ = await _request(server.port, local)
        assert reply.msg_type is MsgType.ERROR

    asyncio.run(_with_server(profiles, body))


def test_server_drops_malformed(profiles):
    async def body(server):
        reader, writer = await asyncio.open_connection("127.0.0.1", server.port)
        writer.write(struct.pack(">BHQHQI", 0x42, 0, 0, 0, 0, 0))
        assert await reader.read() == b""
        writer.close()
        assert server.dropped_connections == 1

    asyncio.run(_with_server(profiles, body))


def test_server_no_head_of_line_blocking(profiles):
    ids = WireIds(profiles)

    async def slow_for_one(config_id, payload):
        await asyncio.sleep(0.5 if config_id == "ed7x_vehicle_pre" else 0.01)
        return b"r"

    async def body(server):
        reader, writer = await asyncio.open_connection("127.0.0.1", server.port)
        writer.write(OffloadEnvelope(MsgType.REQUEST, 0, 1, ids.config_num("ed7x_vehicle_pre"), 0).encode())
        writer.write(OffloadEnvelope(MsgType.REQUEST, 0, 2, ids.config_num("ed2_vehicle_pre"), 0).encode())
        first = await read_envelope(reader)
        writer.close()
        return first.frame_id

    assert asyncio.run(_with_server(profiles, body, slow_for_one)) == 2


# -- client ------------------------------------------------------------------


def test_deadline_rule(profiles):
    """A response landing just inside the SLO wins; one landing after it is stale."""
    services = ["cam_front", "cam_front_left"]
    delays = {"ed4_dnn_jpeg90": 0.150 - 0.030, "ed2_dnn_jpeg90": 0.200}

    async def executor(config_id, payload):
        await asyncio.sleep(delays[config_id])
        return b"remote"

    async def body(server):
        alloc = static({"cam_front": "ed4_dnn_jpeg90", "cam_front_left": "ed2_dnn_jpeg90"},
                       {"cam_front": 500.0, "cam_front_left": 500.0})
        client = OffloadClient(profiles, "127.0.0.1", server.port, services, static_allocation=alloc)
        await client.start()
        res = [await client.tick(s, i) for i in range(3) for s in services]
        await asyncio.sleep(0.1)
        await client.close()
        return client, res

    client, res = asyncio.run(_with_server(profiles, body, executor))
    assert on_time(client, res)
    assert all(r.used_remote and r.result == b"remote" for r in res if r.service_id == "cam_front")
    assert all(not r.used_remote and r.result == "ed1_local" for r in res if r.service_id == "cam_front_left")
    assert client.lanes["cam_front_left"].stats.stale_responses == 3


def test_no_allocation_no_bytes(profiles):
    async def body(server):
        client = OffloadClient(profiles, "127.0.0.1", server.port, ["cam_front"],
                               static_allocation=static({"cam_front": None}, {}))
        await client.start()
        res = [await client.tick("cam_front", i) for i in range(3)]
        await client.close()
        return client, res

    client, res = asyncio.run(_with_server(profiles, body))
    lane = client.lanes["cam_front"]
    assert lane.stats.send_log == [] and not any(r.used_remote for r in res)
    assert all(r.t_serialized is None for r in res)


def test_frame_ids_must_increase(profiles):
    async def body(server):
        client = OffloadClient(profiles, "127.0.0.1", server.port, ["cam_front"],
                               static_allocation=static({"cam_front": None}, {}))
        await client.start()
        lane = client.lanes["cam_front"]
        first = await client_frame_tick(lane, None, None)
        second = await client_frame_tick(lane, None, None)
        with pytest.raises(ValueError):
            await lane.tick(0)
        await client.close()
        return first.frame_id, second.frame_id

    assert asyncio.run(_with_server(profiles, body)) == (0, 1)


def test_lane_isolation(profiles):
    """A lane stuck behind its own pacer does not slow the others."""
    services = ["cam_front", "cam_side_left"]

    async def body(server):
        alloc = static({"cam_front": "ed4_cloud_pre_front", "cam_side_left": "ed4_dnn_jpeg90"},
                       {"cam_front": 800.0, "cam_side_left": 200.0})
        client = OffloadClient(profiles, "127.0.0.1", server.port, services, static_allocation=alloc)
        await client.start()
        client.lanes["cam_front"].pacer.set_rate(10_000, 10_000)  # throttle far below its frames
        res = await run_cameras(client, 2.0)
        await client.close()
        return client, res

    client, res = asyncio.run(_with_server(profiles, body))
    assert on_time(client, res)
    assert not any(r.used_remote for r in res if r.service_id == "cam_front")
    other = [r for r in res if r.service_id == "cam_side_left"]
    assert sum(r.used_remote for r in other) >= len(other) - 1


def test_pacing_conformance(profiles):
    services = ["cam_front", "cam_side_left", "motion"]
    rates = {"cam_front": 60.0, "cam_side_left": 40.0, "motion": 2.0}

    async def body(server):
        alloc = static({"cam_front": "ed4_dnn_jpeg90", "cam_side_left": "ed2_dnn_jpeg75", "motion": "mtr_cloud"}, rates)
        client = OffloadClient(profiles, "127.0.0.1", server.port, services, static_allocation=alloc)
        await client.start()
        await run_cameras(client, 3.0)
        await client.close()
        return client

    client = asyncio.run(_with_server(profiles, body))
    for sid, mbps in rates.items():
        log = client.lanes[sid].stats.send_log
        assert log
        assert max_window_bytes(log) * 8 / 1e6 <= 1.1 * mbps


def test_realloc_follows_estimates(profiles):
    async def body(server):
        client = OffloadClient(profiles, "127.0.0.1", server.port, hysteresis=0.02)
        client.monitor.on_rtt_sample(20)
        client.monitor.on_capacity_sample(1.0)  # below every camera step
        low = client.solve_once()
        client.monitor.on_capacity_sample(400.0)
        high = client.solve_once()
        again = client.publish(high) or client.solve_once()
        return client, low, high, again

    client, low, high, again = asyncio.run(_with_server(profiles, body))
    assert all(low.choices[s] is None for s in profiles.service_ids if s != "motion")
    assert sum(c is not None for c in high.choices.values()) == 6
    assert again == high
    assert max(client.solve_ms) <= 25


def test_disconnect_flips_to_local_and_recovers(profiles):
    async def body(server):
        alloc = static({"cam_front": "ed4_dnn_jpeg90"}, {"cam_front": 200.0})
        client = OffloadClient(profiles, "127.0.0.1", server.port, ["cam_front"], static_allocation=alloc)
        client.reconnect_s = 0.1
        await client.start()
        lane = client.lanes["cam_front"]
        before = await client.tick("cam_front", 0)
        port = server.port
        await server.close()
        lane._writer.transport.abort()
        await asyncio.sleep(0.05)
        during = await client.tick("cam_front", 1)
        fresh = OffloadServer(profiles)
        await fresh.start(port=port)
        await asyncio.sleep(0.4)
        after = await client.tick("cam_front", 2)
        await client.close()
        await fresh.close()
        return before, during, after, lane.connected

    before, during, after, connected = asyncio.run(_with_server(profiles, body))
    assert before.used_remote and not during.used_remote and after.used_remote and connected


@pytest.mark.slow
def test_shaped_loop_with_blackout(profiles, tmp_path):
    trace = NetworkTrace([NetSample(0, 100, 40), NetSample(3000, 0, 40), NetSample(6000, 100, 40)])
    services = ["cam_front", "cam_side_left", "motion"]

    async def body(server):
        client = OffloadClient(profiles, "127.0.0.1", server.port, services, shaper=netem_shape(trace))
        await client.start()
        res = await run_cameras(client, 9.0)
        await client.close()
        return client, res

    client, res = asyncio.run(_with_server(profiles, body))
    assert len(res) == 90 * 3
    assert on_time(client, res)
    rel = [(r, r.t_capture - client.t0) for r in res]
    assert not any(r.used_remote for r, t in rel if 3.0 <= t <= 6.0 - 0.25)
    assert any(r.used_remote for r, t in rel if t < 3.0)
    assert any(r.used_remote for r, t in rel if t > 7.0)
    client.write_log(tmp_path / "frames.csv")
    rows = list(csv.reader(open(tmp_path / "frames.csv")))
    assert tuple(rows[0]) == LOG_HEADER and len(rows) == 1 + len(res)
    remote = [r for r in rows[1:] if r[-1] == "1"]
    assert remote and all(r[3] and r[6] and r[7] for r in remote)
