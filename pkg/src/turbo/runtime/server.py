"""Cloud-side worker: mock inference by timed delay and sized payload."""

from __future__ import annotations

import asyncio
import logging
import random
import time

from ..profiles import ProfileSet, exec_time_ms
from .wire import FramingError, MsgType, OffloadEnvelope, WireIds, read_envelope

log = logging.getLogger(__name__)


class OffloadServer:
    """Serves every connection independently; requests within a connection run concurrently.

    ``executor`` may replace the mock: an async callable taking
    ``(config_id, payload)`` and returning result bytes.
    """

    def __init__(self, profiles: ProfileSet, executor=None, seed: int = 0):
        self.profiles = profiles
        self.ids = WireIds(profiles)
        self.executor = executor
        self._rng = random.Random(seed)
        self._outputs: dict[str, bytes] = {}
        self.served = 0
        self.dropped_connections = 0
        self._server: asyncio.base_events.Server | None = None
        self._tasks: set[asyncio.Task] = set()

    def _output_for(self, config_id: str) -> bytes:
        if config_id not in self._outputs:
            n = int(round(self.profiles.configs[config_id].output_size_kbit * 1000 / 8))
            self._outputs[config_id] = self._rng.randbytes(n)
        return self._outputs[config_id]

    async def _infer(self, env: OffloadEnvelope, writer: asyncio.StreamWriter) -> None:
        config_id = self.ids.config_name(env.config_id)
        if config_id is None or not self.profiles.configs[config_id].is_cloud:
            reply = OffloadEnvelope(MsgType.ERROR, env.service_id, env.frame_id, env.config_id, 0)
        else:
            if self.executor is not None:
                payload = await self.executor(config_id, env.payload)
            else:
                await asyncio.sleep(exec_time_ms(self.profiles.configs[config_id]) / 1000.0)
                payload = self._output_for(config_id)
            done_us = int(time.time() * 1e6)
            reply = OffloadEnvelope(
                MsgType.RESPONSE, env.service_id, env.frame_id, env.config_id, done_us, payload
            )
        if not writer.is_closing():
            writer.write(reply.encode())
            self.served += 1

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        try:
            while True:
                env = await read_envelope(reader)
                if env is None:
                    break
                if env.msg_type is MsgType.REQUEST:
                    task = asyncio.create_task(self._infer(env, writer))
                    self._tasks.add(task)
                    task.add_done_callback(self._tasks.discard)
                elif env.msg_type is MsgType.PROBE:
                    ack = OffloadEnvelope(
                        MsgType.PROBE_ACK, env.service_id, env.frame_id, 0, int(time.time() * 1e6)
                    )
                    writer.write(ack.encode())
                else:
                    raise FramingError(f"unexpected {env.msg_type.name} from client")
                await writer.drain()
        except FramingError as exc:
            self.dropped_connections += 1
            log.warning("dropping connection from %s: %s", peer, exc)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    async def start(self, host: str = "127.0.0.1", port: int = 0):
        self._server = await asyncio.start_server(self.handle, host, port)
        return self._server

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for t in list(self._tasks):
            t.cancel()


async def server_serve(host: str, port: int, profiles: ProfileSet) -> None:
    """Run a server until cancelled."""
    server = OffloadServer(profiles)
    srv = await server.start(host, port)
    log.info("serving on %s", ", ".join(str(s.getsockname()) for s in srv.sockets))
    async with srv:
        await srv.serve_forever()
