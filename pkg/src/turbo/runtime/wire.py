"""Binary envelope carried over each lane's stream.

Header, all big-endian::

    msg_type:u8  service_id:u16  frame_id:u64  config_id:u16
    deadline_unix_micros:u64  payload_len:u32

followed by ``payload_len`` payload bytes. In responses the deadline field
carries the server's completion time instead; nothing interprets it.
"""

from __future__ import annotations

import asyncio
import enum
import struct
from dataclasses import dataclass

from ..profiles import ProfileSet

HEADER = struct.Struct("!BHQHQI")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 64 * 1024 * 1024


class MsgType(enum.IntEnum):
    REQUEST = 1
    RESPONSE = 2
    PROBE = 3
    PROBE_ACK = 4
    ERROR = 0xFF


class FramingError(Exception):
    """The byte stream does not contain a valid envelope."""


@dataclass(frozen=True)
class OffloadEnvelope:
    msg_type: MsgType
    service_id: int
    frame_id: int
    config_id: int
    deadline_unix_micros: int
    payload: bytes = b""

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def header(self) -> bytes:
        return HEADER.pack(
            self.msg_type, self.service_id, self.frame_id, self.config_id,
            self.deadline_unix_micros, len(self.payload),
        )

    def encode(self) -> bytes:
        return self.header() + bytes(self.payload)


def parse_header(raw: bytes) -> tuple[MsgType, int, int, int, int, int]:
    if len(raw) != HEADER_SIZE:
        raise FramingError(f"header must be {HEADER_SIZE} bytes, got {len(raw)}")
    mtype, sid, fid, cid, deadline, plen = HEADER.unpack(raw)
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise FramingError(f"unknown msg_type {mtype:#x}") from None
    if plen > MAX_PAYLOAD:
        raise FramingError(f"payload_len {plen} exceeds {MAX_PAYLOAD}")
    return mtype, sid, fid, cid, deadline, plen


def decode(buf: bytes) -> OffloadEnvelope:
    mtype, sid, fid, cid, deadline, plen = parse_header(buf[:HEADER_SIZE])
    payload = buf[HEADER_SIZE:]
    if len(payload) != plen:
        raise FramingError(f"payload_len {plen} but {len(payload)} bytes follow")
    return OffloadEnvelope(mtype, sid, fid, cid, deadline, bytes(payload))


async def read_envelope(reader: asyncio.StreamReader) -> OffloadEnvelope | None:
    """Next envelope, or None on a clean end of stream between envelopes."""
    try:
        raw = await reader.readexactly(HEADER_SIZE)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise FramingError("stream ended inside a header") from exc
    mtype, sid, fid, cid, deadline, plen = parse_header(raw)
    try:
        payload = await reader.readexactly(plen) if plen else b""
    except asyncio.IncompleteReadError as exc:
        raise FramingError("stream ended inside a payload") from exc
    return OffloadEnvelope(mtype, sid, fid, cid, deadline, payload)


class WireIds:
    """Numeric wire ids for services and configs: their position in the profile."""

    def __init__(self, profiles: ProfileSet):
        self.service_ids = list(profiles.service_ids)
        self.config_ids = list(profiles.configs)
        if len(self.service_ids) > 0xFFFF or len(self.config_ids) > 0xFFFF:
            raise ValueError("too many services or configs for 16-bit wire ids")
        self._svc = {s: i for i, s in enumerate(self.service_ids)}
        self._cfg = {c: i for i, c in enumerate(self.config_ids)}

    def service_num(self, service_id: str) -> int:
        return self._svc[service_id]

    def config_num(self, config_id: str) -> int:
        return self._cfg[config_id]

    def config_name(self, num: int) -> str | None:
        return self.config_ids[num] if 0 <= num < len(self.config_ids) else None
