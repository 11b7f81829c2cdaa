"""Client/server offload runtime over asyncio streams."""

from .client import FrameResult, OffloadClient, ServiceLane, client_frame_tick, run_cameras
from .monitor import LinkMonitor
from .netem import CapabilityError, NetemShaper, netem_shape
from .pacing import TokenBucket, max_window_bytes
from .server import OffloadServer, server_serve
from .wire import HEADER_SIZE, FramingError, MsgType, OffloadEnvelope

__all__ = [
    "CapabilityError", "FrameResult", "FramingError", "HEADER_SIZE", "LinkMonitor", "MsgType",
    "NetemShaper", "OffloadClient", "OffloadEnvelope", "OffloadServer", "ServiceLane", "TokenBucket",
    "client_frame_tick", "max_window_bytes", "netem_shape", "run_cameras", "server_serve",
]
