"""Star-topology transport: one central solve node, many local law clients.

Frame layout (all integers big-endian):

    offset  size  field
    0       2     magic  b"ET"
    2       1     version (1)
    3       1     kind: 0x01 request, 0x11..0x14 reply A1..A4, 0x7f error
    4       2     node_id
    6       4     payload_len
    10      ...   payload

Request payload: the predicted state as n float64 values (the uplink is
never quantized; only downlink encodings are under study).  Reply payload:
the wire encoding from ``protocol``.  Error payload: one code byte plus a
UTF-8 message.  The 10-byte header is framing overhead, accounted separately
from semantic payload bits.

The central node is stateless per request -- each solve depends only on the
received state -- so concurrent requests from distinct nodes are served
independently.  A loopback transport calls the central node in-process
through the identical byte path, making simulation runs deterministic and
byte-for-byte comparable with socket runs.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from . import protocol
from .errors import (
    CentralInfeasible,
    DegenerateActiveSet,
    FramingError,
    Infeasible,
    RankDeficient,
    TransportError,
    TransportTimeout,
)
from .problem import CondensedQp
from .qp import solve
from .region import build_region

__all__ = [
    "Frame", "EventRequest", "CentralNode", "LoopbackTransport",
    "SocketTransport", "CentralServer", "NodeClient",
    "KIND_REQUEST", "KIND_ERROR", "REPLY_KINDS", "HEADER_LEN",
]

MAGIC = b"ET"
VERSION = 1
HEADER_LEN = 10
KIND_REQUEST = 0x01
REPLY_KINDS = {"A1": 0x11, "A2": 0x12, "A3": 0x13, "A4": 0x14}
KIND_BY_CODE = {v: k for k, v in REPLY_KINDS.items()}
KIND_ERROR = 0x7F

ERR_INFEASIBLE = 1
ERR_MALFORMED = 2
ERR_DEGENERATE = 3
ERR_INTERNAL = 4


@dataclass(frozen=True)
class Frame:
    kind: int
    node_id: int
    payload: bytes

    def encode(self) -> bytes:
        return (
            MAGIC
            + struct.pack(">BBH I", VERSION, self.kind, self.node_id, len(self.payload))
            + self.payload
        )

    @classmethod
    def parse(cls, data: bytes) -> "Frame":
        if len(data) < HEADER_LEN:
            raise FramingError(f"frame shorter than header: {len(data)} bytes")
        if data[:2] != MAGIC:
            raise FramingError(f"bad magic {data[:2]!r}")
        version, kind, node_id, plen = struct.unpack(">BBHI", data[2:HEADER_LEN])
        if version != VERSION:
            raise FramingError(f"unsupported version {version}")
        if kind not in (KIND_REQUEST, KIND_ERROR, *REPLY_KINDS.values()):
            raise FramingError(f"unknown frame kind {kind:#x}")
        if len(data) != HEADER_LEN + plen:
            raise FramingError(f"payload length {plen} does not match frame size {len(data)}")
        return cls(kind=kind, node_id=node_id, payload=data[HEADER_LEN:])


@dataclass(frozen=True)
class EventRequest:
    """One uplink message: which node asks, and its predicted state."""

    node_id: int
    x_next: np.ndarray

    def to_frame(self) -> Frame:
        x = np.asarray(self.x_next, dtype=float).reshape(-1)
        return Frame(KIND_REQUEST, self.node_id, struct.pack(f">{x.size}d", *x))

    @classmethod
    def from_frame(cls, frame: Frame, n: int) -> "EventRequest":
        if frame.kind != KIND_REQUEST:
            raise FramingError(f"not a request frame: kind {frame.kind:#x}")
        if len(frame.payload) != 8 * n:
            raise FramingError(
                f"request payload must carry {n} float64 values, got {len(frame.payload)} bytes"
            )
        x = np.array(struct.unpack(f">{n}d", frame.payload))
        return cls(node_id=frame.node_id, x_next=x)


@dataclass
class _NodeEntry:
    qp: CondensedQp
    variant: str
    precision: str = "half"
    eps_active: float = 1e-7
    events: list[int] = field(default_factory=list)  # q_active per served event


class CentralNode:
    """Problem registry plus the solve-and-encode service."""

    def __init__(self):
        self._nodes: dict[int, _NodeEntry] = {}
        self._lock = threading.Lock()

    def register(self, node_id: int, qp: CondensedQp, variant: str,
                 precision: str = "half") -> None:
        if variant not in REPLY_KINDS:
            raise ValueError(f"variant must be one of {tuple(REPLY_KINDS)}")
        if precision not in ("half", "double"):
            raise ValueError("precision must be 'half' or 'double'")
        with self._lock:
            self._nodes[node_id] = _NodeEntry(qp=qp, variant=variant, precision=precision)

    def events_served(self, node_id: int) -> list[int]:
        return list(self._nodes[node_id].events)

    def handle_frame(self, data: bytes) -> bytes:
        """Full byte-level request handler; never raises on a bad request."""
        try:
            frame = Frame.parse(data)
            entry = self._nodes.get(frame.node_id)
            if entry is None:
                return Frame(KIND_ERROR, frame.node_id,
                             bytes([ERR_MALFORMED]) + b"unknown node id").encode()
            request = EventRequest.from_frame(frame, entry.qp.n)
        except FramingError as exc:
            return Frame(KIND_ERROR, 0, bytes([ERR_MALFORMED]) + str(exc).encode()).encode()
        try:
            message, q_active = self._serve_request(entry, request.x_next)
        except Infeasible as exc:
            return Frame(KIND_ERROR, frame.node_id,
                         bytes([ERR_INFEASIBLE]) + str(exc).encode()).encode()
        except (DegenerateActiveSet, RankDeficient) as exc:
            return Frame(KIND_ERROR, frame.node_id,
                         bytes([ERR_DEGENERATE]) + str(exc).encode()).encode()
        except Exception as exc:  # per-request failures never kill the server
            return Frame(KIND_ERROR, frame.node_id,
                         bytes([ERR_INTERNAL]) + str(exc).encode()).encode()
        entry.events.append(q_active)
        return Frame(REPLY_KINDS[entry.variant], frame.node_id, message.payload).encode()

    def _serve_request(self, entry: _NodeEntry, x_next: np.ndarray):
        sol = solve(entry.qp, x_next, eps_active=entry.eps_active)
        variant, precision = entry.variant, entry.precision
        if variant == "A1":
            msg = protocol.encode_a1(sol.active)
        elif variant == "A2":
            gram_inv = protocol.gram_inverse(entry.qp, sol.active)
            msg = protocol.encode_a2(sol.active, gram_inv, precision)
        elif variant == "A3":
            msg = protocol.encode_a3(sol.u_star, precision)
        else:
            region = build_region(entry.qp, sol.active, backend="lu-pivoted")
            msg = protocol.encode_a4(region, precision)
        return msg, len(sol.active)


class LoopbackTransport:
    """In-process transport: frames pass through the real byte codec."""

    def __init__(self, central: CentralNode):
        self.central = central
        self.requests_sent = 0
        self.replies_received = 0

    def roundtrip(self, frame_bytes: bytes) -> bytes:
        self.requests_sent += 1
        reply = self.central.handle_frame(frame_bytes)
        self.replies_received += 1
        return reply

    def close(self) -> None:
        pass


class SocketTransport:
    """Persistent TCP stream connection to a central server."""

    def __init__(self, address: tuple[str, int], timeout: float = 1.0):
        self.address = address
        self.timeout = timeout
        self.requests_sent = 0
        self.replies_received = 0
        self._sock: socket.socket | None = None

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
            except OSError as exc:
                raise TransportError(f"cannot connect to {self.address}: {exc}") from exc
        return self._sock

    def roundtrip(self, frame_bytes: bytes) -> bytes:
        sock = self._connect()
        try:
            sock.sendall(frame_bytes)
            self.requests_sent += 1
            reply = _recv_frame(sock)
            self.replies_received += 1
            return reply
        except socket.timeout as exc:
            self.close()
            raise TransportTimeout(f"no reply within {self.timeout}s") from exc
        except OSError as exc:
            self.close()
            raise TransportError(str(exc)) from exc

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    buf = b""
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf += chunk
    return buf


def _recv_frame(sock: socket.socket) -> bytes:
    header = _recv_exact(sock, HEADER_LEN)
    if header[:2] != MAGIC:
        raise FramingError(f"bad magic {header[:2]!r}")
    plen = struct.unpack(">I", header[6:10])[0]
    return header + _recv_exact(sock, plen)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        central: CentralNode = self.server.central  # type: ignore[attr-defined]
        sock = self.request
        while True:
            try:
                frame_bytes = _recv_frame(sock)
            except (TransportError, FramingError):
                return
            self.server.frames_received += 1  # type: ignore[attr-defined]
            reply = central.handle_frame(frame_bytes)
            try:
                sock.sendall(reply)
            except OSError:
                return
            self.server.frames_sent += 1  # type: ignore[attr-defined]


class CentralServer(socketserver.ThreadingTCPServer):
    """Threaded stream server wrapping a CentralNode; one thread per client."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], central: CentralNode):
        super().__init__(address, _Handler)
        self.central = central
        self.frames_received = 0
        self.frames_sent = 0

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


class NodeClient:
    """Local-node side: sends the predicted state, decodes the reply."""

    def __init__(self, transport, node_id: int, dims: tuple[int, int, int, int],
                 variant: str, precision: str = "half"):
        self.transport = transport
        self.node_id = node_id
        self.dims = dims
        self.variant = variant
        self.precision = precision

    def request_law(self, x_next: np.ndarray):
        """One event round-trip; returns (decoded, wire_message).

        The decoded object depends on the variant: A1 -> ActiveSet;
        A2 -> (ActiveSet, gram inverse); A3 -> input sequence array;
        A4 -> Region.
        """
        request = EventRequest(self.node_id, x_next).to_frame().encode()
        reply = Frame.parse(self.transport.roundtrip(request))
        if reply.kind == KIND_ERROR:
            code = reply.payload[0] if reply.payload else ERR_INTERNAL
            text = reply.payload[1:].decode("utf-8", "replace")
            if code == ERR_INFEASIBLE:
                raise CentralInfeasible(text)
            if code == ERR_DEGENERATE:
                raise DegenerateActiveSet(text)
            raise FramingError(f"server error {code}: {text}")
        variant = KIND_BY_CODE.get(reply.kind)
        if variant != self.variant:
            raise FramingError(
                f"expected {self.variant} reply, got kind {reply.kind:#x}"
            )
        msg = protocol.message_from_payload(
            variant, reply.payload, self.dims[3], self.precision
        )
        decoded = protocol.decode(msg, self.dims, self.precision)
        return decoded, msg
