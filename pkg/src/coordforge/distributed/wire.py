"""Binary framing for the master/worker exchange.

Every frame is little-endian::

    magic u32 (0x53434431) | msg_type u8 | epoch u32 | payload_len u64 | payload

UPDATE    worker_id u32 | vector_len u64 | delta f64[vector_len]
          | cross_term f64 | delta_sqnorm f64 | label_term f64
BROADCAST gamma f64 | vector_len u64 | shared f64[vector_len]
REGISTER  worker_id u32
SHUTDOWN  (empty)
SLICE     worker_id u32 | count u64 | coords u64[count] | weights f64[count]
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = 0x53434431
REGISTER = 1
UPDATE = 2
BROADCAST = 3
SHUTDOWN = 4
SLICE = 5
MSG_TYPES = (REGISTER, UPDATE, BROADCAST, SHUTDOWN, SLICE)

HEADER = struct.Struct("<IBIQ")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")
_SCALARS = struct.Struct("<ddd")
_F64_LE = np.dtype("<f8")
_U64_LE = np.dtype("<u8")

# refuse to allocate for absurd declared lengths
MAX_PAYLOAD = 1 << 34


class TransportError(RuntimeError):
    """A peer disconnected, timed out or could not be reached."""


class ProtocolError(TransportError):
    """A frame was malformed or arrived out of protocol order."""


class _PeerClosed(TransportError):
    def __init__(self, received: int, size: int):
        super().__init__(f"peer closed the connection {received} bytes into {size}")
        self.received = received


@dataclass(frozen=True)
class Frame:
    msg_type: int
    epoch: int
    payload: bytes


def encode_frame(msg_type: int, epoch: int, payload: bytes = b"") -> bytes:
    return HEADER.pack(MAGIC, msg_type, epoch, len(payload)) + payload


def decode_header(raw: bytes) -> tuple[int, int, int]:
    if len(raw) != HEADER.size:
        raise ProtocolError(f"short header: {len(raw)} bytes")
    magic, msg_type, epoch, length = HEADER.unpack(raw)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic 0x{magic:08x}")
    if msg_type not in MSG_TYPES:
        raise ProtocolError(f"unknown message type {msg_type}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {length} too large")
    return msg_type, epoch, length


def decode_frame(raw: bytes) -> Frame:
    msg_type, epoch, length = decode_header(raw[:HEADER.size])
    payload = raw[HEADER.size:]
    if len(payload) != length:
        raise ProtocolError(f"payload is {len(payload)} bytes, header says {length}")
    return Frame(msg_type, epoch, payload)


def _f64s(values) -> bytes:
    return np.ascontiguousarray(values, dtype=_F64_LE).tobytes()


def _vector_at(payload: bytes, offset: int, what: str) -> tuple[np.ndarray, int]:
    if len(payload) < offset + _U64.size:
        raise ProtocolError(f"{what}: truncated before vector length")
    (n,) = _U64.unpack_from(payload, offset)
    offset += _U64.size
    end = offset + 8 * n
    if n > MAX_PAYLOAD // 8 or len(payload) < end:
        raise ProtocolError(f"{what}: vector of {n} entries does not fit the payload")
    return np.frombuffer(payload, dtype=_F64_LE, count=n, offset=offset).astype(np.float64), end


def encode_update(worker_id: int, delta, cross_term: float, delta_sqnorm: float,
                  label_term: float) -> bytes:
    delta = np.asarray(delta, dtype=np.float64)
    return (_U32.pack(worker_id) + _U64.pack(len(delta)) + _f64s(delta)
            + _SCALARS.pack(cross_term, delta_sqnorm, label_term))


def decode_update(payload: bytes) -> tuple[int, np.ndarray, float, float, float]:
    if len(payload) < _U32.size:
        raise ProtocolError("UPDATE: truncated worker id")
    (worker_id,) = _U32.unpack_from(payload, 0)
    delta, end = _vector_at(payload, _U32.size, "UPDATE")
    if len(payload) != end + _SCALARS.size:
        raise ProtocolError("UPDATE: payload length does not match its vector")
    cross, sq, label = _SCALARS.unpack_from(payload, end)
    if not np.isfinite([cross, sq, label]).all() or not np.isfinite(delta).all():
        raise ProtocolError("UPDATE: non-finite values")
    if sq < 0:
        raise ProtocolError("UPDATE: negative delta norm")
    return worker_id, delta, cross, sq, label


def encode_broadcast(gamma: float, shared) -> bytes:
    shared = np.asarray(shared, dtype=np.float64)
    return _F64.pack(gamma) + _U64.pack(len(shared)) + _f64s(shared)


def decode_broadcast(payload: bytes) -> tuple[float, np.ndarray]:
    if len(payload) < _F64.size:
        raise ProtocolError("BROADCAST: truncated gamma")
    (gamma,) = _F64.unpack_from(payload, 0)
    shared, end = _vector_at(payload, _F64.size, "BROADCAST")
    if end != len(payload):
        raise ProtocolError("BROADCAST: trailing bytes")
    return gamma, shared


def encode_register(worker_id: int) -> bytes:
    return _U32.pack(worker_id)


def decode_register(payload: bytes) -> int:
    if len(payload) != _U32.size:
        raise ProtocolError("REGISTER: payload must be a single u32")
    return _U32.unpack(payload)[0]


def encode_slice(worker_id: int, coords, weights) -> bytes:
    coords = np.ascontiguousarray(coords, dtype=_U64_LE)
    return (_U32.pack(worker_id) + _U64.pack(len(coords)) + coords.tobytes()
            + _f64s(weights))


def decode_slice(payload: bytes) -> tuple[int, np.ndarray, np.ndarray]:
    if len(payload) < _U32.size + _U64.size:
        raise ProtocolError("SLICE: truncated header")
    (worker_id,) = _U32.unpack_from(payload, 0)
    (n,) = _U64.unpack_from(payload, _U32.size)
    start = _U32.size + _U64.size
    if len(payload) != start + 16 * n:
        raise ProtocolError("SLICE: payload length does not match its count")
    coords = np.frombuffer(payload, dtype=_U64_LE, count=n, offset=start).astype(np.int64)
    weights = np.frombuffer(payload, dtype=_F64_LE, count=n, offset=start + 8 * n)
    return worker_id, coords, weights.astype(np.float64)


def recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        try:
            chunk = sock.recv(min(remaining, 1 << 20))
        except socket.timeout as exc:
            raise TransportError("timed out waiting for peer") from exc
        except OSError as exc:
            raise TransportError(f"connection failed: {exc}") from exc
        if not chunk:
            raise _PeerClosed(size - remaining, size)
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Frame:
    try:
        header = recv_exact(sock, HEADER.size)
    except _PeerClosed as exc:
        if exc.received:
            raise ProtocolError(f"frame cut short: {exc}") from exc
        raise
    msg_type, epoch, length = decode_header(header)
    try:
        payload = recv_exact(sock, length)
    except _PeerClosed as exc:
        raise ProtocolError(f"frame cut short: {exc}") from exc
    return Frame(msg_type, epoch, payload)


def send_frame(sock: socket.socket, msg_type: int, epoch: int, payload: bytes = b"") -> None:
    try:
        sock.sendall(encode_frame(msg_type, epoch, payload))
    except OSError as exc:
        raise TransportError(f"send failed: {exc}") from exc


def expect(frame: Frame, msg_type: int, epoch: int) -> Frame:
    if frame.msg_type != msg_type:
        raise ProtocolError(f"expected message type {msg_type}, got {frame.msg_type}")
    if frame.epoch != epoch:
        raise ProtocolError(f"expected epoch {epoch}, got {frame.epoch}")
    return frame
