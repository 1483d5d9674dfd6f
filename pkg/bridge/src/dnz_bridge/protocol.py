"""DNZ1 wire protocol: framing, parsing, and error types.

All integers are little-endian.

Handshake:  client -> magic ``DNZ1`` + u32 version (=1)
            server -> magic + u32 version + u8 output mode (0 = x0, 1 = eps)
                      + u32 model channel count (0 = any)
Request:    u8 type=1, u32 payload length, f32 alpha_bar, u32 t, u32 C,
            u32 H, u32 W, then C*H*W f32 values row-major per channel
Response:   u8 type=2, u32 payload length, u32 C, u32 H, u32 W, payload
Error:      u8 type=3, u32 payload length, UTF-8 message
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"DNZ1"
VERSION = 1
MODE_X0 = 0
MODE_EPS = 1
TYPE_REQUEST = 1
TYPE_RESPONSE = 2
TYPE_ERROR = 3

FRAME_HEAD = struct.Struct("<BI")
REQUEST_HEAD = struct.Struct("<fIIII")
RESPONSE_HEAD = struct.Struct("<III")

# hard cap on any frame payload; well above a 3 x 1024 x 1024 f32 image
MAX_PAYLOAD = 1 << 28


class FramingError(Exception):
    """Byte stream violates the protocol; the connection must close."""


class RequestError(Exception):
    """Well-formed frame with unacceptable content; connection may continue."""


@dataclass
class Request:
    alpha_bar: float
    t: int
    data: np.ndarray  # (C, H, W) float32


def read_exact(rfile, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = rfile.read(n - len(buf))
        if not chunk:
            raise EOFError(f"stream closed after {len(buf)} of {n} bytes")
        buf += chunk
    return buf


def read_client_hello(rfile) -> None:
    hello = read_exact(rfile, 8)
    if hello[:4] != MAGIC:
        raise FramingError(f"bad magic {hello[:4]!r}")
    version, = struct.unpack_from("<I", hello, 4)
    if version != VERSION:
        raise FramingError(f"unsupported protocol version {version}")


def server_hello(mode: int, channels: int) -> bytes:
    return MAGIC + struct.pack("<IBI", VERSION, mode, channels)


def read_request(rfile) -> Request:
    head = read_exact(rfile, FRAME_HEAD.size)
    ftype, length = FRAME_HEAD.unpack(head)
    if ftype != TYPE_REQUEST:
        raise FramingError(f"unexpected frame type {ftype}")
    if not REQUEST_HEAD.size <= length <= MAX_PAYLOAD:
        raise FramingError(f"implausible request length {length}")
    body = read_exact(rfile, length)
    alpha_bar, t, c, h, w = REQUEST_HEAD.unpack_from(body)
    expected = REQUEST_HEAD.size + 4 * c * h * w
    if c < 1 or h < 1 or w < 1 or length != expected:
        raise FramingError(f"request length {length} does not match dims {(c, h, w)}")
    if not 0.0 < alpha_bar <= 1.0 or not np.isfinite(alpha_bar):
        raise RequestError(f"alpha_bar {alpha_bar} outside (0, 1]")
    data = np.frombuffer(body, dtype="<f4", offset=REQUEST_HEAD.size).reshape(c, h, w)
    return Request(alpha_bar=float(alpha_bar), t=int(t), data=data)


def response_frame(data: np.ndarray) -> bytes:
    c, h, w = data.shape
    payload = RESPONSE_HEAD.pack(c, h, w) + np.ascontiguousarray(data, dtype="<f4").tobytes()
    return FRAME_HEAD.pack(TYPE_RESPONSE, len(payload)) + payload


def error_frame(message: str) -> bytes:
    payload = message.encode("utf-8")
    return FRAME_HEAD.pack(TYPE_ERROR, len(payload)) + payload
