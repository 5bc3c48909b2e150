"""Length-prefixed frames: 4-byte big-endian payload length, 1 type byte, compact UTF-8 JSON object."""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass

from ..errors import FrameError

MAX_PAYLOAD = 1 << 20
HEADER = struct.Struct(">IB")


class FrameType(enum.IntEnum):
    HELLO = 0x01
    INIT_MSG = 0x02
    PHASE_DONE = 0x03
    CHALLENGE = 0x04
    ANSWER = 0x05
    VERDICT = 0x06
    QSTATE_ENVELOPE = 0x10
    ERROR = 0x7F


@dataclass(frozen=True)
class Frame:
    type: FrameType
    payload: dict


def dump_payload(payload: dict) -> bytes:
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode_frame(ftype, payload: dict) -> bytes:
    try:
        ftype = FrameType(ftype)
    except ValueError:
        raise FrameError(f"unknown frame type {ftype!r}") from None
    if not isinstance(payload, dict):
        raise FrameError("payload must be a JSON object")
    body = dump_payload(payload)
    if len(body) > MAX_PAYLOAD:
        raise FrameError(f"payload of {len(body)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(len(body), ftype) + body


def parse_header(header: bytes) -> tuple[int, FrameType]:
    if len(header) != HEADER.size:
        raise FrameError("truncated frame header")
    length, code = HEADER.unpack(header)
    if length > MAX_PAYLOAD:
        raise FrameError(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    try:
        return length, FrameType(code)
    except ValueError:
        raise FrameError(f"unknown frame type 0x{code:02x}") from None


def parse_body(ftype: FrameType, body: bytes) -> Frame:
    try:
        payload = json.loads(body.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FrameError(f"payload is not UTF-8: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FrameError(f"payload is not JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise FrameError("payload must be a JSON object")
    return Frame(ftype, payload)


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one frame; trailing or missing bytes are errors."""
    length, ftype = parse_header(data[: HEADER.size])
    body = data[HEADER.size:]
    if len(body) != length:
        raise FrameError(f"length field says {length} bytes, found {len(body)}")
    return parse_body(ftype, body)


def read_frame(stream) -> Frame | None:
    """Read one frame from a binary file-like object; ``None`` on clean EOF."""
    header = stream.read(HEADER.size)
    if not header:
        return None
    length, ftype = parse_header(header)
    body = stream.read(length)
    if len(body) != length:
        raise FrameError("connection closed mid-frame")
    return parse_body(ftype, body)
