"""Framed wire protocol between devices and session servers.

One frame = a 4-byte big-endian length prefix followed by exactly that many
bytes of UTF-8 JSON. Encoding is canonical (sorted keys, no whitespace) so a
given message always serializes to the same bytes. Schemas are closed: an
unknown message type, an unsupported version, a missing payload field, or an
extra field are all decode errors. Compatibility changes go through the
version number, never through silent field tolerance.

These bytes and field names are normative for every client implementation.
"""

from __future__ import annotations

import json
import socket
import struct
from dataclasses import dataclass, field

MAX_FRAME = 16 * 1024 * 1024
PROTOCOL_VERSION = 1

JOIN_REQUEST = "JoinRequest"
JOIN_ACCEPT = "JoinAccept"
TASK_REQUEST = "TaskRequest"
TASK_MANIFEST = "TaskManifest"
FIT_INS = "FitIns"
FIT_RES = "FitRes"
EVALUATE_INS = "EvaluateIns"
EVALUATE_RES = "EvaluateRes"
FA_QUERY_INS = "FAQueryIns"
FA_REPORT_RES = "FAReportRes"
ROUND_END = "RoundEnd"
ERROR_MSG = "ErrorMsg"


class ProtocolError(Exception):
    pass


class TooLarge(ProtocolError):
    pass


class Truncated(ProtocolError):
    pass


class TrailingData(ProtocolError):
    pass


class BadJson(ProtocolError):
    pass


class UnknownType(ProtocolError):
    pass


class UnsupportedVersion(ProtocolError):
    pass


class SchemaViolation(ProtocolError):
    pass


class ConnectionClosed(ProtocolError):
    pass


@dataclass
class Message:
    type: str
    session: str
    payload: dict = field(default_factory=dict)
    v: int = PROTOCOL_VERSION


# --- payload schema table -----------------------------------------------------


def _is_str(v):
    return isinstance(v, str)


def _is_bool(v):
    return isinstance(v, bool)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v):
    return _is_int(v) or isinstance(v, float)


def _is_number_list(v):
    return isinstance(v, list) and all(_is_number(x) for x in v)


def _is_object(v):
    return isinstance(v, dict)


def _nullable(check):
    return lambda v: v is None or check(v)


def _closed_object(fields: dict) -> "callable":
    def check(v):
        if not isinstance(v, dict) or set(v) != set(fields):
            return False
        return all(chk(v[name]) for name, chk in fields.items())

    return check


_HYPERPARAMS = _closed_object(
    {"learning_rate": _is_number, "epochs": _is_int, "batch_size": _nullable(_is_int), "seed": _is_int}
)
_DP_CONFIG = _closed_object(
    {
        "enabled": _is_bool,
        "clip_norm": _is_number,
        "epsilon": _is_number,
        "delta": _is_number,
        "sigma_override": _nullable(_is_number),
    }
)
_TASK_ENTRY = _closed_object(
    {
        "task_id": _is_str,
        "model_id": _nullable(_is_str),
        "model_version": _nullable(_is_int),
        "kind": _is_str,
        "port": _is_int,
        "hyperparams": _nullable(_HYPERPARAMS),
        "dp": _nullable(_DP_CONFIG),
    }
)


def _is_task_list(v):
    return isinstance(v, list) and all(_TASK_ENTRY(t) for t in v)


SCHEMAS: dict[str, dict] = {
    JOIN_REQUEST: {"client_id": _is_str, "platform": _is_str, "app_version": _is_str},
    JOIN_ACCEPT: {"round": _is_int, "model_spec": _nullable(_is_object)},
    TASK_REQUEST: {"platform": _is_str, "app_version": _is_str},
    TASK_MANIFEST: {"tasks": _is_task_list},
    FIT_INS: {"round": _is_int, "params": _is_number_list, "hyperparams": _HYPERPARAMS},
    FIT_RES: {"round": _is_int, "params": _is_number_list, "num_examples": _is_int},
    EVALUATE_INS: {"round": _is_int, "params": _is_number_list},
    EVALUATE_RES: {"round": _is_int, "loss": _is_number, "metric": _is_number, "num_examples": _is_int},
    FA_QUERY_INS: {"query": _is_object},
    FA_REPORT_RES: {"pseudonym": _is_str, "payload": _is_number, "cluster": _nullable(_is_str)},
    ROUND_END: {"round": _is_int, "global_params": _is_number_list, "done": _is_bool},
    ERROR_MSG: {"code": _is_str, "detail": _is_str},
}

_TOP_LEVEL_FIELDS = {"v", "session", "type", "payload"}


def _validate(msg: Message) -> None:
    if msg.type not in SCHEMAS:
        raise UnknownType(f"unknown message type {msg.type!r}")
    if msg.v != PROTOCOL_VERSION:
        raise UnsupportedVersion(f"protocol version {msg.v} (supported: {PROTOCOL_VERSION})")
    if not isinstance(msg.session, str):
        raise SchemaViolation("session must be a string")
    schema = SCHEMAS[msg.type]
    if not isinstance(msg.payload, dict):
        raise SchemaViolation(f"{msg.type}: payload must be an object")
    missing = set(schema) - set(msg.payload)
    if missing:
        raise SchemaViolation(f"{msg.type}: missing payload fields {sorted(missing)}")
    extra = set(msg.payload) - set(schema)
    if extra:
        raise SchemaViolation(f"{msg.type}: unexpected payload fields {sorted(extra)}")
    for name, check in schema.items():
        if not check(msg.payload[name]):
            raise SchemaViolation(f"{msg.type}: field {name!r} has invalid value")


def encode_message(msg: Message) -> bytes:
    """Length-prefixed canonical JSON for one message."""
    _validate(msg)
    doc = {"v": msg.v, "session": msg.session, "type": msg.type, "payload": msg.payload}
    body = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise TooLarge(f"frame body {len(body)} bytes exceeds {MAX_FRAME}")
    return struct.pack(">I", len(body)) + body


def decode_message(data: bytes) -> Message:
    """Strict-parse one complete frame (prefix included)."""
    if len(data) < 4:
        raise Truncated(f"frame prefix needs 4 bytes, got {len(data)}")
    (length,) = struct.unpack(">I", data[:4])
    if length > MAX_FRAME:
        raise TooLarge(f"frame prefix claims {length} bytes (max {MAX_FRAME})")
    body = data[4:]
    if len(body) < length:
        raise Truncated(f"prefix promises {length} body bytes, got {len(body)}")
    if len(body) > length:
        raise TrailingData(f"{len(body) - length} bytes past the frame end")
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadJson(str(exc)) from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("frame body must be a JSON object")
    extra = set(doc) - _TOP_LEVEL_FIELDS
    if extra:
        raise SchemaViolation(f"unexpected top-level fields {sorted(extra)}")
    missing = _TOP_LEVEL_FIELDS - set(doc)
    if missing:
        raise SchemaViolation(f"missing top-level fields {sorted(missing)}")
    if not _is_int(doc["v"]):
        raise SchemaViolation("v must be an integer")
    if doc["v"] != PROTOCOL_VERSION:
        raise UnsupportedVersion(f"protocol version {doc['v']} (supported: {PROTOCOL_VERSION})")
    if not isinstance(doc["type"], str) or doc["type"] not in SCHEMAS:
        raise UnknownType(f"unknown message type {doc['type']!r}")
    msg = Message(type=doc["type"], session=doc["session"], payload=doc["payload"], v=doc["v"])
    _validate(msg)
    return msg


# --- blocking socket framing ----------------------------------------------------


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(min(remaining, 65536))
        if not chunk:
            raise ConnectionClosed(f"peer closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(sock: socket.socket) -> Message:
    prefix = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", prefix)
    if length > MAX_FRAME:
        raise TooLarge(f"frame prefix claims {length} bytes (max {MAX_FRAME})")
    body = _recv_exact(sock, length)
    return decode_message(prefix + body)


def write_message(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode_message(msg))
