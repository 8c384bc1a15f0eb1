"""Standalone implementation of wire schema v1.

Framing: 4-byte big-endian length, then canonical JSON (sorted keys,
compact separators, ASCII escapes). Message types and fields follow the
published schema; this module is written against that document, not
against the core package, so the two implementations check each other.
"""

from __future__ import annotations

import json
import struct

from . import WIRE_VERSION

MAX_MESSAGE_BYTES = 16 * 1024 * 1024
_LEN = struct.Struct(">I")


class WireError(Exception):
    pass


REQUIRED = {
    "hello_request": (),
    "hello_response": ("capabilities",),
    "generation_request": (
        "job_id",
        "source_ref",
        "prompt",
        "positive_prompt",
        "negative_prompt",
        "condition_kind",
        "inference_steps",
        "seed",
    ),
    "generation_response": ("job_id", "status", "generated_ref", "backend_meta"),
    "filter_request": ("job_id", "generated_ref", "questions", "instruction"),
    "filter_response": ("job_id", "raw_answer"),
    "error": ("code", "message"),
}


def validate(msg: dict) -> dict:
    if msg.get("v") != WIRE_VERSION:
        raise WireError(f"unsupported wire version {msg.get('v')!r}")
    mtype = msg.get("type")
    if mtype not in REQUIRED:
        raise WireError(f"unknown message type {mtype!r}")
    missing = [f for f in REQUIRED[mtype] if f not in msg]
    if missing:
        raise WireError(f"{mtype} missing fields {missing}")
    if mtype == "generation_response":
        if msg["status"] not in ("ok", "failed"):
            raise WireError(f"invalid status {msg['status']!r}")
        if msg["status"] == "ok" and not msg["generated_ref"]:
            raise WireError("ok response with empty generated_ref")
    return msg


def encode(msg: dict) -> bytes:
    msg = dict(msg)
    msg.setdefault("v", WIRE_VERSION)
    validate(msg)
    return json.dumps(msg, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode(
        "ascii"
    )


def decode(payload: bytes) -> dict:
    try:
        msg = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"undecodable message: {exc}") from exc
    if not isinstance(msg, dict):
        raise WireError("message is not an object")
    return validate(msg)


def write_frame(stream, payload: bytes) -> None:
    if len(payload) > MAX_MESSAGE_BYTES:
        raise WireError("frame too large")
    stream.write(_LEN.pack(len(payload)) + payload)
    stream.flush()


def read_frame(stream):
    header = stream.read(_LEN.size)
    if not header:
        return None
    while len(header) < _LEN.size:
        more = stream.read(_LEN.size - len(header))
        if not more:
            raise WireError("stream closed mid-header")
        header += more
    (length,) = _LEN.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise WireError("declared frame too large")
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            raise WireError("stream closed mid-frame")
        body += chunk
    return body


def error_message(code: str, message: str, job_id: str = "") -> dict:
    return {
        "type": "error",
        "v": WIRE_VERSION,
        "code": code,
        "message": message,
        "job_id": job_id,
    }
