"""Wire schema v1 for generation and filter backends.

One schema, two bindings:

* Stream: length-delimited messages over a duplex byte stream. Each
  frame is a 4-byte big-endian unsigned length followed by that many
  bytes of canonical JSON (sorted keys, no spaces, ASCII escapes).
* HTTP: the same JSON document POSTed to /v1/message; the response body
  is the reply message.

Every message is a flat JSON object carrying ``v`` (wire version, "1")
and ``type``. Types and their fields:

* hello_request: {}
* hello_response: capabilities (string map)
* generation_request: job_id, source_ref, prompt, positive_prompt,
  negative_prompt, condition_kind, inference_steps, seed
* generation_response: job_id, status ("ok" | "failed"), generated_ref,
  backend_meta (string map); ok implies non-empty generated_ref
* filter_request: job_id, generated_ref, questions (list of strings),
  instruction
* filter_response: job_id, raw_answer
* error: code ("transient" | "bad_request" | "unsupported"), message,
  job_id (may be ""); "transient" invites a retry, everything else is a
  contract violation.

Filter answers are strict: the raw answer must be whitespace-separated
tokens, each exactly "0" or "1", one per question. Anything else is a
parse failure surfaced as a needs-review marker, never a guess.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from . import WIRE_VERSION
from .errors import ProtocolError

MAX_MESSAGE_BYTES = 16 * 1024 * 1024
_LEN = struct.Struct(">I")

ERROR_TRANSIENT = "transient"
ERROR_BAD_REQUEST = "bad_request"
ERROR_UNSUPPORTED = "unsupported"

_REQUIRED_FIELDS = {
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


def encode_message(message: dict) -> bytes:
    """Canonical wire bytes for a message dict (adds v, validates type)."""
    msg = dict(message)
    msg.setdefault("v", WIRE_VERSION)
    validate_message(msg)
    return json.dumps(msg, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode(
        "ascii"
    )


def decode_message(payload: bytes) -> dict:
    try:
        msg = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable wire message: {exc}") from exc
    if not isinstance(msg, dict):
        raise ProtocolError("wire message is not a JSON object")
    validate_message(msg)
    return msg


def validate_message(msg: dict) -> None:
    version = msg.get("v")
    if version != WIRE_VERSION:
        raise ProtocolError(f"unsupported wire version {version!r}")
    mtype = msg.get("type")
    if mtype not in _REQUIRED_FIELDS:
        raise ProtocolError(f"unknown message type {mtype!r}")
    missing = [f for f in _REQUIRED_FIELDS[mtype] if f not in msg]
    if missing:
        raise ProtocolError(f"{mtype} message missing fields {missing}")
    if mtype == "generation_response":
        if msg["status"] not in ("ok", "failed"):
            raise ProtocolError(f"generation_response status {msg['status']!r} invalid")
        if msg["status"] == "ok" and not msg["generated_ref"]:
            raise ProtocolError("generation_response ok with empty generated_ref")
    if mtype == "filter_request" and not isinstance(msg["questions"], list):
        raise ProtocolError("filter_request questions must be a list")


def write_frame(stream, payload: bytes) -> None:
    if len(payload) > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"message of {len(payload)} bytes exceeds frame limit")
    stream.write(_LEN.pack(len(payload)) + payload)
    stream.flush()


def read_frame(stream) -> bytes:
    header = _read_exact(stream, _LEN.size)
    if header is None:
        return None
    (length,) = _LEN.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"declared frame of {length} bytes exceeds limit")
    body = _read_exact(stream, length)
    if body is None:
        raise ProtocolError("stream closed mid-frame")
    return body


def _read_exact(stream, n: int):
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            return None if not chunks else None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


@dataclass(frozen=True)
class GenerationRequest:
    job_id: str
    source_ref: str
    prompt: str
    positive_prompt: str
    negative_prompt: str
    condition_kind: str
    inference_steps: int
    seed: int

    def to_message(self) -> dict:
        return {
            "type": "generation_request",
            "v": WIRE_VERSION,
            "job_id": self.job_id,
            "source_ref": self.source_ref,
            "prompt": self.prompt,
            "positive_prompt": self.positive_prompt,
            "negative_prompt": self.negative_prompt,
            "condition_kind": self.condition_kind,
            "inference_steps": self.inference_steps,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class GenerationResponse:
    job_id: str
    status: str
    generated_ref: str
    backend_meta: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_message(cls, msg: dict) -> "GenerationResponse":
        return cls(
            job_id=msg["job_id"],
            status=msg["status"],
            generated_ref=msg["generated_ref"],
            backend_meta=dict(msg["backend_meta"]),
        )

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "status": self.status,
            "generated_ref": self.generated_ref,
            "backend_meta": dict(self.backend_meta),
        }

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class FilterRequest:
    job_id: str
    generated_ref: str
    questions: tuple[str, ...]
    instruction: str

    def to_message(self) -> dict:
        return {
            "type": "filter_request",
            "v": WIRE_VERSION,
            "job_id": self.job_id,
            "generated_ref": self.generated_ref,
            "questions": list(self.questions),
            "instruction": self.instruction,
        }


PARSE_FAILURE = "parse_failure"


@dataclass(frozen=True)
class FilterOutcome:
    """Client-side view of one filter exchange.

    ``parsed`` is the per-question binary vector, or None with
    ``failure`` set to the parse/transport failure marker. The
    originating request's generated_ref rides along for bookkeeping;
    it is not part of the wire response.
    """

    job_id: str
    generated_ref: str
    raw_answer: str
    parsed: tuple[int, ...] | None
    failure: str | None = None

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "generated_ref": self.generated_ref,
            "raw_answer": self.raw_answer,
            "parsed": list(self.parsed) if self.parsed is not None else None,
            "failure": self.failure,
        }


def parse_binary_answers(raw_answer: str, n_questions: int):
    """Parse "1 0 1"-style answers; returns (vector, None) or (None, reason)."""
    tokens = raw_answer.split()
    if len(tokens) != n_questions:
        return None, f"{PARSE_FAILURE}: expected {n_questions} tokens, got {len(tokens)}"
    values = []
    for tok in tokens:
        if tok not in ("0", "1"):
            return None, f"{PARSE_FAILURE}: token {tok!r} not in {{0, 1}}"
        values.append(int(tok))
    return tuple(values), None


def error_message(code: str, message: str, job_id: str = "") -> dict:
    return {
        "type": "error",
        "v": WIRE_VERSION,
        "code": code,
        "message": message,
        "job_id": job_id,
    }
