"""Deterministic scripted mock backends speaking wire schema v1.

Mock decisions are pure functions of (script seed, job_id, question
position), so behavior is identical regardless of arrival order or
concurrency; a shared lock only guards the attempt counters.

The generation mock scans each prompt for phrases declared in the
script's ``phrase_map`` and draws a per-substitution "did the edit
take" outcome; the outcomes are marked inside ``generated_ref``
(``mock://gen/<job>#hair=red:ok,...``) so a separately-running filter
mock answers consistently with what generation "did". Questions that
match no marker fall back to per-attribute pass rates, and questions
matching nothing at all use the label pass rate.

Script JSON (version "1")::

    {
      "format_version": "1",
      "seed": 0,
      "generation": {
        "phrase_map": {"vibrant red hair": ["hair", "red"]},
        "edit_pass_rates": {"emotion": 0.8, "default": 1.0},
        "transient_failures": {"job-000007": 2},
        "permanent_failures": ["job-000011"],
        "hard_failures": ["job-000012"],
        "delay_ms_max": 0
      },
      "filter": {
        "pass_rates": {"emotion": 0.8, "default": 0.95},
        "label_pass": 0.98,
        "force": [{"question_contains": "pink", "answer": 0}],
        "malformed_answers": ["job-000013"],
        "transient_failures": {}, "permanent_failures": [],
        "delay_ms_max": 0
      }
    }

``transient_failures`` reply with retryable errors N times before
succeeding; ``permanent_failures`` always reply transient (clients
exhaust retries); generation ``hard_failures`` reply status="failed".
"""

from __future__ import annotations

import hashlib
import json
import socketserver
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import FORMAT_VERSION, WIRE_VERSION
from .errors import ConfigError, ProtocolError
from .protocol import (
    ERROR_TRANSIENT,
    ERROR_UNSUPPORTED,
    decode_message,
    encode_message,
    error_message,
    read_frame,
    write_frame,
)

MARKER_SEP = "#"


def _uniform(*parts) -> float:
    """Stable uniform draw in [0, 1) keyed by the joined parts."""
    key = "|".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def load_script(source) -> dict:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            script = json.load(fh)
    else:
        script = dict(source)
    if script.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"mock script format_version {script.get('format_version')!r} unsupported"
        )
    for section in ("generation", "filter"):
        part = script.get(section, {})
        if not isinstance(part, dict):
            raise ConfigError(f"mock script section {section!r} must be an object")
        for rate_key in ("edit_pass_rates", "pass_rates"):
            for name, rate in part.get(rate_key, {}).items():
                if not (0.0 <= float(rate) <= 1.0):
                    raise ConfigError(f"{rate_key}[{name!r}] = {rate} outside [0, 1]")
        if "label_pass" in part and not (0.0 <= float(part["label_pass"]) <= 1.0):
            raise ConfigError("label_pass outside [0, 1]")
    return script


class MockBackend:
    """Single scripted state machine answering generation and/or filter
    requests. ``kind`` restricts which request types are served."""

    def __init__(self, script, kind: str = "both"):
        if kind not in ("both", "generation", "filter"):
            raise ConfigError(f"mock kind {kind!r} invalid")
        self.script = load_script(script)
        self.kind = kind
        self.seed = self.script.get("seed", 0)
        self.attempts: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    # -- bookkeeping -------------------------------------------------

    def _attempt(self, section: str, job_id: str) -> int:
        with self._lock:
            key = (section, job_id)
            self.attempts[key] = self.attempts.get(key, 0) + 1
            return self.attempts[key]

    def _scripted_failure(self, section: str, job_id: str, attempt: int):
        part = self.script.get(section, {})
        transient = part.get("transient_failures", {})
        if job_id in transient and attempt <= int(transient[job_id]):
            return error_message(
                ERROR_TRANSIENT, f"scripted transient failure #{attempt}", job_id
            )
        if job_id in part.get("permanent_failures", []):
            return error_message(ERROR_TRANSIENT, "scripted permanent failure", job_id)
        return None

    def _delay(self, section: str, job_id: str):
        max_ms = int(self.script.get(section, {}).get("delay_ms_max", 0))
        if max_ms > 0:
            ms = int(_uniform(self.seed, "delay", section, job_id) * (max_ms + 1))
            time.sleep(ms / 1000.0)

    # -- handlers ----------------------------------------------------

    def handle_bytes(self, payload: bytes) -> bytes:
        try:
            msg = decode_message(payload)
        except ProtocolError as exc:
            return encode_message(error_message("bad_request", str(exc)))
        return encode_message(self.handle(msg))

    def handle(self, msg: dict) -> dict:
        mtype = msg["type"]
        if mtype == "hello_request":
            kinds = "generation,filter" if self.kind == "both" else self.kind
            return {
                "type": "hello_response",
                "v": WIRE_VERSION,
                "capabilities": {
                    "backend": "scripted-mock",
                    "kinds": kinds,
                    "deterministic": "true",
                },
            }
        if mtype == "generation_request":
            if self.kind == "filter":
                return error_message(
                    ERROR_UNSUPPORTED, "this mock serves filter requests only",
                    msg.get("job_id", ""),
                )
            return self._handle_generation(msg)
        if mtype == "filter_request":
            if self.kind == "generation":
                return error_message(
                    ERROR_UNSUPPORTED, "this mock serves generation requests only",
                    msg.get("job_id", ""),
                )
            return self._handle_filter(msg)
        return error_message(
            ERROR_UNSUPPORTED, f"mock cannot answer {mtype}", msg.get("job_id", "")
        )

    def _handle_generation(self, msg: dict) -> dict:
        job_id = msg["job_id"]
        attempt = self._attempt("generation", job_id)
        self._delay("generation", job_id)
        failure = self._scripted_failure("generation", job_id, attempt)
        if failure is not None:
            return failure
        part = self.script.get("generation", {})
        if job_id in part.get("hard_failures", []):
            return {
                "type": "generation_response",
                "v": WIRE_VERSION,
                "job_id": job_id,
                "status": "failed",
                "generated_ref": "",
                "backend_meta": {"reason": "scripted hard failure"},
            }
        markers = []
        rates = part.get("edit_pass_rates", {})
        default_rate = float(rates.get("default", 1.0))
        for phrase in sorted(part.get("phrase_map", {})):
            if phrase in msg["prompt"]:
                attr, value = part["phrase_map"][phrase]
                rate = float(rates.get(attr, default_rate))
                ok = _uniform(self.seed, "gen", job_id, attr) < rate
                markers.append(f"{attr}={value}:{'ok' if ok else 'miss'}")
        ref = f"mock://gen/{job_id}"
        if markers:
            ref += MARKER_SEP + ",".join(markers)
        return {
            "type": "generation_response",
            "v": WIRE_VERSION,
            "job_id": job_id,
            "status": "ok",
            "generated_ref": ref,
            "backend_meta": {"backend": "scripted-mock", "seed": str(msg["seed"])},
        }

    def _handle_filter(self, msg: dict) -> dict:
        job_id = msg["job_id"]
        attempt = self._attempt("filter", job_id)
        self._delay("filter", job_id)
        failure = self._scripted_failure("filter", job_id, attempt)
        if failure is not None:
            return failure
        part = self.script.get("filter", {})
        if job_id in part.get("malformed_answers", []):
            raw = "1 maybe" if len(msg["questions"]) != 2 else "1 yes"
        else:
            raw = " ".join(
                str(self._answer(part, msg, i, question))
                for i, question in enumerate(msg["questions"])
            )
        return {
            "type": "filter_response",
            "v": WIRE_VERSION,
            "job_id": job_id,
            "raw_answer": raw,
        }

    def _answer(self, part: dict, msg: dict, position: int, question: str) -> int:
        for rule in part.get("force", []):
            if rule["question_contains"] in question:
                return int(rule["answer"])
        is_label_question = position == len(msg["questions"]) - 1
        if is_label_question:
            rate = float(part.get("label_pass", 1.0))
        else:
            for attr, value, ok in _parse_markers(msg["generated_ref"]):
                if f"{value} {attr}" in question:
                    return 1 if ok else 0
            rates = part.get("pass_rates", {})
            for attr in sorted(rates):
                if attr != "default" and attr in question:
                    rate = float(rates[attr])
                    break
            else:
                rate = float(rates.get("default", 1.0))
        draw = _uniform(self.seed, "filter", msg["job_id"], position)
        return 1 if draw < rate else 0


def _parse_markers(generated_ref: str):
    if MARKER_SEP not in generated_ref:
        return []
    _, _, tail = generated_ref.partition(MARKER_SEP)
    out = []
    for chunk in tail.split(","):
        if ":" not in chunk or "=" not in chunk:
            continue
        pair, _, outcome = chunk.rpartition(":")
        attr, _, value = pair.partition("=")
        out.append((attr, value, outcome == "ok"))
    return out


# -- servers ---------------------------------------------------------


class _StreamHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            try:
                payload = read_frame(self.rfile)
            except ProtocolError:
                return
            if payload is None:
                return
            reply = self.server.backend.handle_bytes(payload)
            try:
                write_frame(self.wfile, reply)
            except (OSError, ValueError):
                return


class MockTcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, backend: MockBackend, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _StreamHandler)
        self.backend = backend

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"


class _HttpHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        if self.path != "/v1/message":
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length", 0))
        payload = self.rfile.read(length)
        reply = self.server.backend.handle_bytes(payload)
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, *args):  # silence per-request stderr noise
        pass


class MockHttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, backend: MockBackend, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _HttpHandler)
        self.backend = backend

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


def start_server(server) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread
