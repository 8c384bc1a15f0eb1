"""Wire-conformant adapter servers (tcp and http bindings).

One request in flight per model instance: the TCP handler serializes
requests per connection, and a server-wide lock serializes engine calls
across connections (excess requests queue FIFO on the lock). Inference
failures become status="failed" generation responses or refusal answers
for the filter; they are never protocol violations.
"""

from __future__ import annotations

import socketserver
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import WIRE_VERSION
from .engines import AdapterConfig, StartupError, filter_engine, generation_engine
from .wire import WireError, decode, encode, error_message, read_frame, write_frame


class AdapterBackend:
    """Dispatches wire messages to the configured engine(s)."""

    def __init__(self, config: AdapterConfig, kind: str):
        if kind not in ("generation", "filter"):
            raise StartupError(f"adapter kind {kind!r} invalid")
        self.config = config
        self.kind = kind
        self._lock = threading.Lock()
        self._generation = generation_engine(config) if kind == "generation" else None
        self._filter = filter_engine(config) if kind == "filter" else None

    def handle_bytes(self, payload: bytes) -> bytes:
        try:
            msg = decode(payload)
        except WireError as exc:
            return encode(error_message("bad_request", str(exc)))
        return encode(self.handle(msg))

    def handle(self, msg: dict) -> dict:
        mtype = msg["type"]
        if mtype == "hello_request":
            return {
                "type": "hello_response",
                "v": WIRE_VERSION,
                "capabilities": self.config.capabilities(self.kind),
            }
        if mtype == "generation_request" and self._generation is not None:
            return self._handle_generation(msg)
        if mtype == "filter_request" and self._filter is not None:
            return self._handle_filter(msg)
        return error_message(
            "unsupported",
            f"this adapter serves {self.kind} requests",
            msg.get("job_id", ""),
        )

    def _handle_generation(self, msg: dict) -> dict:
        try:
            with self._lock:
                rel = self._generation.generate(msg)
            return {
                "type": "generation_response",
                "v": WIRE_VERSION,
                "job_id": msg["job_id"],
                "status": "ok",
                "generated_ref": rel,
                "backend_meta": {
                    "backend": f"adapter-{self.config.engine}",
                    "inference_steps": str(msg["inference_steps"]),
                    "seed": str(msg["seed"]),
                },
            }
        except Exception as exc:
            return {
                "type": "generation_response",
                "v": WIRE_VERSION,
                "job_id": msg["job_id"],
                "status": "failed",
                "generated_ref": "",
                "backend_meta": {"reason": f"inference failure: {exc}"},
            }

    def _handle_filter(self, msg: dict) -> dict:
        try:
            with self._lock:
                raw = self._filter.answer(msg)
        except Exception as exc:
            # A declared refusal; the client's strict parser maps it to
            # a needs-review marker.
            raw = f"REFUSED: {exc}"
        return {
            "type": "filter_response",
            "v": WIRE_VERSION,
            "job_id": msg["job_id"],
            "raw_answer": raw,
        }


class _StreamHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            try:
                payload = read_frame(self.rfile)
            except WireError:
                return
            if payload is None:
                return
            reply = self.server.backend.handle_bytes(payload)
            try:
                write_frame(self.wfile, reply)
            except (OSError, WireError):
                return


class AdapterTcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, backend: AdapterBackend, host: str = "127.0.0.1", port: int = 0):
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
        reply = self.server.backend.handle_bytes(self.rfile.read(length))
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, *args):
        pass


class AdapterHttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, backend: AdapterBackend, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _HttpHandler)
        self.backend = backend

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


def serve_forever(backend: AdapterBackend, binding: str, host: str, port: int):
    server_cls = AdapterTcpServer if binding == "tcp" else AdapterHttpServer
    server = server_cls(backend, host=host, port=port)
    print(server.endpoint, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
