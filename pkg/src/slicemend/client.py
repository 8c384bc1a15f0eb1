"""Backend clients: bounded-concurrency batches with ordered results.

Endpoints are "tcp://host:port", "http://host:port", or any object with
a ``handle_bytes(payload) -> payload`` method (in-process mocks). All
three routes go through the same wire codec, so in-process tests still
exercise encode/decode.

Each job is attempted at most ``retries + 1`` times. Retryable events
are transport errors, timeouts, and explicit "transient" error replies;
anything else malformed raises ProtocolError naming the job. Jobs whose
retries are exhausted come back as failed results in position, never
dropped, and the output list order always equals the input order no
matter how completions interleave.
"""

from __future__ import annotations

import http.client
import socket
import threading
import urllib.parse
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .errors import ProtocolError
from .filtering import QuestionSet
from .planning import GenerationJob
from .protocol import (
    ERROR_TRANSIENT,
    FilterOutcome,
    FilterRequest,
    GenerationRequest,
    GenerationResponse,
    decode_message,
    encode_message,
    parse_binary_answers,
    read_frame,
    write_frame,
)


@dataclass(frozen=True)
class Limits:
    max_in_flight: int = 4
    timeout: float = 30.0  # seconds per attempt
    retries: int = 2

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


class _RetryableFailure(Exception):
    pass


class StreamTransport:
    """One duplex TCP connection, strict request/response framing."""

    def __init__(self, host: str, port: int, timeout: float):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def request(self, payload: bytes) -> bytes:
        try:
            write_frame(self._file, payload)
            body = read_frame(self._file)
        except (OSError, ValueError) as exc:
            raise _RetryableFailure(f"stream transport: {exc}") from exc
        if body is None:
            raise _RetryableFailure("stream transport: connection closed")
        return body

    def close(self):
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass


class HttpTransport:
    """POST /v1/message carrying the same JSON schema as the stream binding."""

    def __init__(self, host: str, port: int, timeout: float):
        self._conn = http.client.HTTPConnection(host, port, timeout=timeout)

    def request(self, payload: bytes) -> bytes:
        try:
            self._conn.request(
                "POST",
                "/v1/message",
                body=payload,
                headers={"Content-Type": "application/json"},
            )
            resp = self._conn.getresponse()
            body = resp.read()
        except (OSError, http.client.HTTPException) as exc:
            self._conn.close()
            raise _RetryableFailure(f"http transport: {exc}") from exc
        if resp.status != 200:
            raise _RetryableFailure(f"http transport: status {resp.status}")
        return body

    def close(self):
        self._conn.close()


class LoopbackTransport:
    """Routes bytes to an in-process backend object."""

    def __init__(self, backend):
        self._backend = backend

    def request(self, payload: bytes) -> bytes:
        return self._backend.handle_bytes(payload)

    def close(self):
        pass


def _transport_factory(endpoint, limits: Limits):
    if hasattr(endpoint, "handle_bytes"):
        return lambda: LoopbackTransport(endpoint)
    if not isinstance(endpoint, str):
        raise ProtocolError(f"unusable endpoint {endpoint!r}")
    parsed = urllib.parse.urlparse(endpoint)
    if parsed.scheme == "tcp":
        return lambda: StreamTransport(parsed.hostname, parsed.port, limits.timeout)
    if parsed.scheme == "http":
        return lambda: HttpTransport(parsed.hostname, parsed.port, limits.timeout)
    raise ProtocolError(f"unsupported endpoint scheme {parsed.scheme!r} in {endpoint!r}")


class _Pool:
    """Thread pool where each worker keeps its own connection."""

    def __init__(self, endpoint, limits: Limits):
        self._factory = _transport_factory(endpoint, limits)
        self._limits = limits
        self._local = threading.local()

    def _transport(self):
        t = getattr(self._local, "transport", None)
        if t is None:
            t = self._factory()
            self._local.transport = t
        return t

    def _reset_transport(self):
        t = getattr(self._local, "transport", None)
        if t is not None:
            t.close()
            self._local.transport = None

    def call(self, request_msg: dict, expected_type: str, job_id: str):
        """Returns the reply dict, or a string reason after exhausted retries."""
        payload = encode_message(request_msg)
        last_reason = "no attempt made"
        for _attempt in range(self._limits.retries + 1):
            try:
                transport = self._transport()
            except OSError as exc:
                last_reason = f"connect failed: {exc}"
                continue
            try:
                reply_bytes = transport.request(payload)
            except _RetryableFailure as exc:
                last_reason = str(exc)
                self._reset_transport()
                continue
            reply = decode_message(reply_bytes)
            if reply["type"] == "error":
                if reply["code"] == ERROR_TRANSIENT:
                    last_reason = f"transient backend error: {reply['message']}"
                    continue
                raise ProtocolError(
                    f"job {job_id}: backend error {reply['code']}: {reply['message']}"
                )
            if reply["type"] != expected_type:
                raise ProtocolError(
                    f"job {job_id}: expected {expected_type}, got {reply['type']}"
                )
            if expected_type != "hello_response" and reply.get("job_id") != job_id:
                raise ProtocolError(
                    f"job {job_id}: response carries mismatched job_id {reply.get('job_id')!r}"
                )
            return reply
        return last_reason

    def run_ordered(self, tasks):
        """Run callables with bounded concurrency; results in input order."""
        if self._limits.max_in_flight == 1 or len(tasks) <= 1:
            return [task() for task in tasks]
        with ThreadPoolExecutor(max_workers=self._limits.max_in_flight) as pool:
            futures = [pool.submit(task) for task in tasks]
            return [f.result() for f in futures]


def generation_request_for(job: GenerationJob) -> GenerationRequest:
    return GenerationRequest(
        job_id=job.job_id,
        source_ref=job.source_ref,
        prompt=job.prompt.prompt,
        positive_prompt=job.prompt.positive_prompt,
        negative_prompt=job.prompt.negative_prompt,
        condition_kind=job.prompt.condition_kind,
        inference_steps=job.prompt.inference_steps,
        seed=job.seed,
    )


def generate_batch(
    jobs: list[GenerationJob], endpoint, limits: Limits = Limits()
) -> list[GenerationResponse]:
    """One response per job, in job order; exhausted retries become
    status="failed" responses rather than dropped entries."""
    pool = _Pool(endpoint, limits)

    def one(job: GenerationJob):
        def task():
            reply = pool.call(
                generation_request_for(job).to_message(), "generation_response", job.job_id
            )
            if isinstance(reply, str):
                return GenerationResponse(
                    job_id=job.job_id,
                    status="failed",
                    generated_ref="",
                    backend_meta={"error": reply, "exhausted_retries": str(limits.retries)},
                )
            return GenerationResponse.from_message(reply)

        return task

    return pool.run_ordered([one(job) for job in jobs])


def filter_batch(
    requests: list[FilterRequest], endpoint, limits: Limits = Limits()
) -> list[FilterOutcome]:
    """Filter exchanges in request order with strict answer parsing."""
    pool = _Pool(endpoint, limits)

    def one(req: FilterRequest):
        def task():
            reply = pool.call(req.to_message(), "filter_response", req.job_id)
            if isinstance(reply, str):
                return FilterOutcome(
                    job_id=req.job_id,
                    generated_ref=req.generated_ref,
                    raw_answer="",
                    parsed=None,
                    failure=f"transport_failure: {reply}",
                )
            raw = reply["raw_answer"]
            parsed, failure = parse_binary_answers(raw, len(req.questions))
            return FilterOutcome(
                job_id=req.job_id,
                generated_ref=req.generated_ref,
                raw_answer=raw,
                parsed=parsed,
                failure=failure,
            )

        return task

    return pool.run_ordered([one(req) for req in requests])


def filter_requests_for(
    jobs: list[GenerationJob],
    generations: list[GenerationResponse],
    question_sets: list[QuestionSet],
) -> list[FilterRequest]:
    """Pair planned jobs with their generated refs; skips failed generations."""
    by_id = {g.job_id: g for g in generations}
    requests = []
    for job, qs in zip(jobs, question_sets):
        gen = by_id.get(job.job_id)
        if gen is None or not gen.ok:
            continue
        requests.append(
            FilterRequest(
                job_id=job.job_id,
                generated_ref=gen.generated_ref,
                questions=tuple(qs.questions()),
                instruction=qs.instruction,
            )
        )
    return requests


def handshake(endpoint, limits: Limits = Limits()) -> dict:
    """Hello round-trip; returns the backend's capability map."""
    pool = _Pool(endpoint, limits)
    reply = pool.call({"type": "hello_request"}, "hello_response", job_id="")
    if isinstance(reply, str):
        raise ProtocolError(f"handshake failed: {reply}")
    return dict(reply["capabilities"])
