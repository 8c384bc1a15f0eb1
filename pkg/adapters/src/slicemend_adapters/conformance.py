"""Protocol conformance checks runnable without any model stack.

Validates the packaged golden fixtures byte-for-byte against this
package's own codec, then drives stub-engine backends with the golden
requests and question batches, checking schema validity and the
one-binary-token-per-question contract.
"""

from __future__ import annotations

import json
import struct
import tempfile
from importlib import resources
from pathlib import Path

from .engines import AdapterConfig
from .server import AdapterBackend
from .wire import decode, encode

GOLDEN_NAMES = (
    "generation_request",
    "generation_response",
    "filter_request",
    "filter_response",
    "hello_request",
    "hello_response",
    "error",
)


def _golden(name: str) -> bytes:
    return resources.files("slicemend_adapters").joinpath(f"golden/{name}.bin").read_bytes()


def run_conformance() -> dict:
    report = {
        "golden_messages_valid": True,
        "token_counts_match": True,
        "checks": [],
    }

    for name in GOLDEN_NAMES:
        framed = _golden(name)
        (length,) = struct.unpack(">I", framed[:4])
        body = framed[4:]
        ok = len(body) == length and encode(decode(body)) == body
        report["checks"].append({"golden": name, "ok": ok})
        if not ok:
            report["golden_messages_valid"] = False

    with tempfile.TemporaryDirectory() as tmp:
        config = AdapterConfig(engine="stub", output_dir=Path(tmp) / "out")
        generation = AdapterBackend(config, "generation")
        filtering = AdapterBackend(config, "filter")

        request = json.loads(_golden("generation_request")[4:])
        reply = decode(generation.handle_bytes(encode(request)))
        gen_ok = (
            reply["type"] == "generation_response"
            and reply["job_id"] == request["job_id"]
            and reply["status"] == "ok"
            and (Path(tmp) / "out" / reply["generated_ref"]).exists()
        )
        report["checks"].append({"generation_stub": gen_ok})
        report["golden_messages_valid"] &= gen_ok

        # Token-count contract on question batches of every size seen in
        # practice (1 substitution + label .. 3 substitutions + label).
        for n_questions in (2, 3, 4):
            freq = json.loads(_golden("filter_request")[4:])
            freq["questions"] = freq["questions"][:n_questions]
            reply = decode(filtering.handle_bytes(encode(freq)))
            tokens = reply["raw_answer"].split()
            ok = (
                reply["type"] == "filter_response"
                and len(tokens) == n_questions
                and all(t in ("0", "1") for t in tokens)
            )
            report["checks"].append({"filter_tokens": n_questions, "ok": ok})
            if not ok:
                report["token_counts_match"] = False

        hello = decode(generation.handle_bytes(encode({"type": "hello_request"})))
        report["capabilities"] = hello["capabilities"]
        report["golden_messages_valid"] &= hello["type"] == "hello_response"

    return report


if __name__ == "__main__":
    print(json.dumps(run_conformance(), indent=2))
