"""Command-line entry point: the pipeline as composable subcommands.

Every artifact is a versioned file (format_version "1"); any subcommand
rerun with identical inputs and seeds writes identical bytes. Exit
codes: 0 success, 1 domain error, 2 usage error.

Subcommands and their artifacts:

  ingest           validate records against a schema, print a summary
  mine             records + schema -> bug-slice report JSON
  plan             records + slice + token map -> jobs JSONL
  generate         jobs JSONL + endpoint -> generation responses JSONL
  filter           jobs + generations + endpoint -> verdicts JSONL + ledger JSON
  augment          records + jobs + verdicts -> manifest JSONL (+ retrain stub)
  report           before/after records -> repair report JSON
  metrics          FVEC feature files -> generation-quality metrics JSON
  simulate         population spec -> records/schema/ground-truth/surrogate
  simulate-repair  records + manifest + surrogate -> post-repair records
  mock-backend     scripted deterministic backend server (tcp or http)

A JSON config file (--config) supplies defaults for any flag of the
same name; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import FORMAT_VERSION, WIRE_VERSION, __version__
from .augment import (
    augmented_train_fraction,
    build_manifest,
    make_retrain_stub,
    read_manifest,
    repair_report,
    write_manifest,
)
from .client import (
    Limits,
    filter_batch,
    filter_requests_for,
    generate_batch,
)
from .errors import SlicemendError
from .filtering import build_questions, decide
from .metrics import FeatureSet, metrics_report, read_fvec
from .mining import mine_bug_slices
from .mocks import MockBackend, MockHttpServer, MockTcpServer
from .planning import (
    GenerationJob,
    PlanConfig,
    load_token_map,
    plan as plan_jobs,
    read_jobs,
    write_jobs,
)
from .protocol import FilterOutcome, GenerationResponse
from .records import (
    dump_schema,
    emit_records,
    ingest_records,
    ingest_records_lenient,
    load_schema,
    overall_accuracy,
)
from .simulate import (
    SurrogateModel,
    calibrate_surrogate,
    ground_truth_json,
    load_population_spec,
    simulate_repair,
    synthesize_population,
)
from .slices import MinerConfig, Slice


def _load_config(path):
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise SlicemendError(
            f"config format_version {doc.get('format_version')!r} unsupported; "
            f"this build reads version {FORMAT_VERSION}"
        )
    return doc


def _cfg(args, key, default=None):
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    return args._config.get(key, default)


def _require(args, key):
    value = _cfg(args, key)
    if value is None:
        raise SlicemendError(f"missing required setting --{key} (flag or config)")
    return value


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _miner_config(args) -> MinerConfig:
    return MinerConfig(
        rho=float(_cfg(args, "rho", 0.05)),
        epsilon=float(_cfg(args, "epsilon", 0.01)),
        max_depth=int(_cfg(args, "max-depth", 3)),
        min_val_support=int(_cfg(args, "min-val-support", 20)),
        rarity_split=_cfg(args, "rarity-split", "train"),
        top_k=int(_cfg(args, "top-k", 50)),
        min_train_prune=int(_cfg(args, "min-train-prune", 5)),
    )


def _limits(args) -> Limits:
    return Limits(
        max_in_flight=int(_cfg(args, "max-in-flight", 4)),
        timeout=float(_cfg(args, "timeout-ms", 30000)) / 1000.0,
        retries=int(_cfg(args, "retries", 2)),
    )


def _load_dataset(args, records_key="records", schema_key="schema"):
    schema = load_schema(_require(args, schema_key))
    return ingest_records(_require(args, records_key), schema), schema


# -- subcommand implementations ---------------------------------------


def cmd_ingest(args):
    schema = load_schema(_require(args, "schema"))
    if args.lenient:
        ds, rejects = ingest_records_lenient(_require(args, "records"), schema)
        for line_no, reason in rejects:
            print(f"rejected line {line_no}: {reason}", file=sys.stderr)
    else:
        ds = ingest_records(_require(args, "records"), schema)
        rejects = []
    summary = {
        "format_version": FORMAT_VERSION,
        "kind": "ingest_summary",
        "records": len(ds),
        "train": ds.split_size("train"),
        "val": ds.split_size("val"),
        "rejected": len(rejects),
        "overall_val_accuracy": overall_accuracy(ds, "val") if ds.split_size("val") else None,
    }
    if args.out:
        _write_json(args.out, summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_mine(args):
    ds, _schema = _load_dataset(args)
    cfg = _miner_config(args)
    report = mine_bug_slices(ds, cfg, workers=int(_cfg(args, "workers", 1)))
    doc = report.to_json()
    out = _cfg(args, "out")
    if out:
        _write_json(out, doc)
    print(
        f"mined {report.enumerated} candidates: {len(report.bugs)} bug slices, "
        f"{report.inconclusive_total} inconclusive "
        f"(overall val accuracy {report.overall_val_accuracy:.4f})"
    )
    for stats in report.bugs:
        print(
            f"  {stats.slice.key}: val_acc={stats.val_accuracy:.4f} "
            f"gap={stats.accuracy_gap:+.4f} train_frac={stats.train_fraction:.5f} "
            f"val_support={stats.val_support}"
        )
    return 0


def cmd_plan(args):
    ds, _schema = _load_dataset(args)
    slc = Slice.parse(_require(args, "slice"))
    cfg = PlanConfig(
        target_count=int(_require(args, "target-count")),
        token_map=load_token_map(_require(args, "token-map")),
        prompt_template=_require(args, "template"),
        overgen_factor=float(_cfg(args, "overgen", 1.43)),
        source_selection_seed=int(_cfg(args, "seed", 0)),
    )
    jobs = plan_jobs(ds, slc, cfg)
    write_jobs(
        jobs,
        _require(args, "out"),
        meta={
            "slice": slc.key,
            "seed": cfg.source_selection_seed,
            "target_count": cfg.target_count,
            "overgen_factor": cfg.overgen_factor,
        },
    )
    print(f"planned {len(jobs)} jobs for slice {slc.key} -> {_cfg(args, 'out')}")
    return 0


def _endpoint(args):
    endpoint = _require(args, "endpoint")
    if endpoint.startswith("mock://script="):
        # In-process mock: no server required; used for offline runs.
        return MockBackend(endpoint.removeprefix("mock://script="))
    return endpoint


def cmd_generate(args):
    jobs, _header = read_jobs(_require(args, "jobs"))
    responses = generate_batch(jobs, _endpoint(args), _limits(args))
    out = Path(_require(args, "out"))
    with out.open("w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"format_version": FORMAT_VERSION, "kind": "generations"}, sort_keys=True)
            + "\n"
        )
        for resp in responses:
            fh.write(json.dumps(resp.to_json(), sort_keys=True) + "\n")
    failed = sum(1 for r in responses if not r.ok)
    print(f"generated {len(responses) - failed}/{len(responses)} jobs ({failed} failed) -> {out}")
    return 0


def _read_generations(path) -> list[GenerationResponse]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "generations":
            raise SlicemendError(f"{path}: not a generations file")
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                out.append(
                    GenerationResponse(
                        job_id=doc["job_id"],
                        status=doc["status"],
                        generated_ref=doc["generated_ref"],
                        backend_meta=dict(doc["backend_meta"]),
                    )
                )
    return out


def cmd_filter(args):
    jobs, _header = read_jobs(_require(args, "jobs"))
    generations = _read_generations(_require(args, "generations"))
    schema = load_schema(_require(args, "schema"))
    task = _cfg(args, "task", "object")
    question_sets = [build_questions(job.spec, schema, task) for job in jobs]
    requests = filter_requests_for(jobs, generations, question_sets)
    outcomes = filter_batch(requests, _endpoint(args), _limits(args))
    filtered_ids = {r.job_id for r in requests}
    filtered_jobs = [j for j in jobs if j.job_id in filtered_ids]
    verdicts, ledger = decide(outcomes, filtered_jobs)
    verdicts_out = Path(_require(args, "verdicts-out"))
    with verdicts_out.open("w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"format_version": FORMAT_VERSION, "kind": "verdicts"}, sort_keys=True)
            + "\n"
        )
        for verdict in verdicts:
            fh.write(json.dumps(verdict.to_json(), sort_keys=True) + "\n")
    _write_json(_require(args, "ledger-out"), ledger.to_json())
    print(
        f"filtered {ledger.decided} decided: kept {ledger.kept} "
        f"(keep rate {ledger.keep_fraction:.3f} over decided), "
        f"{ledger.needs_review} needs review"
    )
    return 0


def _read_verdicts(path):
    from .filtering import FilterVerdict

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "verdicts":
            raise SlicemendError(f"{path}: not a verdicts file")
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                out.append(
                    FilterVerdict(
                        job_id=doc["job_id"],
                        generated_ref=doc["generated_ref"],
                        per_question=tuple(bool(x) for x in doc["per_question"])
                        if doc["per_question"] is not None
                        else None,
                        decision=doc["decision"],
                        reasons=tuple(doc["reasons"]),
                    )
                )
    return out


def cmd_augment(args):
    ds, _schema = _load_dataset(args)
    jobs, _header = read_jobs(_require(args, "jobs"))
    verdicts = _read_verdicts(_require(args, "verdicts"))
    manifest = build_manifest(
        ds,
        verdicts,
        jobs,
        target_count=int(_require(args, "target-count")),
        base_dataset_ref=str(_require(args, "records")),
    )
    out = _require(args, "out")
    write_manifest(manifest, out)
    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    stub_out = _cfg(args, "retrain-stub-out")
    if stub_out:
        _write_json(stub_out, make_retrain_stub(str(out), str(_require(args, "records"))))
    for key in sorted(manifest.counts_per_slice()):
        slc = Slice.parse(key)
        frac = augmented_train_fraction(manifest, ds, slc)
        print(f"  {key}: +{manifest.counts_per_slice()[key]} -> train fraction {frac:.5f}")
    print(f"manifest with {len(manifest.entries)} entries -> {out}")
    return 0


def cmd_report(args):
    schema = load_schema(_require(args, "schema"))
    before = ingest_records(_require(args, "before"), schema)
    after = ingest_records(_require(args, "after"), schema)
    slices = [Slice.parse(k) for k in str(_require(args, "slices")).split(";") if k.strip()]
    ledger_summary = None
    ledger_path = _cfg(args, "ledger")
    if ledger_path:
        with open(ledger_path, "r", encoding="utf-8") as fh:
            ledger_summary = json.load(fh)
    report = repair_report(before, after, slices, _miner_config(args), ledger_summary)
    doc = report.to_json()
    out = _cfg(args, "out")
    if out:
        _write_json(out, doc)
    print(
        f"overall val accuracy {report.overall_before:.4f} -> {report.overall_after:.4f}; "
        f"bug count {report.bug_count_before} -> {report.bug_count_after}"
    )
    for row in report.per_slice:
        delta = f"{row['delta']:+.4f}" if row["delta"] is not None else "n/a"
        print(f"  {row['slice']}: {row['acc_before']:.4f} -> {row['acc_after']:.4f} ({delta})")
    return 0


def cmd_metrics(args):
    real = FeatureSet(read_fvec(_require(args, "real")), source_tag="real")
    generated = FeatureSet(read_fvec(_require(args, "generated")), source_tag="generated")
    distances_path = _cfg(args, "distances")
    distances = read_fvec(distances_path) if distances_path else None
    pairs = None
    if _cfg(args, "pairs-a") and _cfg(args, "pairs-b"):
        ua = read_fvec(_cfg(args, "pairs-a"))
        vb = read_fvec(_cfg(args, "pairs-b"))
        if ua.shape != vb.shape:
            raise SlicemendError("pairs-a and pairs-b must have matching shapes")
        pairs = list(zip(ua, vb))
    doc = metrics_report(real, generated, distances=distances, pairs=pairs)
    out = _cfg(args, "out")
    if out:
        _write_json(out, doc)
    print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_simulate(args):
    spec = load_population_spec(_require(args, "spec"))
    out_dir = Path(_require(args, "out-dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = synthesize_population(spec)
    emit_records(ds, out_dir / "records.jsonl")
    dump_schema(spec.schema, out_dir / "schema.json")
    _write_json(out_dir / "ground_truth.json", ground_truth_json(spec, ds))
    model = calibrate_surrogate(spec, ds)
    _write_json(out_dir / "surrogate.json", model.to_json())
    print(
        f"population: {ds.split_size('train')} train / {ds.split_size('val')} val, "
        f"{len(spec.injected_bugs)} injected bugs -> {out_dir}"
    )
    return 0


def cmd_simulate_repair(args):
    ds, _schema = _load_dataset(args)
    manifest = read_manifest(_require(args, "manifest"))
    with open(_require(args, "surrogate"), "r", encoding="utf-8") as fh:
        model = SurrogateModel.from_json(json.load(fh))
    after = simulate_repair(ds, manifest, model)
    emit_records(after, _require(args, "out"))
    print(
        f"repair simulated with {len(manifest.entries)} synthetic records -> "
        f"{_cfg(args, 'out')}"
    )
    return 0


def cmd_mock_backend(args):
    backend = MockBackend(_require(args, "script"), kind=_cfg(args, "kind", "both"))
    binding = _cfg(args, "bind", "tcp")
    host = _cfg(args, "host", "127.0.0.1")
    port = int(_cfg(args, "port", 0))
    server_cls = MockTcpServer if binding == "tcp" else MockHttpServer
    server = server_cls(backend, host=host, port=port)
    print(server.endpoint, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# -- parser ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    formats = """\
file formats (all version "1"):
  schema.json     {"format_version", "attributes": [{name, values,
                  prompt_template (#1 value slot, optional #LABEL),
                  question_template}]}; value "unknown" is reserved
  records.jsonl   header {"format_version": "1"}, then per line:
                  image_id, split (train|val), label, prediction,
                  attributes (string map), source_ref
  jobs.jsonl      header + per line: job_id, source_image_id, source_ref,
                  label, slice, substitutions [[attr, old, new]...],
                  prompt, positive_prompt, negative_prompt,
                  condition_kind, inference_steps, seed
  map.json        {"format_version", "tokens": {"attr=value": phrase or
                  {"phrase", "connector"}}}; phrases join in map order
  *.fvec          little-endian: magic "FVEC1", u32 N, u32 D, N*D float32

wire schema v1 (tcp: 4-byte big-endian length + canonical JSON frames;
http: POST /v1/message): hello_request/hello_response{capabilities},
generation_request{job_id, source_ref, prompt, positive_prompt,
negative_prompt, condition_kind, inference_steps, seed},
generation_response{job_id, status ok|failed, generated_ref,
backend_meta}, filter_request{job_id, generated_ref, questions,
instruction}, filter_response{job_id, raw_answer: strict "1 0 ..."},
error{code transient|bad_request|unsupported, message, job_id}.
"""
    parser = argparse.ArgumentParser(
        prog="slicemend",
        description=__doc__,
        epilog=formats,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"slicemend {__version__} (file format {FORMAT_VERSION}, wire {WIRE_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, flags):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        for flag, kwargs in flags:
            p.add_argument(f"--{flag}", **kwargs)
        p.set_defaults(func=func)
        return p

    miner_flags = [
        ("rho", dict(type=float, default=None)),
        ("epsilon", dict(type=float, default=None)),
        ("max-depth", dict(type=int, default=None)),
        ("min-val-support", dict(type=int, default=None)),
        ("rarity-split", dict(choices=["train", "val"], default=None)),
        ("top-k", dict(type=int, default=None)),
        ("min-train-prune", dict(type=int, default=None)),
    ]
    limit_flags = [
        ("endpoint", dict(default=None)),
        ("max-in-flight", dict(type=int, default=None)),
        ("timeout-ms", dict(type=int, default=None)),
        ("retries", dict(type=int, default=None)),
    ]

    p = add("ingest", cmd_ingest, [("records", {}), ("schema", {}), ("out", dict(default=None))])
    p.add_argument("--lenient", action="store_true")

    add("mine", cmd_mine, [
        ("records", {}), ("schema", {}), ("out", dict(default=None)),
        ("workers", dict(type=int, default=None)),
    ] + miner_flags)

    add("plan", cmd_plan, [
        ("records", {}), ("schema", {}), ("slice", {}),
        ("target-count", dict(type=int)), ("overgen", dict(type=float, default=None)),
        ("seed", dict(type=int, default=None)), ("token-map", {}),
        ("template", {}), ("out", {}),
    ])

    add("generate", cmd_generate, [("jobs", {}), ("out", {})] + limit_flags)

    add("filter", cmd_filter, [
        ("jobs", {}), ("generations", {}), ("schema", {}),
        ("task", dict(choices=["object", "face"], default=None)),
        ("ledger-out", {}), ("verdicts-out", {}),
    ] + limit_flags)

    add("augment", cmd_augment, [
        ("records", {}), ("schema", {}), ("jobs", {}), ("verdicts", {}),
        ("target-count", dict(type=int)), ("out", {}),
        ("retrain-stub-out", dict(default=None)),
    ])

    add("report", cmd_report, [
        ("before", {}), ("after", {}), ("schema", {}), ("slices", {}),
        ("ledger", dict(default=None)), ("out", dict(default=None)),
    ] + miner_flags)

    add("metrics", cmd_metrics, [
        ("real", {}), ("generated", {}), ("distances", dict(default=None)),
        ("pairs-a", dict(default=None)), ("pairs-b", dict(default=None)),
        ("out", dict(default=None)),
    ])

    add("simulate", cmd_simulate, [("spec", {}), ("out-dir", {})])

    add("simulate-repair", cmd_simulate_repair, [
        ("records", {}), ("schema", {}), ("manifest", {}),
        ("surrogate", {}), ("out", {}),
    ])

    add("mock-backend", cmd_mock_backend, [
        ("script", {}), ("kind", dict(choices=["both", "generation", "filter"], default=None)),
        ("bind", dict(choices=["tcp", "http"], default=None)),
        ("host", dict(default=None)), ("port", dict(type=int, default=None)),
    ])

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._config = _load_config(args.config)
        return args.func(args)
    except (SlicemendError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
