import json
from pathlib import Path

import pytest

from slicemend.cli import main
from slicemend.mocks import MockBackend, MockTcpServer, start_server
from slicemend.planning import TokenPhrase, dump_token_map
from slicemend.records import ingest_records, load_schema
from slicemend.simulate import InjectedBug, PopulationSpec, default_schema
from slicemend.slices import Slice


def write_spec(path, seed=17):
    spec = PopulationSpec(
        schema=default_schema(),
        n_train=3000,
        n_val=3000,
        labels=("backpack", "coffee mug"),
        injected_bugs=[InjectedBug(Slice.parse("color=pink"), 0.03, 0.45)],
        base_error_rate=0.10,
        seed=seed,
    )
    path.write_text(json.dumps(spec.to_json()))
    return spec


def write_script(path, seed=23):
    script = {
        "format_version": "1",
        "seed": seed,
        "generation": {
            "phrase_map": {"pink": ["color", "pink"]},
            "edit_pass_rates": {"default": 0.9},
        },
        "filter": {"label_pass": 0.98},
    }
    path.write_text(json.dumps(script))
    return script


@pytest.fixture
def sim_dir(tmp_path):
    spec_path = tmp_path / "spec.json"
    write_spec(spec_path)
    out_dir = tmp_path / "sim"
    assert main(["simulate", "--spec", str(spec_path), "--out-dir", str(out_dir)]) == 0
    return out_dir


class TestExitCodes:
    def test_usage_error_is_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["mine", "--no-such-flag"])
        assert exc.value.code == 2

    def test_domain_error_is_1(self, tmp_path, capsys):
        missing = tmp_path / "nope.jsonl"
        schema_path = tmp_path / "schema.json"
        schema_path.write_text(json.dumps(default_schema().to_json()))
        code = main([
            "mine", "--records", str(missing), "--schema", str(schema_path),
        ])
        assert code == 1

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "slicemend" in out and "wire 1" in out


class TestSimulateAndMine:
    def test_simulate_emits_artifacts(self, sim_dir):
        for name in ("records.jsonl", "schema.json", "ground_truth.json", "surrogate.json"):
            assert (sim_dir / name).exists()
        schema = load_schema(sim_dir / "schema.json")
        ds = ingest_records(sim_dir / "records.jsonl", schema)
        assert ds.split_size("train") == 3000

    def test_mine_finds_injected_bug(self, sim_dir, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = main([
            "mine",
            "--records", str(sim_dir / "records.jsonl"),
            "--schema", str(sim_dir / "schema.json"),
            "--rho", "0.05", "--epsilon", "0.05", "--max-depth", "1",
            "--out", str(out),
        ])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["format_version"] == "1"
        assert [b["slice"] for b in doc["bugs"]] == ["color=pink"]

    def test_rerun_is_byte_identical(self, sim_dir, tmp_path):
        out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
        argv = [
            "mine",
            "--records", str(sim_dir / "records.jsonl"),
            "--schema", str(sim_dir / "schema.json"),
            "--rho", "0.05", "--epsilon", "0.05",
        ]
        assert main(argv + ["--out", str(out1)]) == 0
        assert main(argv + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_ingest_summary(self, sim_dir, capsys):
        code = main([
            "ingest",
            "--records", str(sim_dir / "records.jsonl"),
            "--schema", str(sim_dir / "schema.json"),
        ])
        assert code == 0
        doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert doc["records"] == 6000


class TestFullChain:
    def test_pipeline_over_tcp_mock(self, sim_dir, tmp_path, capsys):
        records = sim_dir / "records.jsonl"
        schema_path = sim_dir / "schema.json"
        token_map_path = tmp_path / "map.json"
        dump_token_map({("color", "pink"): TokenPhrase("pink")}, token_map_path)

        script_path = tmp_path / "script.json"
        write_script(script_path)
        backend = MockBackend(json.loads(script_path.read_text()))
        server = MockTcpServer(backend)
        start_server(server)
        try:
            jobs_path = tmp_path / "jobs.jsonl"
            assert main([
                "plan",
                "--records", str(records), "--schema", str(schema_path),
                "--slice", "color=pink", "--target-count", "150",
                "--overgen", "1.43", "--seed", "5",
                "--token-map", str(token_map_path),
                "--template", "A photo of a #1 #LABEL.",
                "--out", str(jobs_path),
            ]) == 0

            gen_path = tmp_path / "gen.jsonl"
            assert main([
                "generate", "--jobs", str(jobs_path),
                "--endpoint", server.endpoint, "--max-in-flight", "8",
                "--out", str(gen_path),
            ]) == 0

            verdicts_path = tmp_path / "verdicts.jsonl"
            ledger_path = tmp_path / "ledger.json"
            assert main([
                "filter", "--jobs", str(jobs_path), "--generations", str(gen_path),
                "--schema", str(schema_path), "--task", "object",
                "--endpoint", server.endpoint,
                "--verdicts-out", str(verdicts_path), "--ledger-out", str(ledger_path),
            ]) == 0
            ledger = json.loads(ledger_path.read_text())
            assert ledger["decided"] == 215  # ceil(150 * 1.43)
            assert ledger["kept"] >= 150

            manifest_path = tmp_path / "manifest.jsonl"
            stub_path = tmp_path / "retrain.json"
            assert main([
                "augment", "--records", str(records), "--schema", str(schema_path),
                "--jobs", str(jobs_path), "--verdicts", str(verdicts_path),
                "--target-count", "150", "--out", str(manifest_path),
                "--retrain-stub-out", str(stub_path),
            ]) == 0
            stub = json.loads(stub_path.read_text())
            assert stub["epochs"] == 20 and stub["batch_size"] == 64

            after_path = tmp_path / "after.jsonl"
            assert main([
                "simulate-repair", "--records", str(records),
                "--schema", str(schema_path), "--manifest", str(manifest_path),
                "--surrogate", str(sim_dir / "surrogate.json"),
                "--out", str(after_path),
            ]) == 0

            report_path = tmp_path / "repair.json"
            assert main([
                "report", "--before", str(records), "--after", str(after_path),
                "--schema", str(schema_path), "--slices", "color=pink",
                "--rho", "0.05", "--epsilon", "0.05", "--max-depth", "1",
                "--ledger", str(ledger_path),
                "--out", str(report_path),
            ]) == 0
            report = json.loads(report_path.read_text())
            assert report["bug_count_before"] >= 1
            assert report["bug_count_after"] < report["bug_count_before"]
            row = report["per_slice"][0]
            assert row["acc_after"] > row["acc_before"]
            assert report["ledger_summary"]["decided"] == 215
        finally:
            server.shutdown()
            server.server_close()


class TestMetricsCli:
    def test_metrics_from_fvec_files(self, tmp_path, capsys):
        import numpy as np

        from slicemend.metrics import write_fvec

        rng = np.random.default_rng(0)
        real = tmp_path / "real.fvec"
        gen = tmp_path / "gen.fvec"
        write_fvec(real, rng.normal(size=(64, 8)).astype(np.float32))
        write_fvec(gen, rng.normal(0.1, 1.0, size=(64, 8)).astype(np.float32))
        out = tmp_path / "metrics.json"
        code = main([
            "metrics", "--real", str(real), "--generated", str(gen),
            "--out", str(out),
        ])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["frechet_distance"] >= 0
        assert doc["metadata"]["kl_estimator"] == "gaussian_closed_form"


class TestConfigFile:
    def test_flags_override_config(self, sim_dir, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "records": str(sim_dir / "records.jsonl"),
            "schema": str(sim_dir / "schema.json"),
            "rho": 0.05, "epsilon": 0.2, "max-depth": 1,
        }))
        out = tmp_path / "r.json"
        # Config epsilon 0.2 is absurd; the flag brings it back down.
        assert main(["mine", "--config", str(config), "--epsilon", "0.05",
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["epsilon"] == 0.05
        assert doc["config"]["max_depth"] == 1


class TestMockBackendCommand:
    def test_server_subprocess_serves_wire_traffic(self, tmp_path):
        import socket
        import subprocess
        import sys
        import time as time_mod

        from slicemend.protocol import decode_message, encode_message, read_frame, write_frame

        script_path = tmp_path / "script.json"
        write_script(script_path)
        proc = subprocess.Popen(
            [sys.executable, "-m", "slicemend.cli", "mock-backend",
             "--script", str(script_path), "--bind", "tcp"],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
        )
        try:
            endpoint = proc.stdout.readline().strip()
            assert endpoint.startswith("tcp://")
            host, port = endpoint.removeprefix("tcp://").rsplit(":", 1)
            deadline = time_mod.time() + 10
            with socket.create_connection((host, int(port)), timeout=10) as sock:
                stream = sock.makefile("rwb")
                write_frame(stream, encode_message({"type": "hello_request"}))
                reply = decode_message(read_frame(stream))
                assert reply["type"] == "hello_response"
                assert reply["capabilities"]["backend"] == "scripted-mock"
        finally:
            proc.terminate()
            proc.wait(timeout=10)
