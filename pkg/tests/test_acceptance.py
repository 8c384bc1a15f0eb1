"""Acceptance suite: one test per criterion, each timed against its
budget and printing a PASS line (run with -s or -v to see them).

Paper-scale model training is out of reach here, so acceptance rests on
exact-arithmetic fixtures, independent-oracle equivalence, and seeded
simulator properties, per the project contract.
"""

import json
import struct
import time
from pathlib import Path

import numpy as np
import pytest

from slicemend.augment import AugmentationManifest, build_manifest, repair_report
from slicemend.client import (
    Limits,
    filter_batch,
    filter_requests_for,
    generate_batch,
)
from slicemend.filtering import build_questions, decide
from slicemend.metrics import FeatureSet, frechet_distance, gaussian_kl
from slicemend.mining import mine_bug_slices
from slicemend.mocks import MockBackend
from slicemend.planning import (
    EditSpec,
    GenerationJob,
    PlanConfig,
    PromptPayload,
    TokenPhrase,
    plan,
)
from slicemend.protocol import encode_message
from slicemend.records import Attribute, AttributeSchema, Dataset, PredictionRecord
from slicemend.simulate import (
    InjectedBug,
    PopulationSpec,
    calibrate_surrogate,
    default_schema,
    scripted_backends,
    simulate_repair,
    synthesize_population,
)
from slicemend.slices import MinerConfig, Slice

from conftest import make_schema
from oracle import mine_oracle

DATA = Path(__file__).parent / "data"


class _Budget:
    def __init__(self, name, seconds):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            assert elapsed < self.seconds, (
                f"{self.name}: {elapsed:.2f}s exceeded the {self.seconds:.0f}s budget"
            )
            print(f"\nACCEPTANCE PASS [{self.name}] ({elapsed:.2f}s < {self.seconds:.0f}s)")
        else:
            print(f"\nACCEPTANCE FAIL [{self.name}]")
        return False


# -- criterion 1: Appendix D threshold fixture -------------------------

HAIR_VALUES = ("red", "black", "brown", "blonde", "gray", "yellow", "white")


def appendix_d_dataset() -> Dataset:
    """80,000 train records with 2,484 red-hair; 20,000 val records where
    the red-hair slice scores 8,901/10,000 and overall is 18,136/20,000."""
    schema = AttributeSchema(
        attributes=(
            Attribute(
                "hair", HAIR_VALUES,
                "a person with #1 hair", "What hair color does the person have?",
            ),
        )
    )
    others = [h for h in HAIR_VALUES if h != "red"]
    records = []
    for i in range(80000):
        hair = "red" if i < 2484 else others[i % 6]
        records.append(
            PredictionRecord(f"train-{i:06d}", "train", "y", "y", {"hair": hair}, "")
        )
    for i in range(20000):
        red = i < 10000
        correct = (i < 8901) if red else (i < 10000 + 9235)
        records.append(
            PredictionRecord(
                f"val-{i:06d}", "val", "y", "y" if correct else "n",
                {"hair": "red" if red else others[i % 6]}, "",
            )
        )
    return Dataset(schema, records)


def test_appendix_d_threshold_fixture():
    with _Budget("appendix-d threshold fixture", 1.0):
        ds = appendix_d_dataset()

        def bug_keys(epsilon):
            cfg = MinerConfig(rho=0.05, epsilon=epsilon, max_depth=1, min_val_support=20)
            return [s.slice.key for s in mine_bug_slices(ds, cfg).bugs]

        flagged = bug_keys(0.01)
        assert flagged == ["hair=red"], flagged

        stats = next(
            s for s in mine_bug_slices(
                ds, MinerConfig(rho=0.05, epsilon=0.01, max_depth=1)
            ).bugs
        )
        assert stats.train_support == 2484
        assert stats.train_fraction == 2484 / 80000
        assert stats.val_accuracy == 0.8901
        assert stats.overall_val_accuracy == 0.9068

        # Boundary: 0.9068 - 0.0167 = 0.8901 exactly; strict < -> no flag.
        assert bug_keys(0.0167) == []
        assert bug_keys(0.02) == []


# -- criterion 2: miner oracle equivalence over 50 seeded datasets ------


def _random_dataset_and_config(seed):
    import random

    rng = random.Random(seed)
    n_attrs = rng.randint(3, 6)
    spec = {f"a{i}": [f"v{j}" for j in range(rng.randint(2, 4))] for i in range(n_attrs)}
    schema = make_schema(spec)
    weights = {}
    for name, values in spec.items():
        w = [rng.uniform(0.5, 1.0) for _ in values]
        w[rng.randrange(len(values))] = rng.uniform(0.02, 0.12)
        total = sum(w)
        weights[name] = [x / total for x in w]
    pockets = {}
    for _ in range(rng.randint(1, 3)):
        name = rng.choice(list(spec))
        pockets[(name, rng.choice(spec[name]))] = rng.uniform(0.3, 0.6)
    rows = []
    for split in ("train", "val"):
        for _ in range(rng.randint(150, 400)):
            attrs = {}
            for name, values in spec.items():
                if rng.random() < 0.03:
                    attrs[name] = "unknown"
                else:
                    attrs[name] = rng.choices(values, weights=weights[name])[0]
            err = 0.08
            for (pname, pvalue), rate in pockets.items():
                if attrs.get(pname) == pvalue:
                    err = max(err, rate)
            rows.append(
                PredictionRecord(
                    f"{split}-{len(rows):05d}", split, "y",
                    "y" if rng.random() >= err else "n", attrs, "",
                )
            )
    cfg = MinerConfig(
        rho=rng.choice([0.1, 0.2, 0.3]),
        epsilon=rng.choice([0.0, 0.02, 0.05]),
        max_depth=2,
        min_val_support=rng.choice([3, 5, 8]),
        rarity_split=rng.choice(["train", "val"]),
        top_k=10,
        min_train_prune=rng.choice([0, 5]),
    )
    return schema, Dataset(schema, rows), cfg


def test_miner_oracle_equivalence_50_datasets():
    with _Budget("miner oracle equivalence (50 datasets)", 30.0):
        for seed in range(50):
            schema, ds, cfg = _random_dataset_and_config(seed)
            report = mine_bug_slices(ds, cfg)
            engine = [
                (s.slice.key, s.train_support, s.val_support, s.val_correct)
                for s in report.bugs
            ]
            expected = mine_oracle(
                records=[(r.split, r.correct, r.attributes) for r in ds.records],
                attr_values={a.name: list(a.values) for a in schema.attributes},
                rho=cfg.rho,
                epsilon=cfg.epsilon,
                max_depth=cfg.max_depth,
                min_val_support=cfg.min_val_support,
                rarity_split=cfg.rarity_split,
                top_k=cfg.top_k,
                min_train_prune=cfg.min_train_prune,
            )
            assert engine == expected, f"seed {seed}: {engine} != {expected}"


# -- criterion 3: end-to-end simulator across 20 seeds ------------------

E2E_INJECTED = (
    ("color=pink", 0.025, 0.45),
    ("background=rocks", 0.02, 0.40),
    ("texture=fabric", 0.03, 0.42),
)
E2E_TOKENS = {
    ("color", "pink"): TokenPhrase("pink"),
    ("background", "rocks"): TokenPhrase("rocks"),
    ("texture", "fabric"): TokenPhrase("fabric"),
}
E2E_CFG = MinerConfig(rho=0.05, epsilon=0.07, max_depth=1, min_val_support=20)


def _e2e_one_seed(seed):
    spec = PopulationSpec(
        schema=default_schema(),
        n_train=5000,
        n_val=3000,
        labels=("backpack", "coffee mug"),
        injected_bugs=[InjectedBug(Slice.parse(k), f, e) for k, f, e in E2E_INJECTED],
        base_error_rate=0.10,
        surrogate_scale=0.02,
        seed=seed,
    )
    ds = synthesize_population(spec)
    before = mine_bug_slices(ds, E2E_CFG)
    flagged = {s.slice.key for s in before.bugs}
    injected = {k for k, _f, _e in E2E_INJECTED}
    assert flagged == injected, f"seed {seed}: precision/recall broken: {flagged}"

    script = {
        "format_version": "1",
        "seed": seed * 7 + 1,
        "generation": {
            "phrase_map": {
                "pink": ["color", "pink"],
                "rocks": ["background", "rocks"],
                "fabric": ["texture", "fabric"],
            },
            "edit_pass_rates": {"default": 0.9},
        },
        "filter": {"label_pass": 0.98},
    }
    gen_mock, filter_mock = scripted_backends(script)
    entries = []
    for key in sorted(injected):
        slc = Slice.parse(key)
        cfg = PlanConfig(
            target_count=300,
            token_map=E2E_TOKENS,
            prompt_template="A photo of a #1 #LABEL.",
            overgen_factor=1.43,
            source_selection_seed=seed,
        )
        jobs = plan(ds, slc, cfg)
        responses = generate_batch(jobs, gen_mock, Limits(max_in_flight=8))
        question_sets = [build_questions(j.spec, spec.schema, "object") for j in jobs]
        requests = filter_requests_for(jobs, responses, question_sets)
        outcomes = filter_batch(requests, filter_mock, Limits(max_in_flight=8))
        verdicts, _ledger = decide(outcomes, jobs)
        manifest = build_manifest(ds, verdicts, jobs, 300)
        assert not manifest.shortfall, f"seed {seed}: shortfall on {key}"
        entries.extend(manifest.entries)

    merged = AugmentationManifest(base_dataset_ref="", target_count=len(entries))
    merged.entries = entries
    model = calibrate_surrogate(spec, ds)
    after_ds = simulate_repair(ds, merged, model)
    after = mine_bug_slices(after_ds, E2E_CFG)
    after_keys = {s.slice.key for s in after.bugs}
    assert len(after.bugs) < len(before.bugs), f"seed {seed}: no strict decrease"
    assert after_keys <= flagged, f"seed {seed}: new bugs {after_keys - flagged}"


def test_end_to_end_simulator_20_seeds():
    with _Budget("end-to-end simulator (20 seeds)", 120.0):
        for seed in range(1000, 1020):
            _e2e_one_seed(seed)


# -- criterion 4: filter accounting over 10,000 jobs --------------------


def test_filter_accounting_10k_jobs():
    with _Budget("filter accounting (10k jobs)", 30.0):
        schema = make_schema({"hair": ["red", "black"], "emotion": ["sad", "happy"]})
        slc = Slice.parse("emotion=sad,hair=red")
        jobs = []
        for i in range(10000):
            spec = EditSpec(
                source_image_id=f"train-{i:06d}",
                substitutions=(("emotion", "happy", "sad"), ("hair", "black", "red")),
                preserved_label="wearing lipstick",
                target_slice=slc,
            )
            jobs.append(
                GenerationJob(
                    job_id=f"job-{i:06d}",
                    spec=spec,
                    prompt=PromptPayload(
                        prompt="a person with vibrant red hair, in sad emotion"
                    ),
                    source_ref="s.png",
                    seed=i,
                )
            )
        script = {
            "format_version": "1",
            "seed": 77,
            "generation": {
                "phrase_map": {
                    "vibrant red hair": ["hair", "red"],
                    "sad emotion": ["emotion", "sad"],
                },
                "edit_pass_rates": {"emotion": 0.80, "hair": 0.95, "default": 0.95},
            },
            "filter": {"label_pass": 0.98},
        }
        gen_mock, filter_mock = scripted_backends(script)
        responses = generate_batch(jobs, gen_mock, Limits(max_in_flight=16))
        question_sets = [build_questions(j.spec, schema, "face") for j in jobs]
        requests = filter_requests_for(jobs, responses, question_sets)
        outcomes = filter_batch(requests, filter_mock, Limits(max_in_flight=16))
        _verdicts, ledger = decide(outcomes, jobs)

        assert ledger.decided == 10000
        assert abs(ledger.pass_rate("emotion", "sad") - 0.80) <= 0.02
        assert abs(ledger.pass_rate("hair", "red") - 0.95) <= 0.02
        assert abs(ledger.label_pass_rate - 0.98) <= 0.02
        assert 0.70 <= ledger.keep_fraction <= 0.80


# -- criterion 5: metrics kernels ---------------------------------------


def test_metrics_kernels():
    with _Budget("metrics kernels", 10.0):
        rng = np.random.default_rng(0)
        a = FeatureSet(rng.normal(size=(256, 16)))
        assert frechet_distance(a, a) <= 1e-9

        h1 = np.sqrt(1.0 / 2.0)
        h2 = np.sqrt(4.0 / 2.0)
        one_a = FeatureSet(np.array([[-h1], [h1]]))
        one_b = FeatureSet(np.array([[3.0 - h2], [3.0 + h2]]))
        assert abs(frechet_distance(one_a, one_b) - 10.0) <= 1e-9

        kl_a = FeatureSet(np.array([[-h1], [h1]]))
        kl_b = FeatureSet(np.array([[1.0 - h1], [1.0 + h1]]))
        assert abs(gaussian_kl(kl_a, kl_b) - 0.5) <= 1e-9

        b = FeatureSet(rng.normal(0.3, 1.0, size=(256, 16)))
        q, _ = np.linalg.qr(rng.normal(size=(16, 16)))
        base = frechet_distance(a, b)
        rotated = frechet_distance(
            FeatureSet(a.vectors @ q.T), FeatureSet(b.vectors @ q.T)
        )
        assert abs(base - rotated) <= 1e-6 * max(base, 1.0)


# -- criterion 6: wire golden files + ordering invariant ----------------

GOLDEN_NAMES = (
    "generation_request",
    "generation_response",
    "filter_request",
    "filter_response",
    "hello_request",
    "hello_response",
    "error",
)


def test_wire_golden_files_and_ordering():
    with _Budget("wire golden files + ordering invariant", 10.0):
        for name in GOLDEN_NAMES:
            framed = (DATA / f"{name}.bin").read_bytes()
            (length,) = struct.unpack(">I", framed[:4])
            body = framed[4:]
            assert len(body) == length, name
            assert encode_message(json.loads(body)) == body, name

        mock = MockBackend(
            {"format_version": "1", "seed": 9, "generation": {"delay_ms_max": 15},
             "filter": {}}
        )
        jobs = []
        for i in range(60):
            spec = EditSpec(
                source_image_id=f"t-{i}",
                substitutions=(("color", "blue", "pink"),),
                preserved_label="backpack",
                target_slice=Slice.parse("color=pink"),
            )
            jobs.append(
                GenerationJob(
                    job_id=f"job-{i:06d}", spec=spec,
                    prompt=PromptPayload(prompt="p"), source_ref="s.png", seed=i,
                )
            )
        for max_in_flight in (1, 4, 64):
            responses = generate_batch(jobs, mock, Limits(max_in_flight=max_in_flight))
            assert [r.job_id for r in responses] == [j.job_id for j in jobs], (
                f"order broken at max_in_flight={max_in_flight}"
            )


# -- criterion 7: Appendix E repair fixture ------------------------------


def appendix_e_pair():
    """Shared val ids; the red-hair slice (621 members) moves from
    559 to 568 correct answers while everything else stays fixed."""
    schema = make_schema({"hair": ["red", "black"]})

    def build(correct_in_slice):
        records = []
        for i in range(1000):
            records.append(
                PredictionRecord(
                    f"train-{i:05d}", "train", "y", "y",
                    {"hair": "red" if i < 30 else "black"}, "",
                )
            )
        for i in range(20000):
            red = i < 621
            correct = (i < correct_in_slice) if red else (i % 25 != 0)
            records.append(
                PredictionRecord(
                    f"val-{i:05d}", "val", "y", "y" if correct else "n",
                    {"hair": "red" if red else "black"}, "",
                )
            )
        return Dataset(schema, records)

    return build(559), build(568)


def test_appendix_e_repair_fixture():
    with _Budget("appendix-e repair fixture", 1.0):
        before, after = appendix_e_pair()
        report = repair_report(
            before, after, [Slice.parse("hair=red")],
            MinerConfig(rho=0.05, epsilon=0.01, max_depth=1, min_val_support=20),
        )
        row = report.per_slice[0]
        assert row["val_support"] == 621
        assert row["acc_before"] == 559 / 621
        assert row["acc_after"] == 568 / 621
        assert round(100 * row["acc_before"], 2) == 90.02
        assert round(100 * row["acc_after"], 2) == 91.47
        assert row["delta"] == 568 / 621 - 559 / 621

        # Fixed-validation contract: mismatched val ids must be refused.
        schema = before.schema
        clipped = Dataset(schema, [r for r in after.records if r.image_id != "val-00000"])
        with pytest.raises(Exception) as err:
            repair_report(before, clipped, [Slice.parse("hair=red")], MinerConfig())
        assert "fixed-validation" in str(err.value)


# -- [SECONDARY] adapter conformance (runs only when adapters installed) -


def test_adapter_conformance_when_installed():
    adapters = pytest.importorskip(
        "slicemend_adapters", reason="backend adapters not installed"
    )
    from slicemend_adapters.conformance import run_conformance

    report = run_conformance()
    assert report["golden_messages_valid"]
    assert report["token_counts_match"]
    print("\nACCEPTANCE PASS [adapter conformance]")
