"""Desk-scale simulator: seeded populations with injected rare bugs and
a support-dependent surrogate standing in for retraining.

Population draws work branch-first: each record lands in one injected
bug's branch with probability equal to that bug's target fraction (its
conditioned attributes are then forced to the slice values), otherwise
in the remainder branch, whose marginals exclude injected depth-1
values (and reject accidental completions of deeper injected slices).
Members of an injected slice err at the injected rate; everything else
errs at the base rate.

Correctness is drawn by thresholding per-record uniforms that live in
their own seeded streams, so the repair simulation can regenerate the
identical uniforms and re-threshold them against updated error rates:
lower error can only flip records from wrong to right, improvements are
monotone in added support, and an empty manifest reproduces the input
predictions bit for bit.

The surrogate curve error(f) = max(floor, base + boost * exp(-f/scale))
is calibrated per injected slice so that at the synthesized support
fraction it returns exactly the injected error rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION
from .augment import AugmentationManifest
from .errors import SpecError
from .mocks import MockBackend
from .records import Attribute, AttributeSchema, Dataset, PredictionRecord
from .slices import Slice

# Stream indices under the population seed; repair regenerates 1, 3, 4.
_STREAM_TRAIN_ATTRS = 0
_STREAM_TRAIN_CORRECT = 1
_STREAM_VAL_ATTRS = 2
_STREAM_VAL_CORRECT = 3
_STREAM_SYNTH_CORRECT = 4

_MAX_REJECTION_ROUNDS = 100


@dataclass(frozen=True)
class InjectedBug:
    slice: Slice
    train_fraction: float
    error_rate: float


@dataclass
class PopulationSpec:
    schema: AttributeSchema
    n_train: int
    n_val: int
    labels: tuple[str, ...]
    injected_bugs: list[InjectedBug] = field(default_factory=list)
    base_error_rate: float = 0.10
    value_marginals: dict[str, dict[str, float]] = field(default_factory=dict)
    surrogate_floor: float = 0.0
    surrogate_scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 1 or self.n_val < 1:
            raise SpecError("n_train and n_val must be positive")
        if len(self.labels) < 2:
            raise SpecError("need at least 2 labels to draw wrong predictions")
        if not (0.0 <= self.base_error_rate < 1.0):
            raise SpecError(f"base_error_rate {self.base_error_rate} outside [0, 1)")
        total = 0.0
        for bug in self.injected_bugs:
            bug.slice.validate(self.schema)
            if not (0.0 < bug.train_fraction < 1.0):
                raise SpecError(f"injected fraction {bug.train_fraction} outside (0, 1)")
            if bug.train_fraction * self.n_train < 1.0:
                raise SpecError(
                    f"fraction {bug.train_fraction} yields <1 expected record "
                    f"at n_train={self.n_train}"
                )
            if bug.error_rate <= self.base_error_rate:
                raise SpecError(
                    f"injected error {bug.error_rate} must exceed base "
                    f"{self.base_error_rate}"
                )
            if bug.error_rate > 1.0:
                raise SpecError(f"injected error {bug.error_rate} above 1")
            total += bug.train_fraction
        if total > 0.5:
            raise SpecError(f"injected fractions sum to {total}; must leave >=0.5 remainder")
        for attr_name, dist in self.value_marginals.items():
            attr = self.schema.attribute(attr_name)
            unknown_values = set(dist) - set(attr.values)
            if unknown_values:
                raise SpecError(f"marginals name unknown values {sorted(unknown_values)}")
            if any(p < 0 for p in dist.values()):
                raise SpecError("negative marginal probability")
        self._remainder_check()

    def _remainder_check(self):
        # Every attribute must keep positive mass once injected depth-1
        # values are excluded from the remainder branch.
        for attr in self.schema.attributes:
            excluded = {
                bug.slice.conditions[0][1]
                for bug in self.injected_bugs
                if bug.slice.depth == 1 and bug.slice.conditions[0][0] == attr.name
            }
            if set(attr.values) <= excluded:
                raise SpecError(
                    f"attribute {attr.name!r} has no non-injected values left"
                )

    def marginal_vector(self, attr: Attribute) -> np.ndarray:
        dist = self.value_marginals.get(attr.name)
        if dist is None:
            return np.full(len(attr.values), 1.0 / len(attr.values))
        probs = np.array([dist.get(v, 0.0) for v in attr.values], dtype=float)
        total = probs.sum()
        if total <= 0:
            raise SpecError(f"marginals for {attr.name!r} sum to zero")
        return probs / total

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "population_spec",
            "schema": self.schema.to_json(),
            "n_train": self.n_train,
            "n_val": self.n_val,
            "labels": list(self.labels),
            "injected_bugs": [
                {
                    "slice": b.slice.key,
                    "train_fraction": b.train_fraction,
                    "error_rate": b.error_rate,
                }
                for b in self.injected_bugs
            ],
            "base_error_rate": self.base_error_rate,
            "value_marginals": self.value_marginals,
            "surrogate": {"floor_rate": self.surrogate_floor, "scale": self.surrogate_scale},
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PopulationSpec":
        if doc.get("format_version") != FORMAT_VERSION:
            raise SpecError(
                f"population spec format_version {doc.get('format_version')!r} unsupported"
            )
        schema = AttributeSchema.from_json(doc["schema"])
        surrogate = doc.get("surrogate", {})
        return cls(
            schema=schema,
            n_train=doc["n_train"],
            n_val=doc["n_val"],
            labels=tuple(doc["labels"]),
            injected_bugs=[
                InjectedBug(
                    slice=Slice.parse(b["slice"]),
                    train_fraction=b["train_fraction"],
                    error_rate=b["error_rate"],
                )
                for b in doc.get("injected_bugs", [])
            ],
            base_error_rate=doc.get("base_error_rate", 0.10),
            value_marginals=doc.get("value_marginals", {}),
            surrogate_floor=surrogate.get("floor_rate", 0.0),
            surrogate_scale=surrogate.get("scale", 0.02),
            seed=doc.get("seed", 0),
        )


def load_population_spec(path: str | Path) -> PopulationSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return PopulationSpec.from_json(json.load(fh))


def default_schema() -> AttributeSchema:
    """Object-style demo schema: colors, backgrounds, textures."""
    return AttributeSchema(
        attributes=(
            Attribute(
                name="color",
                values=("red", "green", "pink", "brown", "white", "blue", "tan"),
                prompt_template="A photo of a #1 #LABEL.",
                question_template="What color is the main object?",
            ),
            Attribute(
                name="background",
                values=("sky", "trees", "grass", "rocks", "water"),
                prompt_template="The background of this photo is #1.",
                question_template="What is the background of this photo?",
            ),
            Attribute(
                name="texture",
                values=("plastic", "metallic", "wooden", "leather", "fabric", "ceramic", "glass"),
                prompt_template="A photo of a #1 #LABEL.",
                question_template="What texture is the main object?",
            ),
        )
    )


def _value_indices(schema: AttributeSchema) -> dict[str, dict[str, int]]:
    return {
        attr.name: {v: i for i, v in enumerate(attr.values)}
        for attr in schema.attributes
    }


def _draw_split(spec: PopulationSpec, n: int, rng: np.random.Generator):
    """Draw attribute columns (value indices) and label indices for one split."""
    schema = spec.schema
    vidx = _value_indices(schema)

    branch_fractions = [b.train_fraction for b in spec.injected_bugs]
    cum = np.cumsum(branch_fractions)
    u_branch = rng.random(n)
    branch = np.searchsorted(cum, u_branch, side="right")  # len(bugs) = remainder

    remainder_probs = {}
    for attr in schema.attributes:
        probs = spec.marginal_vector(attr).copy()
        for bug in spec.injected_bugs:
            if bug.slice.depth == 1 and bug.slice.conditions[0][0] == attr.name:
                probs[vidx[attr.name][bug.slice.conditions[0][1]]] = 0.0
        total = probs.sum()
        if total <= 0:
            raise SpecError(f"attribute {attr.name!r} has no remainder mass")
        remainder_probs[attr.name] = probs / total

    cols = {
        attr.name: rng.choice(len(attr.values), size=n, p=remainder_probs[attr.name])
        for attr in schema.attributes
    }

    # Reject accidental remainder completions of injected slices that
    # remain matchable (those with no depth-1-injected condition).
    matchable = [
        bug.slice
        for bug in spec.injected_bugs
        if all(remainder_probs[a][vidx[a][v]] > 0 for a, v in bug.slice.conditions)
    ]
    if matchable:
        remainder_rows = branch == len(spec.injected_bugs)
        for _round in range(_MAX_REJECTION_ROUNDS):
            bad = np.zeros(n, dtype=bool)
            for slc in matchable:
                match = remainder_rows.copy()
                for a, v in slc.conditions:
                    match &= cols[a] == vidx[a][v]
                bad |= match
            if not bad.any():
                break
            idx = np.flatnonzero(bad)
            for attr in schema.attributes:
                cols[attr.name][idx] = rng.choice(
                    len(attr.values), size=len(idx), p=remainder_probs[attr.name]
                )
        else:
            raise SpecError("could not draw remainder records avoiding injected slices")

    for k, bug in enumerate(spec.injected_bugs):
        rows = np.flatnonzero(branch == k)
        for a, v in bug.slice.conditions:
            cols[a][rows] = vidx[a][v]

    label_idx = rng.integers(0, len(spec.labels), size=n)
    return cols, label_idx


def _error_probs(spec: PopulationSpec, cols: dict[str, np.ndarray], n: int) -> np.ndarray:
    vidx = _value_indices(spec.schema)
    p = np.full(n, spec.base_error_rate)
    for bug in spec.injected_bugs:
        match = np.ones(n, dtype=bool)
        for a, v in bug.slice.conditions:
            match &= cols[a] == vidx[a][v]
        p[match] = np.maximum(p[match], bug.error_rate)
    return p


def _records_for_split(
    spec: PopulationSpec, split: str, n: int, cols, label_idx, correct
) -> list[PredictionRecord]:
    schema = spec.schema
    labels = spec.labels
    nlab = len(labels)
    values = {attr.name: attr.values for attr in schema.attributes}
    out = []
    for i in range(n):
        label = labels[int(label_idx[i])]
        prediction = label if correct[i] else labels[(int(label_idx[i]) + 1) % nlab]
        out.append(
            PredictionRecord(
                image_id=f"{split}-{i:06d}",
                split=split,
                label=label,
                prediction=prediction,
                attributes={
                    name: vals[int(cols[name][i])] for name, vals in values.items()
                },
                source_ref=f"img/{split}/{i:06d}.png",
            )
        )
    return out


def synthesize_population(spec: PopulationSpec) -> Dataset:
    """Fully seeded population: same spec, same bytes."""
    records = []
    for split, n, attr_stream, corr_stream in (
        ("train", spec.n_train, _STREAM_TRAIN_ATTRS, _STREAM_TRAIN_CORRECT),
        ("val", spec.n_val, _STREAM_VAL_ATTRS, _STREAM_VAL_CORRECT),
    ):
        rng_attrs = np.random.default_rng([spec.seed, attr_stream])
        cols, label_idx = _draw_split(spec, n, rng_attrs)
        p = _error_probs(spec, cols, n)
        u = np.random.default_rng([spec.seed, corr_stream]).random(n)
        correct = u >= p
        records.extend(_records_for_split(spec, split, n, cols, label_idx, correct))
    return Dataset(spec.schema, records)


@dataclass(frozen=True)
class SliceCalibration:
    slice: Slice
    f0: Fraction
    error_rate: float
    boost: float


@dataclass
class SurrogateModel:
    """error(slice) = max(floor, base + boost * exp(-support_fraction/scale)).

    Per-slice boosts are calibrated so the curve passes exactly through
    the injected error rate at the synthesized support fraction; at an
    unchanged fraction the injected rate is returned verbatim, keeping
    no-op repairs bit-identical.
    """

    floor_rate: float
    base_rate: float
    boost: float
    scale: float
    seed: int
    labels: tuple[str, ...]
    calibrations: dict[str, SliceCalibration] = field(default_factory=dict)

    def curve(self, fraction: float, boost: float) -> float:
        raw = self.base_rate + boost * math.exp(-fraction / self.scale)
        return min(1.0, max(self.floor_rate, raw))

    def error_for(self, slice_key: str, support: int, n_train: int) -> float:
        cal = self.calibrations.get(slice_key)
        fraction = Fraction(support, n_train)
        if cal is None:
            return self.curve(float(fraction), self.boost)
        if fraction == cal.f0:
            return cal.error_rate
        return self.curve(float(fraction), cal.boost)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "surrogate_model",
            "floor_rate": self.floor_rate,
            "base_rate": self.base_rate,
            "boost": self.boost,
            "scale": self.scale,
            "seed": self.seed,
            "labels": list(self.labels),
            "calibrations": {
                key: {
                    "f0": [cal.f0.numerator, cal.f0.denominator],
                    "error_rate": cal.error_rate,
                    "boost": cal.boost,
                }
                for key, cal in self.calibrations.items()
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SurrogateModel":
        if doc.get("format_version") != FORMAT_VERSION:
            raise SpecError("surrogate model format_version unsupported")
        model = cls(
            floor_rate=doc["floor_rate"],
            base_rate=doc["base_rate"],
            boost=doc.get("boost", 0.0),
            scale=doc["scale"],
            seed=doc["seed"],
            labels=tuple(doc["labels"]),
        )
        for key, cal in doc.get("calibrations", {}).items():
            num, den = cal["f0"]
            model.calibrations[key] = SliceCalibration(
                slice=Slice.parse(key),
                f0=Fraction(num, den),
                error_rate=cal["error_rate"],
                boost=cal["boost"],
            )
        return model


def calibrate_surrogate(spec: PopulationSpec, ds: Dataset) -> SurrogateModel:
    """Fit per-slice boosts at the achieved train support fractions."""
    n_train = ds.split_size("train")
    model = SurrogateModel(
        floor_rate=spec.surrogate_floor,
        base_rate=spec.base_error_rate,
        boost=0.0,
        scale=spec.surrogate_scale,
        seed=spec.seed,
        labels=spec.labels,
    )
    train = ds.split_records("train")
    for bug in spec.injected_bugs:
        support = sum(1 for r in train if bug.slice.matches(r))
        if support == 0:
            raise SpecError(f"injected slice {bug.slice} drew no train records")
        f0 = Fraction(support, n_train)
        boost = (bug.error_rate - spec.base_error_rate) / math.exp(
            -float(f0) / spec.surrogate_scale
        )
        model.calibrations[bug.slice.key] = SliceCalibration(
            slice=bug.slice, f0=f0, error_rate=bug.error_rate, boost=boost
        )
    return model


def simulate_repair(
    ds: Dataset, manifest: AugmentationManifest, model: SurrogateModel
) -> Dataset:
    """Stand-in for retraining: recompute each calibrated slice's error
    at its post-augmentation train support and re-threshold the original
    correctness uniforms. Validation ids never change."""
    train = ds.split_records("train")
    val = ds.split_records("val")
    n_train_new = len(train) + len(manifest.entries)

    errors: dict[str, float] = {}
    tracked = [cal.slice for cal in model.calibrations.values()]
    for slc in tracked:
        support = sum(1 for r in train if slc.matches(r))
        support += sum(
            1
            for e in manifest.entries
            if all(e.attributes.get(a) == v for a, v in slc.conditions)
        )
        errors[slc.key] = model.error_for(slc.key, support, n_train_new)

    def error_prob(attributes: dict[str, str]) -> float:
        p = model.base_rate
        for slc in tracked:
            if all(attributes.get(a) == v for a, v in slc.conditions):
                p = max(p, errors[slc.key])
        return p

    labels = model.labels
    nlab = len(labels)

    def predict(label: str, correct: bool) -> str:
        if correct:
            return label
        return labels[(labels.index(label) + 1) % nlab]

    u_train = np.random.default_rng([model.seed, _STREAM_TRAIN_CORRECT]).random(len(train))
    u_val = np.random.default_rng([model.seed, _STREAM_VAL_CORRECT]).random(len(val))
    u_synth = np.random.default_rng([model.seed, _STREAM_SYNTH_CORRECT]).random(
        len(manifest.entries)
    )

    new_predictions: dict[str, str] = {}
    for i, rec in enumerate(train):
        new_predictions[rec.image_id] = predict(
            rec.label, bool(u_train[i] >= error_prob(rec.attributes))
        )
    for i, rec in enumerate(val):
        new_predictions[rec.image_id] = predict(
            rec.label, bool(u_val[i] >= error_prob(rec.attributes))
        )

    new_records = [
        PredictionRecord(
            image_id=rec.image_id,
            split=rec.split,
            label=rec.label,
            prediction=new_predictions[rec.image_id],
            attributes=dict(rec.attributes),
            source_ref=rec.source_ref,
        )
        for rec in ds.records
    ]
    for i, entry in enumerate(manifest.entries):
        if entry.label not in labels:
            raise SpecError(f"manifest entry label {entry.label!r} unknown to the surrogate")
        correct = bool(u_synth[i] >= error_prob(entry.attributes))
        new_records.append(
            PredictionRecord(
                image_id=f"synth-{entry.job_id}",
                split="train",
                label=entry.label,
                prediction=predict(entry.label, correct),
                attributes=dict(entry.attributes),
                source_ref=entry.generated_ref,
            )
        )
    return Dataset(ds.schema, new_records)


def scripted_backends(script) -> tuple[MockBackend, MockBackend]:
    """Generation and filter mocks sharing one script; consistency flows
    through the substitution markers in generated_ref."""
    return MockBackend(script, kind="generation"), MockBackend(script, kind="filter")


def ground_truth_json(spec: PopulationSpec, ds: Dataset) -> dict:
    """Injected bugs with achieved supports, for simulator outputs."""
    train = ds.split_records("train")
    val = ds.split_records("val")
    bugs = []
    for bug in spec.injected_bugs:
        train_support = sum(1 for r in train if bug.slice.matches(r))
        val_support = sum(1 for r in val if bug.slice.matches(r))
        bugs.append(
            {
                "slice": bug.slice.key,
                "target_train_fraction": bug.train_fraction,
                "error_rate": bug.error_rate,
                "train_support": train_support,
                "val_support": val_support,
                "train_fraction": train_support / len(train),
                "val_fraction": val_support / len(val),
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "kind": "ground_truth_bugs",
        "base_error_rate": spec.base_error_rate,
        "seed": spec.seed,
        "injected": bugs,
    }
