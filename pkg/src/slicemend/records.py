"""Prediction records, attribute schemas, and the indexed dataset.

File formats (version "1"):

* Schema: one JSON document, first field ``format_version``, then
  ``attributes``: a list of ``{name, values, prompt_template,
  question_template}`` objects. ``prompt_template`` must contain the
  value placeholder ``#1``; the label placeholder ``#LABEL`` is optional.
* Records: UTF-8 JSONL. The first line is the header
  ``{"format_version": "1"}``; every following line is one record object
  with fields ``image_id``, ``split``, ``label``, ``prediction``,
  ``attributes`` (string map), ``source_ref``.

Attribute values absent at annotation time are stored as the sentinel
``"unknown"`` and never participate in slice membership.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import FORMAT_VERSION
from .errors import (
    ConflictError,
    DomainError,
    FormatVersionError,
    ParseError,
    SchemaError,
)

UNKNOWN = "unknown"
SPLITS = ("train", "val")

VALUE_PLACEHOLDER = "#1"
LABEL_PLACEHOLDER = "#LABEL"


@dataclass(frozen=True)
class Attribute:
    name: str
    values: tuple[str, ...]
    prompt_template: str
    question_template: str


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attribute vocabulary used to annotate and edit images."""

    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        seen = set()
        for attr in self.attributes:
            if attr.name in seen:
                raise SchemaError(f"duplicate attribute name {attr.name!r}")
            seen.add(attr.name)
            if not attr.values:
                raise SchemaError(f"attribute {attr.name!r} has an empty value set")
            if len(set(attr.values)) != len(attr.values):
                raise SchemaError(f"attribute {attr.name!r} has duplicate values")
            if UNKNOWN in attr.values:
                raise SchemaError(
                    f"attribute {attr.name!r} declares the reserved value {UNKNOWN!r}"
                )
            if VALUE_PLACEHOLDER not in attr.prompt_template:
                raise SchemaError(
                    f"attribute {attr.name!r} prompt template lacks the "
                    f"{VALUE_PLACEHOLDER} value placeholder"
                )
            if not attr.question_template.strip():
                raise SchemaError(f"attribute {attr.name!r} has an empty question template")

    def attribute(self, name: str) -> Attribute:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        raise SchemaError(f"unknown attribute {name!r}")

    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def has_value(self, name: str, value: str) -> bool:
        return value in self.attribute(name).values

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "attributes": [
                {
                    "name": a.name,
                    "values": list(a.values),
                    "prompt_template": a.prompt_template,
                    "question_template": a.question_template,
                }
                for a in self.attributes
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AttributeSchema":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise FormatVersionError(
                f"schema format_version {version!r} unsupported (expected {FORMAT_VERSION!r})"
            )
        attrs = []
        for entry in doc.get("attributes", []):
            attrs.append(
                Attribute(
                    name=entry["name"],
                    values=tuple(entry["values"]),
                    prompt_template=entry["prompt_template"],
                    question_template=entry["question_template"],
                )
            )
        if not attrs:
            raise SchemaError("schema declares no attributes")
        return cls(attributes=tuple(attrs))


def load_schema(path: str | Path) -> AttributeSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return AttributeSchema.from_json(json.load(fh))


def dump_schema(schema: AttributeSchema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2, sort_keys=False)
        fh.write("\n")


@dataclass(frozen=True)
class PredictionRecord:
    """One image: identity, split, ground truth, prediction, attributes."""

    image_id: str
    split: str
    label: str
    prediction: str
    attributes: dict[str, str]
    source_ref: str = ""

    @property
    def correct(self) -> bool:
        return self.prediction == self.label

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "split": self.split,
            "label": self.label,
            "prediction": self.prediction,
            "attributes": dict(self.attributes),
            "source_ref": self.source_ref,
        }


def _validate_record(rec: PredictionRecord, schema: AttributeSchema, line_no=None):
    if rec.split not in SPLITS:
        raise ParseError(f"split must be one of {SPLITS}, got {rec.split!r}", line_no)
    names = set(schema.names())
    for attr_name, value in rec.attributes.items():
        if attr_name not in names:
            raise SchemaError(
                f"record {rec.image_id!r}"
                + (f" (line {line_no})" if line_no is not None else "")
                + f": unknown attribute {attr_name!r}"
            )
        if value != UNKNOWN and not schema.has_value(attr_name, value):
            raise SchemaError(
                f"record {rec.image_id!r}"
                + (f" (line {line_no})" if line_no is not None else "")
                + f": value {value!r} not in schema for attribute {attr_name!r}"
            )


class Dataset:
    """Immutable, indexed collection of prediction records.

    The index maps (attribute, value) to the sorted image ids carrying
    that assignment, per split. Records with ``"unknown"`` for an
    attribute are absent from that attribute's index entries.
    """

    def __init__(self, schema: AttributeSchema, records: list[PredictionRecord]):
        self.schema = schema
        self.records = tuple(records)
        self._by_id: dict[str, PredictionRecord] = {}
        for rec in self.records:
            if rec.image_id in self._by_id:
                raise ConflictError(f"duplicate image_id {rec.image_id!r}")
            self._by_id[rec.image_id] = rec
        self._splits: dict[str, tuple[PredictionRecord, ...]] = {
            split: tuple(r for r in self.records if r.split == split) for split in SPLITS
        }
        self.index = self._build_index()

    def _build_index(self) -> dict[tuple[str, str], dict[str, list[str]]]:
        index: dict[tuple[str, str], dict[str, list[str]]] = {
            (attr.name, value): {split: [] for split in SPLITS}
            for attr in self.schema.attributes
            for value in attr.values
        }
        for rec in self.records:
            for attr_name, value in rec.attributes.items():
                if value == UNKNOWN:
                    continue
                index[(attr_name, value)][rec.split].append(rec.image_id)
        for entry in index.values():
            for split in SPLITS:
                entry[split].sort()
        return index

    def split_records(self, split: str) -> tuple[PredictionRecord, ...]:
        if split not in SPLITS:
            raise DomainError(f"unknown split {split!r}")
        return self._splits[split]

    def split_size(self, split: str) -> int:
        return len(self.split_records(split))

    def get(self, image_id: str) -> PredictionRecord:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise ConflictError(f"no record with image_id {image_id!r}") from None

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id


def record_from_json(obj: dict, line_no=None) -> PredictionRecord:
    try:
        return PredictionRecord(
            image_id=obj["image_id"],
            split=obj["split"],
            label=obj["label"],
            prediction=obj["prediction"],
            attributes=dict(obj["attributes"]),
            source_ref=obj.get("source_ref", ""),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"record missing or malformed field: {exc}", line_no) from exc


def ingest_records(path: str | Path, schema: AttributeSchema) -> Dataset:
    """Read a versioned JSONL record file into an indexed Dataset.

    Raises on the first malformed line (with its line number), unknown
    attribute or value, or duplicate image_id. Use
    :func:`ingest_records_lenient` to collect rejects instead.
    """
    ds, rejects = _ingest(path, schema, strict=True)
    assert not rejects
    return ds


def ingest_records_lenient(
    path: str | Path, schema: AttributeSchema
) -> tuple[Dataset, list[tuple[int, str]]]:
    """Like ingest_records, but skips invalid lines and reports them.

    Returns (dataset over the valid records, [(line_no, reason), ...]).
    """
    return _ingest(path, schema, strict=False)


def _ingest(path, schema, strict):
    path = Path(path)
    records: list[PredictionRecord] = []
    seen_ids: set[str] = set()
    rejects: list[tuple[int, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ParseError("empty record file (missing format_version header)", 1)
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid header JSON: {exc}", 1) from exc
        if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
            raise FormatVersionError(
                f"{path}: record file format_version "
                f"{header.get('format_version') if isinstance(header, dict) else header!r} "
                f"unsupported (expected {FORMAT_VERSION!r})"
            )
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = record_from_json(obj, line_no)
                _validate_record(rec, schema, line_no)
                if rec.image_id in seen_ids:
                    raise ConflictError(
                        f"line {line_no}: duplicate image_id {rec.image_id!r}"
                    )
            except json.JSONDecodeError as exc:
                err = ParseError(f"invalid JSON: {exc}", line_no)
                if strict:
                    raise err from exc
                rejects.append((line_no, str(err)))
                continue
            except (ParseError, SchemaError, ConflictError) as exc:
                if strict:
                    raise
                rejects.append((line_no, str(exc)))
                continue
            seen_ids.add(rec.image_id)
            records.append(rec)
    return Dataset(schema, records), rejects


def emit_records(ds: Dataset, path: str | Path) -> None:
    """Write a Dataset back to the versioned JSONL format, in record order."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format_version": FORMAT_VERSION}, sort_keys=True) + "\n")
        for rec in ds.records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def overall_accuracy(ds: Dataset, split: str) -> float:
    """Fraction of records in the split whose prediction equals the label."""
    recs = ds.split_records(split)
    if not recs:
        raise DomainError(f"split {split!r} is empty")
    return sum(1 for r in recs if r.correct) / len(recs)


def correct_count(ds: Dataset, split: str) -> int:
    return sum(1 for r in ds.split_records(split) if r.correct)
