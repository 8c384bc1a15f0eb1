"""Turn a chosen bug slice into concrete attribute-edit generation jobs.

Sources are drawn from the train split among records that do not already
satisfy every slice condition; each job edits exactly the conditions its
source fails (minimal edit), keeps the source's label, and renders a
prompt by joining token-mapped phrases into the template's ``#1`` slot.

Over-generation: the filter stage rejects a share of generated images,
so the planner requests ceil(target_count * overgen_factor) sources; the
default factor 1.43 (~1/0.70) compensates for a 70% pass rate.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION
from .errors import ConfigError, FormatVersionError, PlanningError
from .records import UNKNOWN, Dataset, PredictionRecord
from .slices import Slice

POSITIVE_PROMPT = "best quality, extremely detailed"
NEGATIVE_PROMPT = "lowres, bad anatomy, bad hands"

DEFAULT_CONDITION_KIND = "soft_hed"
DEFAULT_INFERENCE_STEPS = 30
DEFAULT_OVERGEN_FACTOR = 1.43
DEFAULT_JOINER = " and "

VALUE_SLOT = "#1"
LABEL_SLOT = "#LABEL"


@dataclass(frozen=True)
class EditSpec:
    """Minimal attribute edit turning one source image into slice membership."""

    source_image_id: str
    substitutions: tuple[tuple[str, str, str], ...]  # (attribute, old, new)
    preserved_label: str
    target_slice: Slice

    def __post_init__(self):
        if not self.substitutions:
            raise PlanningError(
                f"edit spec for {self.source_image_id!r} has no substitutions"
            )
        if len(self.substitutions) > self.target_slice.depth:
            raise PlanningError("more substitutions than slice conditions")
        for attr, _old, new in self.substitutions:
            expected = self.target_slice.value_for(attr)
            if expected is None or expected != new:
                raise PlanningError(
                    f"substitution {attr}->{new!r} does not target a slice condition"
                )

    def edited_attributes(self, source_attributes: dict[str, str]) -> dict[str, str]:
        out = dict(source_attributes)
        for attr, _old, new in self.substitutions:
            out[attr] = new
        return out

    def to_json(self) -> dict:
        return {
            "source_image_id": self.source_image_id,
            "substitutions": [[a, o, n] for a, o, n in self.substitutions],
            "label": self.preserved_label,
            "slice": self.target_slice.key,
        }


@dataclass(frozen=True)
class PromptPayload:
    prompt: str
    positive_prompt: str = POSITIVE_PROMPT
    negative_prompt: str = NEGATIVE_PROMPT
    condition_kind: str = DEFAULT_CONDITION_KIND
    inference_steps: int = DEFAULT_INFERENCE_STEPS

    def __post_init__(self):
        if not self.prompt:
            raise ConfigError("rendered prompt is empty")
        if self.inference_steps < 1:
            raise ConfigError("inference_steps must be >= 1")


@dataclass(frozen=True)
class TokenPhrase:
    phrase: str
    connector: str = DEFAULT_JOINER


@dataclass
class PlanConfig:
    """Source selection, prompt rendering, and over-generation settings."""

    target_count: int
    token_map: dict[tuple[str, str], TokenPhrase]
    prompt_template: str
    overgen_factor: float = DEFAULT_OVERGEN_FACTOR
    source_selection_seed: int = 0
    condition_kind: str = DEFAULT_CONDITION_KIND
    inference_steps: int = DEFAULT_INFERENCE_STEPS

    def __post_init__(self):
        if self.target_count < 1:
            raise ConfigError("target_count must be >= 1")
        if Fraction(repr(float(self.overgen_factor))) < 1:
            raise ConfigError("overgen_factor must be >= 1")
        if VALUE_SLOT not in self.prompt_template:
            raise ConfigError(f"prompt template lacks the {VALUE_SLOT} slot")

    def request_count(self) -> int:
        # Exact decimal arithmetic: 700 * 1.43 must request 1001, not
        # drift to 1002 through binary rounding.
        exact = Fraction(repr(float(self.overgen_factor))) * self.target_count
        return int(math.ceil(exact))

    def phrase_for(self, attribute: str, value: str) -> TokenPhrase:
        try:
            return self.token_map[(attribute, value)]
        except KeyError:
            raise ConfigError(
                f"token map has no phrase for ({attribute!r}, {value!r})"
            ) from None


def load_token_map(path: str | Path) -> dict[tuple[str, str], TokenPhrase]:
    """Read a token map JSON file: {"attr=value": phrase-or-object}.

    A plain string value is a phrase joined with the default " and ";
    an object form {"phrase": ..., "connector": ...} overrides how the
    phrase attaches to the one before it.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"token map format_version {version!r} unsupported (expected {FORMAT_VERSION!r})"
        )
    out: dict[tuple[str, str], TokenPhrase] = {}
    for key, value in doc.get("tokens", {}).items():
        if "=" not in key:
            raise ConfigError(f"token map key {key!r} is not attr=value")
        attr, attr_value = key.split("=", 1)
        if isinstance(value, str):
            out[(attr, attr_value)] = TokenPhrase(phrase=value)
        else:
            out[(attr, attr_value)] = TokenPhrase(
                phrase=value["phrase"],
                connector=value.get("connector", DEFAULT_JOINER),
            )
    if not out:
        raise ConfigError("token map declares no tokens")
    return out


def dump_token_map(token_map: dict[tuple[str, str], TokenPhrase], path: str | Path):
    doc = {"format_version": FORMAT_VERSION, "tokens": {}}
    for (attr, value), tp in token_map.items():
        if tp.connector == DEFAULT_JOINER:
            doc["tokens"][f"{attr}={value}"] = tp.phrase
        else:
            doc["tokens"][f"{attr}={value}"] = {
                "phrase": tp.phrase,
                "connector": tp.connector,
            }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def select_sources(
    ds: Dataset, slc: Slice, cfg: PlanConfig
) -> list[PredictionRecord]:
    """Seeded uniform draw of train records that fail at least one slice
    condition; sampling is without replacement unless the eligible pool
    is smaller than the request."""
    slc.validate(ds.schema)
    train = ds.split_records("train")
    if not train:
        raise PlanningError("train split is empty")
    eligible = [r for r in train if not slc.matches(r)]
    if not eligible:
        raise PlanningError(
            f"no eligible sources: every train record already satisfies {slc}"
        )
    request = cfg.request_count()
    rng = np.random.default_rng(cfg.source_selection_seed)
    replace = len(eligible) < request
    picks = rng.choice(len(eligible), size=request, replace=replace)
    return [eligible[int(i)] for i in picks]


def build_edit_spec(record: PredictionRecord, slc: Slice) -> EditSpec:
    """Substitute exactly the slice conditions the record fails."""
    substitutions = []
    for attr, value in slc.conditions:
        current = record.attributes.get(attr, UNKNOWN)
        if current != value:
            substitutions.append((attr, current, value))
    if not substitutions:
        raise PlanningError(
            f"record {record.image_id!r} already satisfies {slc}; edit would be a no-op"
        )
    return EditSpec(
        source_image_id=record.image_id,
        substitutions=tuple(substitutions),
        preserved_label=record.label,
        target_slice=slc,
    )


def render_prompt(spec: EditSpec, cfg: PlanConfig) -> PromptPayload:
    """Join the substitutions' token-mapped phrases into the template's
    #1 slot; #LABEL resolves to the preserved label.

    Phrases join in token-map insertion order (the map is an ordered
    vocabulary; its order controls how the edit reads as English), each
    attached by its connector, " and " unless overridden.
    """
    targets = {(attr, new) for attr, _old, new in spec.substitutions}
    for attr, _old, new in spec.substitutions:
        cfg.phrase_for(attr, new)  # coverage check, errors name the pair
    joined = ""
    first = True
    for (attr, value), tp in cfg.token_map.items():
        if (attr, value) not in targets:
            continue
        joined += tp.phrase if first else tp.connector + tp.phrase
        first = False
    prompt = cfg.prompt_template.replace(VALUE_SLOT, joined)
    prompt = prompt.replace(LABEL_SLOT, spec.preserved_label)
    return PromptPayload(
        prompt=prompt,
        condition_kind=cfg.condition_kind,
        inference_steps=cfg.inference_steps,
    )


@dataclass(frozen=True)
class GenerationJob:
    job_id: str
    spec: EditSpec
    prompt: PromptPayload
    source_ref: str
    seed: int

    def to_json(self) -> dict:
        doc = {"job_id": self.job_id, "seed": self.seed, "source_ref": self.source_ref}
        doc.update(self.spec.to_json())
        doc.update(
            {
                "prompt": self.prompt.prompt,
                "positive_prompt": self.prompt.positive_prompt,
                "negative_prompt": self.prompt.negative_prompt,
                "condition_kind": self.prompt.condition_kind,
                "inference_steps": self.prompt.inference_steps,
            }
        )
        return doc


def plan(ds: Dataset, slc: Slice, cfg: PlanConfig) -> list[GenerationJob]:
    """One generation job per selected source; ids and order are fixed
    by the selection seed. Ids carry a slice slug so jobs from plans
    targeting different slices never collide."""
    sources = select_sources(ds, slc, cfg)
    slug = re.sub(r"[^A-Za-z0-9]+", "-", slc.key)
    jobs = []
    for i, record in enumerate(sources):
        spec = build_edit_spec(record, slc)
        payload = render_prompt(spec, cfg)
        jobs.append(
            GenerationJob(
                job_id=f"{slug}-{i:06d}-{record.image_id}",
                spec=spec,
                prompt=payload,
                source_ref=record.source_ref,
                seed=cfg.source_selection_seed + i,
            )
        )
    return jobs


def write_jobs(jobs: list[GenerationJob], path: str | Path, meta: dict | None = None):
    path = Path(path)
    header = {"format_version": FORMAT_VERSION, "kind": "jobs"}
    header.update(meta or {})
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for job in jobs:
            fh.write(json.dumps(job.to_json(), sort_keys=True) + "\n")


def read_jobs(path: str | Path) -> tuple[list[GenerationJob], dict]:
    path = Path(path)
    jobs = []
    with path.open("r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format_version") != FORMAT_VERSION or header.get("kind") != "jobs":
            raise FormatVersionError(f"{path}: not a version-{FORMAT_VERSION} jobs file")
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            spec = EditSpec(
                source_image_id=doc["source_image_id"],
                substitutions=tuple((a, o, n) for a, o, n in doc["substitutions"]),
                preserved_label=doc["label"],
                target_slice=Slice.parse(doc["slice"]),
            )
            payload = PromptPayload(
                prompt=doc["prompt"],
                positive_prompt=doc["positive_prompt"],
                negative_prompt=doc["negative_prompt"],
                condition_kind=doc["condition_kind"],
                inference_steps=doc["inference_steps"],
            )
            jobs.append(
                GenerationJob(
                    job_id=doc["job_id"],
                    spec=spec,
                    prompt=payload,
                    source_ref=doc.get("source_ref", ""),
                    seed=doc.get("seed", 0),
                )
            )
    return jobs, header
