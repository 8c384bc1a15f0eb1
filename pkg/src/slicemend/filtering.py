"""Question construction and keep/reject accounting for the LVLM gate.

Two question styles exist, selected by an explicit task flag:

* object: "Does the {label} have {value} {attribute}?" per substitution,
  then "Is there a {label} in the picture?"
* face: "Does the person in this picture have {value} {attribute}?" per
  substitution, then "Is the person in this picture {label}?"

An image is kept only when every answer is 1. Responses that fail the
strict binary parse are a third outcome, needs_review: they are counted
but excluded from pass-rate denominators, because an indecisive answer
is not evidence the edit failed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import FORMAT_VERSION
from .errors import AccountingError, ConfigError
from .planning import EditSpec, GenerationJob
from .protocol import FilterOutcome
from .records import AttributeSchema

INSTRUCTION = (
    "For each question, only answer with 1 (yes) or 0 (no). "
    "Provide answers separated by spaces."
)

TASK_OBJECT = "object"
TASK_FACE = "face"

_TEMPLATES = {
    TASK_OBJECT: {
        "attribute": "Does the #LABEL have #VALUE #ATTR?",
        "label": "Is there a #LABEL in the picture?",
    },
    TASK_FACE: {
        "attribute": "Does the person in this picture have #VALUE #ATTR?",
        "label": "Is the person in this picture #LABEL?",
    },
}

_PLACEHOLDERS = ("#LABEL", "#VALUE", "#ATTR")
_PLACEHOLDER_RE = re.compile(r"#[A-Z][A-Z_]*")

KEEP = "keep"
REJECT = "reject"
NEEDS_REVIEW = "needs_review"


@dataclass(frozen=True)
class QuestionSet:
    """Per-substitution questions in slice-condition order, label last."""

    attribute_questions: tuple[tuple[str, str, str], ...]  # (attr, value, question)
    label_question: str
    instruction: str = INSTRUCTION

    def questions(self) -> list[str]:
        return [q for _a, _v, q in self.attribute_questions] + [self.label_question]


def _render(template: str, label: str, value: str = "", attr: str = "") -> str:
    out = (
        template.replace("#LABEL", label).replace("#VALUE", value).replace("#ATTR", attr)
    )
    leftover = _PLACEHOLDER_RE.search(out)
    if leftover:
        raise ConfigError(f"unresolved placeholder {leftover.group()} in {template!r}")
    return out


def build_questions(
    spec: EditSpec,
    schema: AttributeSchema,
    task: str,
    templates: dict | None = None,
) -> QuestionSet:
    """One question per substitution plus the label question."""
    if task not in _TEMPLATES:
        raise ConfigError(f"task must be one of {sorted(_TEMPLATES)}, got {task!r}")
    tpl = dict(_TEMPLATES[task])
    if templates:
        tpl.update(templates)
    attribute_questions = []
    for attr, _old, new in spec.substitutions:
        schema.attribute(attr)  # raises SchemaError for unknown attributes
        attribute_questions.append(
            (attr, new, _render(tpl["attribute"], spec.preserved_label, new, attr))
        )
    label_question = _render(tpl["label"], spec.preserved_label)
    return QuestionSet(
        attribute_questions=tuple(attribute_questions),
        label_question=label_question,
    )


@dataclass(frozen=True)
class FilterVerdict:
    job_id: str
    generated_ref: str
    per_question: tuple[bool, ...] | None
    decision: str
    reasons: tuple[str, ...] = ()

    @property
    def kept(self) -> bool:
        return self.decision == KEEP

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "generated_ref": self.generated_ref,
            "per_question": list(self.per_question) if self.per_question is not None else None,
            "decision": self.decision,
            "reasons": list(self.reasons),
        }


@dataclass
class PassRateLedger:
    """Per-question pass accounting over decided (parsed) responses."""

    per_question: dict[tuple[str, str], list[int]] = field(default_factory=dict)
    label_attempts: int = 0
    label_passes: int = 0
    decided: int = 0
    kept: int = 0
    needs_review: int = 0

    def record_question(self, attr: str, value: str, passed: bool):
        cell = self.per_question.setdefault((attr, value), [0, 0])
        cell[0] += 1
        cell[1] += int(passed)

    def record_label(self, passed: bool):
        self.label_attempts += 1
        self.label_passes += int(passed)

    @property
    def keep_fraction(self):
        return self.kept / self.decided if self.decided else None

    def pass_rate(self, attr: str, value: str):
        attempts, passes = self.per_question.get((attr, value), (0, 0))
        return passes / attempts if attempts else None

    @property
    def label_pass_rate(self):
        return self.label_passes / self.label_attempts if self.label_attempts else None

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "pass_rate_ledger",
            "per_question": {
                f"{attr}={value}": {
                    "attempts": attempts,
                    "passes": passes,
                    "pass_rate": passes / attempts if attempts else None,
                }
                for (attr, value), (attempts, passes) in sorted(self.per_question.items())
            },
            "label": {
                "attempts": self.label_attempts,
                "passes": self.label_passes,
                "pass_rate": self.label_pass_rate,
            },
            "decided": self.decided,
            "kept": self.kept,
            "keep_fraction": self.keep_fraction,
            "needs_review": self.needs_review,
        }


def decide(
    outcomes: list[FilterOutcome], jobs: list[GenerationJob]
) -> tuple[list[FilterVerdict], PassRateLedger]:
    """Fold filter outcomes into verdicts (in job order) and a ledger.

    Jobs supply the (job_id, EditSpec) pairing; every job present in
    ``outcomes`` must resolve, and a missing outcome for a job that was
    filtered raises AccountingError. Keep requires every answer to be 1;
    any 0 rejects with a reason naming the failed question's target.
    """
    by_id = {o.job_id: o for o in outcomes}
    if len(by_id) != len(outcomes):
        raise AccountingError("duplicate job_ids among filter outcomes")
    known = {job.job_id for job in jobs}
    for outcome in outcomes:
        if outcome.job_id not in known:
            raise AccountingError(f"outcome for unknown job {outcome.job_id!r}")

    missing = sorted(known - set(by_id))
    if missing:
        raise AccountingError(f"missing filter outcomes for jobs {missing[:5]}")

    verdicts: list[FilterVerdict] = []
    ledger = PassRateLedger()
    for job in jobs:
        outcome = by_id[job.job_id]
        spec = job.spec
        n_questions = len(spec.substitutions) + 1
        if outcome.parsed is None:
            ledger.needs_review += 1
            verdicts.append(
                FilterVerdict(
                    job_id=job.job_id,
                    generated_ref=outcome.generated_ref,
                    per_question=None,
                    decision=NEEDS_REVIEW,
                    reasons=(outcome.failure or "unparseable answer",),
                )
            )
            continue
        if len(outcome.parsed) != n_questions:
            raise AccountingError(
                f"job {job.job_id}: parsed {len(outcome.parsed)} answers for "
                f"{n_questions} questions"
            )
        ledger.decided += 1
        reasons = []
        flags = []
        for (attr, _old, new), answer in zip(spec.substitutions, outcome.parsed[:-1]):
            passed = answer == 1
            flags.append(passed)
            ledger.record_question(attr, new, passed)
            if not passed:
                reasons.append(f"answered no to {attr}={new} question")
        label_passed = outcome.parsed[-1] == 1
        flags.append(label_passed)
        ledger.record_label(label_passed)
        if not label_passed:
            reasons.append("answered no to label question")
        decision = KEEP if all(flags) else REJECT
        if decision == KEEP:
            ledger.kept += 1
        verdicts.append(
            FilterVerdict(
                job_id=job.job_id,
                generated_ref=outcome.generated_ref,
                per_question=tuple(flags),
                decision=decision,
                reasons=tuple(reasons),
            )
        )
    return verdicts, ledger
