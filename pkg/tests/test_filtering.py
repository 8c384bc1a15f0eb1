import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicemend.errors import AccountingError, ConfigError
from slicemend.filtering import (
    INSTRUCTION,
    KEEP,
    NEEDS_REVIEW,
    REJECT,
    build_questions,
    decide,
)
from slicemend.planning import EditSpec, GenerationJob, PromptPayload
from slicemend.protocol import FilterOutcome
from slicemend.slices import Slice

from conftest import make_schema


def imagenet_schema():
    return make_schema({"color": ["pink", "blue"], "texture": ["fabric", "leather"]})


def face_schema():
    return make_schema({"hair": ["red", "black"], "skin": ["brown", "pale"]})


def spec_for(substitutions, label, slice_key):
    return EditSpec(
        source_image_id="train-00001",
        substitutions=substitutions,
        preserved_label=label,
        target_slice=Slice.parse(slice_key),
    )


def job_for(i, spec):
    return GenerationJob(
        job_id=f"job-{i:06d}",
        spec=spec,
        prompt=PromptPayload(prompt="p"),
        source_ref="img.png",
        seed=i,
    )


def outcome(job_id, parsed, failure=None):
    return FilterOutcome(
        job_id=job_id,
        generated_ref=f"mock://gen/{job_id}",
        raw_answer=" ".join(str(x) for x in parsed) if parsed else "",
        parsed=tuple(parsed) if parsed is not None else None,
        failure=failure,
    )


class TestBuildQuestions:
    def test_object_task_backpack(self):
        spec = spec_for((("color", "blue", "pink"),), "backpack", "color=pink")
        qs = build_questions(spec, imagenet_schema(), "object")
        assert qs.questions() == [
            "Does the backpack have pink color?",
            "Is there a backpack in the picture?",
        ]
        assert qs.instruction == INSTRUCTION

    def test_face_task_lipstick(self):
        spec = spec_for((("skin", "pale", "brown"),), "wearing lipstick", "skin=brown")
        qs = build_questions(spec, face_schema(), "face")
        assert qs.questions() == [
            "Does the person in this picture have brown skin?",
            "Is the person in this picture wearing lipstick?",
        ]

    def test_questions_follow_substitution_order(self):
        spec = spec_for(
            (("hair", "black", "red"), ("skin", "pale", "brown")),
            "wearing lipstick",
            "hair=red,skin=brown",
        )
        qs = build_questions(spec, face_schema(), "face")
        assert [q for _a, _v, q in qs.attribute_questions] == [
            "Does the person in this picture have red hair?",
            "Does the person in this picture have brown skin?",
        ]
        assert qs.label_question == "Is the person in this picture wearing lipstick?"

    def test_unknown_task_rejected(self):
        spec = spec_for((("color", "blue", "pink"),), "backpack", "color=pink")
        with pytest.raises(ConfigError):
            build_questions(spec, imagenet_schema(), "scene")

    def test_unresolved_placeholder_rejected(self):
        spec = spec_for((("color", "blue", "pink"),), "backpack", "color=pink")
        with pytest.raises(ConfigError):
            build_questions(
                spec, imagenet_schema(), "object",
                templates={"attribute": "Does the #THING have #VALUE #ATTR?"},
            )


class TestDecide:
    def jobs_and_outcomes(self, answer_rows):
        jobs = []
        outcomes = []
        for i, answers in enumerate(answer_rows):
            spec = spec_for(
                (("hair", "black", "red"), ("skin", "pale", "brown")),
                "wearing lipstick",
                "hair=red,skin=brown",
            )
            jobs.append(job_for(i, spec))
            outcomes.append(outcome(f"job-{i:06d}", answers))
        return jobs, outcomes

    def test_all_yes_keeps(self):
        jobs, outcomes = self.jobs_and_outcomes([[1, 1, 1]])
        verdicts, ledger = decide(outcomes, jobs)
        assert verdicts[0].decision == KEEP
        assert ledger.kept == 1 and ledger.decided == 1

    def test_single_no_rejects_with_named_reason(self):
        jobs, outcomes = self.jobs_and_outcomes([[1, 0, 1]])
        verdicts, _ledger = decide(outcomes, jobs)
        assert verdicts[0].decision == REJECT
        assert verdicts[0].reasons == ("answered no to skin=brown question",)

    def test_label_no_rejects(self):
        jobs, outcomes = self.jobs_and_outcomes([[1, 1, 0]])
        verdicts, _ledger = decide(outcomes, jobs)
        assert verdicts[0].decision == REJECT
        assert verdicts[0].reasons == ("answered no to label question",)

    def test_parse_failure_is_needs_review_not_reject(self):
        jobs, outcomes = self.jobs_and_outcomes([[1, 1, 1]])
        outcomes[0] = outcome("job-000000", None, failure="parse_failure: token 'yes'")
        verdicts, ledger = decide(outcomes, jobs)
        assert verdicts[0].decision == NEEDS_REVIEW
        assert ledger.needs_review == 1
        assert ledger.decided == 0  # excluded from pass-rate denominators

    def test_missing_outcome_is_accounting_error(self):
        jobs, outcomes = self.jobs_and_outcomes([[1, 1, 1], [1, 1, 1]])
        with pytest.raises(AccountingError):
            decide(outcomes[:1], jobs)

    def test_unknown_outcome_is_accounting_error(self):
        jobs, outcomes = self.jobs_and_outcomes([[1, 1, 1]])
        outcomes.append(outcome("job-999999", [1, 1, 1]))
        with pytest.raises(AccountingError):
            decide(outcomes, jobs)

    def test_ledger_conservation(self):
        rows = [[1, 1, 1], [1, 0, 1], [0, 1, 1], [1, 1, 0], [1, 1, 1]]
        jobs, outcomes = self.jobs_and_outcomes(rows)
        verdicts, ledger = decide(outcomes, jobs)
        assert ledger.kept == sum(1 for v in verdicts if v.kept) == 2
        hair = ledger.per_question[("hair", "red")]
        skin = ledger.per_question[("skin", "brown")]
        assert hair == [5, 4]
        assert skin == [5, 4]
        assert ledger.label_attempts == 5 and ledger.label_passes == 4
        assert ledger.keep_fraction == pytest.approx(0.4)

    @settings(max_examples=40, deadline=None)
    @given(answers=st.lists(st.integers(0, 1), min_size=3, max_size=3))
    def test_conjunction_semantics(self, answers):
        jobs, outcomes = self.jobs_and_outcomes([answers])
        verdicts, _l = decide(outcomes, jobs)
        if all(a == 1 for a in answers):
            assert verdicts[0].decision == KEEP
        else:
            assert verdicts[0].decision == REJECT
        # Flipping any single 1 to 0 flips keep -> reject.
        if verdicts[0].decision == KEEP:
            for i in range(3):
                flipped = list(answers)
                flipped[i] = 0
                jobs2, outcomes2 = self.jobs_and_outcomes([flipped])
                v2, _ = decide(outcomes2, jobs2)
                assert v2[0].decision == REJECT

    def test_all_yes_oracle_full_yield(self):
        rows = [[1, 1, 1]] * 25
        jobs, outcomes = self.jobs_and_outcomes(rows)
        _verdicts, ledger = decide(outcomes, jobs)
        assert ledger.keep_fraction == 1.0
        assert ledger.kept == len(jobs)
