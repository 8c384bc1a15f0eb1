from fractions import Fraction

import pytest

from slicemend.errors import DomainError, InconclusiveSliceError, SchemaError
from slicemend.records import PredictionRecord
from slicemend.slices import (
    MinerConfig,
    Slice,
    SliceStats,
    classify_slice,
    is_bug,
    is_rare,
    slice_stats,
)

from conftest import make_dataset, make_schema


def stats(train_support=100, val_support=100, val_correct=90, n_train=1000,
          n_val=1000, overall_correct=900, conditions=(("hair", "red"),)):
    return SliceStats(
        slice=Slice(conditions=conditions),
        train_support=train_support,
        val_support=val_support,
        val_correct=val_correct,
        n_train=n_train,
        n_val=n_val,
        overall_val_correct=overall_correct,
    )


class TestSlice:
    def test_conditions_canonically_ordered(self):
        s = Slice.of(("skin", "brown"), ("hair", "red"))
        assert s.conditions == (("hair", "red"), ("skin", "brown"))
        assert s.key == "hair=red,skin=brown"

    def test_parse_round_trip(self):
        s = Slice.parse("skin=brown, hair=red")
        assert s == Slice.of(("hair", "red"), ("skin", "brown"))
        assert Slice.parse(s.key) == s

    def test_repeated_attribute_rejected(self):
        with pytest.raises(SchemaError):
            Slice.of(("hair", "red"), ("hair", "black"))

    def test_unknown_never_matches(self):
        s = Slice.parse("hair=red")
        rec = PredictionRecord("x", "val", "y", "y", {"hair": "unknown"})
        assert not s.matches(rec)

    def test_validate_against_schema(self):
        schema = make_schema({"hair": ["red"]})
        Slice.parse("hair=red").validate(schema)
        with pytest.raises(SchemaError):
            Slice.parse("hair=green").validate(schema)
        with pytest.raises(SchemaError):
            Slice.parse("wings=blue").validate(schema)


class TestSliceStats:
    def test_empty_slice_covers_whole_dataset(self, toy_dataset):
        st = slice_stats(toy_dataset, Slice(conditions=()))
        assert st.train_support == toy_dataset.split_size("train")
        assert st.val_support == toy_dataset.split_size("val")
        assert st.val_accuracy == pytest.approx(
            sum(r.correct for r in toy_dataset.split_records("val")) / 10
        )

    def test_depth2_matches_brute_force(self, toy_dataset):
        slc = Slice.parse("hair=red,skin=brown")
        st = slice_stats(toy_dataset, slc)
        members = [r for r in toy_dataset.records if slc.matches(r)]
        assert st.train_support == sum(1 for r in members if r.split == "train")
        assert st.val_support == sum(1 for r in members if r.split == "val")
        assert st.val_correct == sum(
            1 for r in members if r.split == "val" and r.correct
        )

    def test_val_accuracy_undefined_without_support(self):
        st = stats(val_support=0, val_correct=0)
        assert st.val_accuracy is None
        assert st.accuracy_gap is None

    def test_appendix_scale_fractions(self):
        st = stats(
            train_support=2484, n_train=80000,
            val_support=10000, val_correct=8901,
            n_val=20000, overall_correct=18136,
        )
        assert st.train_fraction == pytest.approx(0.03105)
        assert st.val_accuracy == 0.8901
        assert st.overall_val_accuracy == 0.9068


class TestRarity:
    def test_paper_fraction_is_rare(self):
        st = stats(train_support=2484, n_train=80000)
        assert is_rare(st, MinerConfig(rho=0.05))

    def test_boundary_equality_is_not_rare(self):
        st = stats(train_support=50, n_train=1000)  # exactly 0.05
        assert not is_rare(st, MinerConfig(rho=0.05))

    def test_just_above_is_not_rare(self):
        st = stats(train_support=51, n_train=1000)  # 0.051
        assert not is_rare(st, MinerConfig(rho=0.05))

    def test_rarity_split_val(self):
        st = stats(train_support=500, val_support=10, n_train=1000, n_val=1000,
                   val_correct=5)
        assert not is_rare(st, MinerConfig(rho=0.05, rarity_split="train"))
        assert is_rare(st, MinerConfig(rho=0.05, rarity_split="val", min_val_support=1))


class TestBugPredicate:
    def test_paper_case_flags(self):
        st = stats(
            train_support=2484, n_train=80000,
            val_support=10000, val_correct=8901,
            n_val=20000, overall_correct=18136,
        )
        cfg = MinerConfig(rho=0.05, epsilon=0.01)
        assert is_bug(st, 0.9068, cfg)

    def test_boundary_epsilon_no_flag(self):
        st = stats(
            train_support=2484, n_train=80000,
            val_support=10000, val_correct=8901,
            n_val=20000, overall_correct=18136,
        )
        # 0.9068 - 0.0167 = 0.8901 exactly; strict < must not flag.
        assert not is_bug(st, 0.9068, MinerConfig(rho=0.05, epsilon=0.0167))
        assert not is_bug(st, 0.9068, MinerConfig(rho=0.05, epsilon=0.02))

    def test_equal_accuracy_never_flags(self):
        st = stats(val_support=100, val_correct=90, overall_correct=900, n_val=1000)
        for eps in (0.0, 0.01, 0.1):
            assert not is_bug(st, 0.9, MinerConfig(rho=0.5, epsilon=eps))

    def test_low_support_is_inconclusive_not_false(self):
        st = stats(val_support=5, val_correct=1)
        with pytest.raises(InconclusiveSliceError):
            is_bug(st, 0.9, MinerConfig(min_val_support=20))
        assert classify_slice(st, MinerConfig(rho=0.5, min_val_support=20)) == "inconclusive"

    def test_config_validation(self):
        with pytest.raises(DomainError):
            MinerConfig(rho=0.0)
        with pytest.raises(DomainError):
            MinerConfig(rho=1.0)
        with pytest.raises(DomainError):
            MinerConfig(epsilon=-0.1)
        with pytest.raises(DomainError):
            MinerConfig(max_depth=0)
        with pytest.raises(DomainError):
            MinerConfig(min_val_support=0)

    def test_exact_arithmetic_hits_boundary_for_any_counts(self):
        # 1/3 accuracy vs overall 2/3 with epsilon exactly the gap.
        st = stats(val_support=3, val_correct=1, n_val=3, overall_correct=2,
                   train_support=1, n_train=100)
        cfg = MinerConfig(rho=0.05, epsilon=Fraction(1, 3), min_val_support=1)
        assert not is_bug(st, Fraction(2, 3), cfg)
