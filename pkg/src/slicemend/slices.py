"""Slices, their measured statistics, and the rare/bug predicates.

A slice is a conjunction of attribute-value conditions; its stats carry
exact integer counts so the rarity and low-accuracy predicates can be
decided in rational arithmetic. Both predicates are strict ``<``
comparisons, and thresholds given as floats are interpreted through
their shortest decimal representation (0.05 means exactly 5/100), which
makes boundary cases like "fraction exactly equal to the threshold"
well-defined and testable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import DomainError, InconclusiveSliceError, SchemaError
from .records import UNKNOWN, AttributeSchema, Dataset, PredictionRecord


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class Slice:
    """Conjunction of (attribute, value) conditions, one per attribute,
    kept sorted by attribute name so equality and keys are canonical."""

    conditions: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.conditions:
            # The empty slice (whole dataset) is allowed; stats code
            # treats it as matching every record.
            return
        names = [a for a, _ in self.conditions]
        if len(set(names)) != len(names):
            raise SchemaError(f"slice has repeated attributes: {names}")
        ordered = tuple(sorted(self.conditions, key=lambda c: c[0]))
        object.__setattr__(self, "conditions", ordered)

    @classmethod
    def of(cls, *pairs: tuple[str, str]) -> "Slice":
        return cls(conditions=tuple(pairs))

    @classmethod
    def parse(cls, text: str) -> "Slice":
        """Parse "attr=value,attr2=value2" into a Slice."""
        pairs = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise SchemaError(f"slice condition {part!r} is not attr=value")
            attr, value = part.split("=", 1)
            pairs.append((attr.strip(), value.strip()))
        return cls(conditions=tuple(pairs))

    @property
    def depth(self) -> int:
        return len(self.conditions)

    @property
    def key(self) -> str:
        return ",".join(f"{a}={v}" for a, v in self.conditions)

    def value_for(self, attribute: str):
        for a, v in self.conditions:
            if a == attribute:
                return v
        return None

    def matches(self, record: PredictionRecord) -> bool:
        """True when the record satisfies every condition. Records with
        "unknown" on a conditioned attribute never match."""
        for attr, value in self.conditions:
            got = record.attributes.get(attr, UNKNOWN)
            if got == UNKNOWN or got != value:
                return False
        return True

    def is_strict_subset_of(self, other: "Slice") -> bool:
        return set(self.conditions) < set(other.conditions)

    def validate(self, schema: AttributeSchema) -> None:
        for attr, value in self.conditions:
            attribute = schema.attribute(attr)  # raises SchemaError if unknown
            if value not in attribute.values:
                raise SchemaError(
                    f"value {value!r} not in schema for attribute {attr!r}"
                )

    def __str__(self) -> str:
        return self.key or "<all>"


@dataclass(frozen=True)
class SliceStats:
    """Exact measurements of one slice over one dataset.

    Counts are kept alongside derived fractions; predicate evaluation
    uses the counts. ``val_accuracy`` and ``accuracy_gap`` are None when
    the slice has no validation members.
    """

    slice: Slice
    train_support: int
    val_support: int
    val_correct: int
    n_train: int
    n_val: int
    overall_val_correct: int

    @property
    def train_fraction(self) -> float:
        return self.train_support / self.n_train if self.n_train else 0.0

    @property
    def val_fraction(self) -> float:
        return self.val_support / self.n_val if self.n_val else 0.0

    @property
    def val_accuracy(self):
        if self.val_support == 0:
            return None
        return self.val_correct / self.val_support

    @property
    def overall_val_accuracy(self) -> float:
        return self.overall_val_correct / self.n_val

    @property
    def accuracy_gap(self):
        acc = self.val_accuracy
        if acc is None:
            return None
        return self.overall_val_accuracy - acc

    def support_fraction_exact(self, split: str) -> Fraction:
        if split == "train":
            return Fraction(self.train_support, self.n_train)
        if split == "val":
            return Fraction(self.val_support, self.n_val)
        raise DomainError(f"unknown split {split!r}")

    def val_accuracy_exact(self):
        if self.val_support == 0:
            return None
        return Fraction(self.val_correct, self.val_support)

    def gap_exact(self):
        acc = self.val_accuracy_exact()
        if acc is None:
            return None
        return Fraction(self.overall_val_correct, self.n_val) - acc

    def to_json(self) -> dict:
        return {
            "slice": self.slice.key,
            "conditions": [[a, v] for a, v in self.slice.conditions],
            "train_support": self.train_support,
            "val_support": self.val_support,
            "val_correct": self.val_correct,
            "train_fraction": self.train_fraction,
            "val_fraction": self.val_fraction,
            "val_accuracy": self.val_accuracy,
            "accuracy_gap": self.accuracy_gap,
        }


@dataclass(frozen=True)
class MinerConfig:
    """Thresholds and bounds for bug-slice mining.

    rho: rarity threshold (support fraction strictly below flags rare).
    epsilon: accuracy-difference threshold for the low-accuracy test.
    rarity_split: which split the rarity predicate measures; the formal
        definition uses train, the diagnosis procedure describes val, so
        both are supported and both fractions always appear in reports.
    min_val_support: slices with fewer validation members are reported
        as inconclusive instead of being flagged either way.
    min_train_prune: specializations of a slice are not enumerated once
        its train support falls below this absolute count (support is
        monotone under added conditions; accuracy is not used to prune).
    """

    rho: float = 0.05
    epsilon: float = 0.01
    max_depth: int = 3
    min_val_support: int = 20
    rarity_split: str = "train"
    top_k: int = 50
    min_train_prune: int = 5
    budget: int = 5_000_000

    def __post_init__(self):
        rho = self.rho_exact
        if not (0 < rho < 1):
            raise DomainError(f"rho must be in (0, 1), got {self.rho}")
        if self.epsilon_exact < 0:
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.max_depth < 1:
            raise DomainError("max_depth must be >= 1")
        if self.min_val_support < 1:
            raise DomainError("min_val_support must be >= 1")
        if self.rarity_split not in ("train", "val"):
            raise DomainError(f"rarity_split must be train or val, got {self.rarity_split!r}")
        if self.top_k < 1:
            raise DomainError("top_k must be >= 1")

    @property
    def rho_exact(self) -> Fraction:
        return _as_fraction(self.rho)

    @property
    def epsilon_exact(self) -> Fraction:
        return _as_fraction(self.epsilon)

    def to_json(self) -> dict:
        return {
            "rho": float(self.rho),
            "epsilon": float(self.epsilon),
            "max_depth": self.max_depth,
            "min_val_support": self.min_val_support,
            "rarity_split": self.rarity_split,
            "top_k": self.top_k,
            "min_train_prune": self.min_train_prune,
            "budget": self.budget,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MinerConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


def slice_stats(ds: Dataset, slc: Slice) -> SliceStats:
    """Measure one slice by exact membership counting.

    Records with "unknown" on any conditioned attribute are excluded.
    """
    slc.validate(ds.schema)
    train_support = 0
    val_support = 0
    val_correct = 0
    overall_val_correct = 0
    for rec in ds.records:
        member = slc.matches(rec)
        if rec.split == "train":
            if member:
                train_support += 1
        else:
            if rec.correct:
                overall_val_correct += 1
            if member:
                val_support += 1
                if rec.correct:
                    val_correct += 1
    return SliceStats(
        slice=slc,
        train_support=train_support,
        val_support=val_support,
        val_correct=val_correct,
        n_train=ds.split_size("train"),
        n_val=ds.split_size("val"),
        overall_val_correct=overall_val_correct,
    )


def is_rare(stats: SliceStats, cfg: MinerConfig) -> bool:
    """Strict test: support fraction on the configured split < rho."""
    return stats.support_fraction_exact(cfg.rarity_split) < cfg.rho_exact


def is_bug(stats: SliceStats, overall, cfg: MinerConfig) -> bool:
    """Strict test: rare AND validation accuracy < overall - epsilon.

    ``overall`` may be a float, a Fraction, or a decimal string; floats
    are interpreted through their shortest decimal representation.
    Raises InconclusiveSliceError below the validation-support floor.
    """
    if stats.val_support < cfg.min_val_support:
        raise InconclusiveSliceError(
            f"slice {stats.slice} has val_support {stats.val_support} < "
            f"floor {cfg.min_val_support}; accuracy verdict is inconclusive"
        )
    acc = stats.val_accuracy_exact()
    return is_rare(stats, cfg) and acc < _as_fraction(overall) - cfg.epsilon_exact


# Tri-state verdict used by the miner so inconclusive slices can be
# reported without pretending they are clean.
BUG = "bug"
CLEAN = "clean"
INCONCLUSIVE = "inconclusive"


def classify_slice(stats: SliceStats, cfg: MinerConfig) -> str:
    if not is_rare(stats, cfg):
        return CLEAN
    if stats.val_support < cfg.min_val_support:
        return INCONCLUSIVE
    overall = Fraction(stats.overall_val_correct, stats.n_val)
    if stats.val_accuracy_exact() < overall - cfg.epsilon_exact:
        return BUG
    return CLEAN
