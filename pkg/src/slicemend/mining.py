"""Bug-slice mining: enumerate attribute conjunctions, measure, flag, rank.

Enumeration walks depths 1..max_depth over the schema's attributes in
name order. Membership is counted through packed bitsets (see
slicemend.kernels); a candidate's specializations are skipped once its
train support drops below an absolute floor, which is sound because
support is monotone non-increasing under added conditions. Accuracy is
never used to prune.

Candidate evaluation can fan out over a thread pool; results are merged
in enumeration order, so output is bit-identical for 1 and N workers.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import FORMAT_VERSION, kernels
from .errors import BudgetError, DomainError
from .records import UNKNOWN, Dataset
from .slices import (
    BUG,
    CLEAN,
    INCONCLUSIVE,
    MinerConfig,
    Slice,
    SliceStats,
    classify_slice,
)


class _BitsetIndex:
    """Packed per-(attribute, value) membership bitsets for one dataset."""

    def __init__(self, ds: Dataset):
        self.attr_names = sorted(ds.schema.names())
        self.values = {
            name: tuple(ds.schema.attribute(name).values) for name in self.attr_names
        }
        train = ds.split_records("train")
        val = ds.split_records("val")
        self.n_train = len(train)
        self.n_val = len(val)
        self.overall_val_correct = sum(1 for r in val if r.correct)
        self.correct_val = kernels.pack_bits(np.array([r.correct for r in val], dtype=bool))

        self.train_bits: dict[tuple[int, int], np.ndarray] = {}
        self.val_bits: dict[tuple[int, int], np.ndarray] = {}
        for p, name in enumerate(self.attr_names):
            train_col = np.array(
                [r.attributes.get(name, UNKNOWN) for r in train], dtype=object
            )
            val_col = np.array(
                [r.attributes.get(name, UNKNOWN) for r in val], dtype=object
            )
            for vi, value in enumerate(self.values[name]):
                self.train_bits[(p, vi)] = kernels.pack_bits(train_col == value)
                self.val_bits[(p, vi)] = kernels.pack_bits(val_col == value)

    def slice_for(self, conds: tuple[tuple[int, int], ...]) -> Slice:
        return Slice(
            conditions=tuple(
                (self.attr_names[p], self.values[self.attr_names[p]][vi])
                for p, vi in conds
            )
        )


@dataclass
class _Node:
    conds: tuple[tuple[int, int], ...]
    train_bs: np.ndarray
    val_bs: np.ndarray
    train_support: int


@dataclass
class BugSliceReport:
    bugs: list[SliceStats]
    inconclusive: list[SliceStats]
    overall_val_correct: int
    n_train: int
    n_val: int
    config: MinerConfig
    enumerated: int
    inconclusive_total: int

    @property
    def overall_val_accuracy(self) -> float:
        return self.overall_val_correct / self.n_val

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "bug_slice_report",
            "overall_val_accuracy": self.overall_val_accuracy,
            "overall_val_correct": self.overall_val_correct,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "config": self.config.to_json(),
            "enumerated": self.enumerated,
            "kernel_backend": kernels.BACKEND,
            "bugs": [s.to_json() for s in self.bugs],
            "inconclusive": [s.to_json() for s in self.inconclusive],
            "inconclusive_total": self.inconclusive_total,
        }


def worst_case_candidates(ds_or_sizes, max_depth: int) -> int:
    """Number of slices of depth 1..max_depth a schema can generate.

    Exact: the sum of elementary symmetric polynomials e_1..e_max_depth
    over the attribute value-set sizes.
    """
    if isinstance(ds_or_sizes, Dataset):
        sizes = [len(a.values) for a in ds_or_sizes.schema.attributes]
    else:
        sizes = list(ds_or_sizes)
    coeffs = [1] + [0] * len(sizes)
    for s in sizes:
        for k in range(len(sizes), 0, -1):
            coeffs[k] += coeffs[k - 1] * s
    return sum(coeffs[1 : max_depth + 1])


def _rank_key(stats: SliceStats):
    return (-stats.gap_exact(), -stats.val_support, stats.slice.key)


def mine_bug_slices(ds: Dataset, cfg: MinerConfig, workers: int = 1) -> BugSliceReport:
    """Enumerate, classify, deduplicate, and rank rare-case bug slices.

    Dominance deduplication keeps the most general explanation: a slice
    is dropped when a strict subset of its conditions is already a
    reported bug whose validation accuracy is no higher. Surviving bugs
    are ranked by (accuracy gap desc, val support desc, slice key), then
    truncated to top_k. Rare slices below the validation-support floor
    are listed separately as inconclusive (empty slices are omitted).
    """
    if ds.split_size("train") == 0 or ds.split_size("val") == 0:
        raise DomainError("mining requires non-empty train and val splits")
    n_attrs = len(ds.schema.attributes)
    worst = worst_case_candidates(ds, cfg.max_depth)
    if worst > cfg.budget:
        raise BudgetError(
            f"{n_attrs} attributes at depth {cfg.max_depth} give {worst} candidate "
            f"slices, exceeding the budget of {cfg.budget}"
        )

    index = _BitsetIndex(ds)
    evaluated: list[tuple[tuple[tuple[int, int], ...], int, int, int]] = []
    enumerated = 0

    m = len(index.attr_names)
    root = _Node(conds=(), train_bs=None, val_bs=None, train_support=index.n_train)
    frontier = [root]

    def expand(parent: _Node):
        out = []
        start = parent.conds[-1][0] + 1 if parent.conds else 0
        depth = len(parent.conds) + 1
        expandable_depth = depth < cfg.max_depth
        for p in range(start, m):
            for vi in range(len(index.values[index.attr_names[p]])):
                cond_train = index.train_bits[(p, vi)]
                cond_val = index.val_bits[(p, vi)]
                if parent.conds:
                    train_out = np.empty_like(cond_train)
                    ts = kernels.and_into(parent.train_bs, cond_train, train_out)
                    val_out = np.empty_like(cond_val)
                    vs = kernels.and_into(parent.val_bs, cond_val, val_out)
                    vc = kernels.and_count(val_out, index.correct_val)
                else:
                    train_out = cond_train
                    val_out = cond_val
                    ts = kernels.count(cond_train)
                    vs = kernels.count(cond_val)
                    vc = kernels.and_count(cond_val, index.correct_val)
                conds = parent.conds + ((p, vi),)
                child = None
                if expandable_depth and ts >= cfg.min_train_prune:
                    child = _Node(conds=conds, train_bs=train_out, val_bs=val_out,
                                  train_support=ts)
                out.append((conds, ts, vs, vc, child))
        return out

    for _depth in range(1, cfg.max_depth + 1):
        if not frontier:
            break
        if workers > 1 and len(frontier) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                chunks = pool.map(expand, frontier)
                results = [item for chunk in chunks for item in chunk]
        else:
            results = [item for parent in frontier for item in expand(parent)]
        next_frontier = []
        for conds, ts, vs, vc, child in results:
            enumerated += 1
            evaluated.append((conds, ts, vs, vc))
            if child is not None:
                next_frontier.append(child)
        frontier = next_frontier

    # Classification, dominance dedup (evaluation order is depth-ascending).
    bugs: list[SliceStats] = []
    reported: dict[frozenset, Fraction] = {}
    inconclusive: list[SliceStats] = []
    for conds, ts, vs, vc in evaluated:
        slc = index.slice_for(conds)
        stats = SliceStats(
            slice=slc,
            train_support=ts,
            val_support=vs,
            val_correct=vc,
            n_train=index.n_train,
            n_val=index.n_val,
            overall_val_correct=index.overall_val_correct,
        )
        verdict = classify_slice(stats, cfg)
        if verdict == INCONCLUSIVE:
            if ts or vs:
                inconclusive.append(stats)
            continue
        if verdict != BUG:
            continue
        cond_set = frozenset(slc.conditions)
        acc = stats.val_accuracy_exact()
        dominated = False
        for size in range(1, len(slc.conditions)):
            for subset in itertools.combinations(sorted(cond_set), size):
                sub_acc = reported.get(frozenset(subset))
                if sub_acc is not None and sub_acc <= acc:
                    dominated = True
                    break
            if dominated:
                break
        if dominated:
            continue
        reported[cond_set] = acc
        bugs.append(stats)

    bugs.sort(key=_rank_key)
    inconclusive.sort(key=lambda s: s.slice.key)
    return BugSliceReport(
        bugs=bugs[: cfg.top_k],
        inconclusive=inconclusive[: cfg.top_k],
        overall_val_correct=index.overall_val_correct,
        n_train=index.n_train,
        n_val=index.n_val,
        config=cfg,
        enumerated=enumerated,
        inconclusive_total=len(inconclusive),
    )


def rank_attributes_by_error(
    ds: Dataset, cfg: MinerConfig
) -> list[tuple[str, str, float]]:
    """Depth-1 slices passing both the rarity and low-accuracy tests,
    worst validation accuracy first (ties: larger val support, then
    lexicographic)."""
    depth1 = MinerConfig(
        rho=cfg.rho,
        epsilon=cfg.epsilon,
        max_depth=1,
        min_val_support=cfg.min_val_support,
        rarity_split=cfg.rarity_split,
        top_k=cfg.top_k,
        min_train_prune=cfg.min_train_prune,
        budget=cfg.budget,
    )
    report = mine_bug_slices(ds, depth1)
    ranked = sorted(
        report.bugs,
        key=lambda s: (s.val_accuracy_exact(), -s.val_support, s.slice.key),
    )
    out = []
    for stats in ranked:
        (attr, value), = stats.slice.conditions
        out.append((attr, value, stats.val_accuracy))
    return out
