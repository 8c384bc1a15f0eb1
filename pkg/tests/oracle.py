"""Brute-force reference miner, kept independent of the package engine.

Implements the same mining contract (prefix-chain pruning, tri-state
classification, dominance dedup, total ranking) with dict-and-loop
counting over raw records, no bitsets, no shared code paths.
"""

from fractions import Fraction
from itertools import combinations, product

UNKNOWN = "unknown"


def _matches(record_attrs, conditions):
    for attr, value in conditions:
        got = record_attrs.get(attr, UNKNOWN)
        if got == UNKNOWN or got != value:
            return False
    return True


def mine_oracle(
    records,
    attr_values,
    rho,
    epsilon,
    max_depth,
    min_val_support,
    rarity_split,
    top_k,
    min_train_prune,
):
    """records: (split, correct: bool, attrs: dict). attr_values: {name: [values]}.

    Returns bug tuples (slice_key, train_support, val_support, val_correct)
    in ranked order, truncated to top_k.
    """
    train = [(a, c) for s, c, a in records if s == "train"]
    val = [(a, c) for s, c, a in records if s == "val"]
    n_train, n_val = len(train), len(val)
    overall_correct = sum(1 for _a, c in val if c)
    rho = Fraction(repr(float(rho)))
    epsilon = Fraction(repr(float(epsilon)))

    names = sorted(attr_values)
    support_cache = {}

    def measure(conditions):
        if conditions in support_cache:
            return support_cache[conditions]
        ts = sum(1 for a, _c in train if _matches(a, conditions))
        vs = 0
        vc = 0
        for a, c in val:
            if _matches(a, conditions):
                vs += 1
                vc += int(c)
        support_cache[conditions] = (ts, vs, vc)
        return ts, vs, vc

    candidates = []
    for depth in range(1, max_depth + 1):
        for combo in combinations(names, depth):
            for values in product(*(attr_values[n] for n in combo)):
                conditions = tuple(zip(combo, values))
                # Prefix-chain pruning mirror: a slice is enumerated only
                # if every proper prefix has train support >= the floor.
                pruned = False
                for k in range(1, depth):
                    ts_prefix, _, _ = measure(conditions[:k])
                    if ts_prefix < min_train_prune:
                        pruned = True
                        break
                if pruned:
                    continue
                candidates.append(conditions)

    bugs = []
    reported = {}
    for conditions in candidates:
        ts, vs, vc = measure(conditions)
        frac = Fraction(ts, n_train) if rarity_split == "train" else Fraction(vs, n_val)
        if not (frac < rho):
            continue
        if vs < min_val_support:
            continue  # inconclusive, never flagged
        acc = Fraction(vc, vs)
        if not (acc < Fraction(overall_correct, n_val) - epsilon):
            continue
        cond_set = frozenset(conditions)
        dominated = False
        for size in range(1, len(conditions)):
            for subset in combinations(sorted(cond_set), size):
                sub = reported.get(frozenset(subset))
                if sub is not None and sub <= acc:
                    dominated = True
                    break
            if dominated:
                break
        if dominated:
            continue
        reported[cond_set] = acc
        gap = Fraction(overall_correct, n_val) - acc
        key = ",".join(f"{a}={v}" for a, v in conditions)
        bugs.append((gap, vs, key, ts, vc))

    bugs.sort(key=lambda b: (-b[0], -b[1], b[2]))
    return [(key, ts, vs, vc) for gap, vs, key, ts, vc in bugs][:top_k]
