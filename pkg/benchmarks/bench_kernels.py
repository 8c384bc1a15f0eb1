#!/usr/bin/env python3
"""Benchmark the counting kernels: compiled extension vs numpy fallback.

Two workloads:
  * raw kernel ops on packed bitsets of varying record counts
  * a full mining pass over a synthesized population, once per backend
    (the backend is monkeypatched; results are asserted identical)

Usage: python benchmarks/bench_kernels.py [--records 200000] [--repeat 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import slicemend.kernels as kernels
from slicemend.kernels import _bitset_np
from slicemend.mining import mine_bug_slices
from slicemend.simulate import InjectedBug, PopulationSpec, default_schema, synthesize_population
from slicemend.slices import MinerConfig, Slice


def bench_raw(backend, n_records: int, repeat: int) -> dict[str, float]:
    rng = np.random.default_rng(0)
    a = kernels.pack_bits(rng.random(n_records) < 0.3)
    b = kernels.pack_bits(rng.random(n_records) < 0.6)
    c = kernels.pack_bits(rng.random(n_records) < 0.5)
    out = np.empty_like(a)
    timings = {}
    for name, fn in (
        ("and_count", lambda: backend.and_count(a, b)),
        ("and_count_pair", lambda: backend.and_count_pair(a, b, c)),
        ("and_into", lambda: backend.and_into(a, b, out)),
    ):
        fn()  # warm up
        start = time.perf_counter()
        for _ in range(repeat):
            fn()
        timings[name] = (time.perf_counter() - start) / repeat
    return timings


def bench_mining(backend_name: str, module) -> tuple[float, dict]:
    spec = PopulationSpec(
        schema=default_schema(),
        n_train=30000,
        n_val=10000,
        labels=("backpack", "coffee mug"),
        injected_bugs=[
            InjectedBug(Slice.parse("color=pink"), 0.02, 0.40),
            InjectedBug(Slice.parse("texture=fabric"), 0.03, 0.35),
        ],
        base_error_rate=0.10,
        seed=5,
    )
    ds = synthesize_population(spec)
    cfg = MinerConfig(rho=0.06, epsilon=0.02, max_depth=3, min_val_support=20, top_k=100)

    saved = (kernels.and_count, kernels.and_count_pair, kernels.and_into, kernels.count)
    kernels.and_count = module.and_count
    kernels.and_count_pair = module.and_count_pair
    kernels.and_into = module.and_into
    kernels.count = module.count
    try:
        start = time.perf_counter()
        report = mine_bug_slices(ds, cfg)
        elapsed = time.perf_counter() - start
    finally:
        kernels.and_count, kernels.and_count_pair, kernels.and_into, kernels.count = saved
    return elapsed, report.to_json()


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--records", type=int, default=200_000)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()

    backends = kernels.backends()
    print(f"active backend: {kernels.BACKEND}")
    print(f"available: {sorted(backends)}\n")

    print(f"raw kernels @ {args.records:,} records (mean of {args.repeat} runs)")
    rows = {name: bench_raw(module, args.records, args.repeat)
            for name, module in backends.items()}
    ops = sorted(next(iter(rows.values())))
    header = "op".ljust(16) + "".join(name.rjust(14) for name in sorted(rows))
    print(header)
    for op in ops:
        line = op.ljust(16)
        for name in sorted(rows):
            line += f"{rows[name][op] * 1e6:11.1f} us"
        print(line)
    if "cython" in rows:
        speedups = [
            rows["numpy"][op] / rows["cython"][op] for op in ops
        ]
        print(f"compiled speedup: {min(speedups):.1f}x - {max(speedups):.1f}x\n")

    print("full depth-3 mining pass over 40k records")
    reports = {}
    for name, module in backends.items():
        elapsed, report = bench_mining(name, module)
        reports[name] = report
        print(f"  {name}: {elapsed:.3f}s ({report['enumerated']} candidates)")
    if len(reports) == 2:
        a, b = reports.values()
        assert a == b or {**a, "kernel_backend": ""} == {**b, "kernel_backend": ""}, (
            "backends disagree"
        )
        print("  reports identical across backends: yes")


if __name__ == "__main__":
    main()
