"""Slot throughput of the compiled and pure-Python simulation kernels.

Run with ``python3 benchmarks/bench_sim.py [--slots N] [--repeat R]``. Each
case is timed on every available backend; the table reports the best of R
runs in million slots per second and the compiled speed-up. The two backends
are also checked to produce identical traces for each case.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from alohastab import sim
from alohastab.sim import Bernoulli, FiniteSystemSpec, HyperGeometricMixture, MarkovModulated, run_sim

CASES = {
    "aloha-3 bernoulli": FiniteSystemSpec.bernoulli([1 / 3] * 3, [0.14] * 3),
    "aloha-8 bernoulli": FiniteSystemSpec.bernoulli([1 / 8] * 8, [0.04] * 8),
    "aloha-3 mixed arrivals": FiniteSystemSpec(
        (0.4, 0.5, 0.3),
        (HyperGeometricMixture(0.1, 0.2), MarkovModulated(((0.9, 0.1), (0.3, 0.7)), (4 / 3, 0.0), 0.1),
         Bernoulli(0.05))),
    "csma-2 sigma=10": FiniteSystemSpec.bernoulli([0.5, 0.5], [0.02, 0.02], sigma=10),
}


def best_time(spec: FiniteSystemSpec, slots: int, backend: str, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        run_sim(spec, slots, seed=1, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slots", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = sorted(sim.BACKENDS)
    if "compiled" not in backends:
        print("compiled kernel not built; timing the python backend only")
    print(f"{'case':<26}" + "".join(f"{b + ' Mslot/s':>20}" for b in backends) + f"{'speed-up':>12}")
    for name, spec in CASES.items():
        reports = [run_sim(spec, 20_000, seed=1, backend=b) for b in backends]
        same = all(np.array_equal(reports[0].trace, r.trace) for r in reports[1:])
        rates = {b: args.slots / best_time(spec, args.slots, b, args.repeat) / 1e6 for b in backends}
        line = f"{name:<26}" + "".join(f"{rates[b]:>20.3f}" for b in backends)
        if "compiled" in rates:
            line += f"{rates['compiled'] / rates['python']:>11.1f}x"
        print(line + ("" if same else "  TRACES DIFFER"))


if __name__ == "__main__":
    main()
