"""Time the compiled replication kernel against the pure-Python reference.

    python benchmarks/bench_backends.py [--reps N] [--repeat K]

Each case runs the same block of replications through both backends, checks
that the losses agree bit for bit, and reports replications per second.
"""

import argparse
import time

import numpy as np

from relalloc import _backend
from relalloc._reference import SimProblem
from relalloc.allocation import Scheme
from relalloc.core_model import BetaParams, SystemSpec, Topology

U = BetaParams(1, 1)

CASES = [
    ("parallel n=2, two-stage", SystemSpec.parallel([U, U]), Scheme.two_stage(), 400),
    ("parallel n=4, two-stage", SystemSpec.parallel([U, BetaParams(2, 1), BetaParams(1, 3), U]), Scheme.two_stage(), 1600),
    ("2x1 parallel-series, hybrid", SystemSpec(Topology.PARALLEL_SERIES, ((U,), (U,))), Scheme.hybrid(), 1600),
    ("2x2 parallel-series, hybrid", SystemSpec(Topology.PARALLEL_SERIES, ((U, U), (U, U))), Scheme.hybrid(), 6400),
]


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=2000, help="replications per case")
    parser.add_argument("--repeat", type=int, default=3, help="timing repeats (best is kept)")
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args(argv)

    backends = _backend.available_backends()
    if "compiled" not in backends:
        print("compiled kernel not built; only the python backend is available")

    header = f"{'case':32s} {'m':>6s} " + " ".join(f"{b + ' rep/s':>16s}" for b in backends)
    if len(backends) == 2:
        header += f" {'speedup':>8s} {'identical':>9s}"
    print(header)
    for name, spec, scheme, m in CASES:
        problem = SimProblem.build(spec, scheme)
        rates, outs = [], []
        for b in backends:
            secs, out = _best(
                lambda: _backend.simulate_block(problem, m, args.seed, 0, args.reps, backend=b), args.repeat
            )
            rates.append(args.reps / secs)
            outs.append(out)
        line = f"{name:32s} {m:6d} " + " ".join(f"{r:16,.0f}" for r in rates)
        if len(backends) == 2:
            same = all(np.array_equal(x, y) for x, y in zip(*outs))
            line += f" {rates[0] / rates[1]:7.1f}x {str(same):>9s}"
        print(line)


if __name__ == "__main__":
    main()
