"""Pure-Python replication path.

This is both the fallback simulation backend and the reference the compiled
kernel is tested against.  One replication:

1. draw the true component reliabilities from the prior (inverse CDF of the
   uniform at stream 0),
2. test the stage-one units on every component,
3. compute the allocation plan from the stage-one posteriors,
4. test the remaining units,
5. report the exact posterior variance and the squared error of the
   plug-in estimate.

Simulation always runs on the canonical form of the system (series
topologies are replaced by their parallel duals), which leaves both losses
unchanged in distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaincinv

from . import _streams
from .allocation import Scheme, SchemeKind, plan_for, stage_one_trials
from .core_model import (
    ComponentCounts,
    ObservationLedger,
    SystemSpec,
    Topology,
    dualize,
    estimate_reliability,
    system_reliability,
)
from .risk import b_constant, posterior_variance

SCHEME_CODES = {
    SchemeKind.TWO_STAGE: 0,
    SchemeKind.HYBRID: 1,
    SchemeKind.FIXED_EQUAL: 2,
    SchemeKind.FIXED_CUSTOM: 2,
}


@dataclass(frozen=True)
class SimProblem:
    spec: SystemSpec
    canonical: SystemSpec
    scheme: Scheme
    alpha: np.ndarray
    beta: np.ndarray
    group_sizes: np.ndarray
    b_constants: np.ndarray

    @classmethod
    def build(cls, spec: SystemSpec, scheme: Scheme) -> "SimProblem":
        canon = spec
        if spec.topology in (Topology.SERIES, Topology.SERIES_PARALLEL):
            canon = dualize(spec)
        priors = canon.priors
        return cls(
            spec=spec,
            canonical=canon,
            scheme=scheme,
            alpha=np.array([p.alpha for p in priors], dtype=np.float64),
            beta=np.array([p.beta for p in priors], dtype=np.float64),
            group_sizes=np.array(canon.shape, dtype=np.int64),
            b_constants=np.array([b_constant(g) for g in canon.groups], dtype=np.float64),
        )

    @property
    def scheme_code(self) -> int:
        return SCHEME_CODES[self.scheme.kind]

    def fixed_sizes(self, m: int) -> np.ndarray:
        if not self.scheme.is_fixed:
            return np.zeros(0, dtype=np.int64)
        plan = plan_for(self.canonical, self.scheme, m)
        return np.array([x for g in plan.component_sizes() for x in g], dtype=np.int64)


@dataclass(frozen=True)
class Replication:
    index: int
    p_true: tuple[tuple[float, ...], ...]
    ledger: ObservationLedger
    sizes: tuple[tuple[int, ...], ...]
    posterior_variance: float
    squared_error: float


def _regroup(flat, shape):
    out, pos = [], 0
    for n in shape:
        out.append(tuple(flat[pos:pos + n]))
        pos += n
    return tuple(out)


def draw_prior(problem: SimProblem, rep_key: int) -> list[float]:
    key = _streams.stream_key(rep_key, 0)
    return [
        float(betaincinv(a, b, _streams.uniform(key, k)))
        for k, (a, b) in enumerate(zip(problem.alpha, problem.beta))
    ]


def replicate(
    problem: SimProblem,
    m: int,
    master_seed: int,
    index: int,
    p_true: list[float] | None = None,
) -> Replication:
    """Run one replication; ``p_true`` pins the reliabilities instead of drawing them."""
    canon = problem.canonical
    shape = canon.shape
    rep_key = _streams.replication_key(master_seed, index)
    p = draw_prior(problem, rep_key) if p_true is None else list(p_true)
    keys = [_streams.stream_key(rep_key, k + 1) for k in range(len(p))]

    first = stage_one_trials(problem.scheme, m)
    stage_one = ObservationLedger(_regroup(
        [ComponentCounts(first, _streams.count_successes(key, 0, first, pk)) for key, pk in zip(keys, p)],
        shape,
    ))
    plan = plan_for(canon, problem.scheme, m, None if problem.scheme.is_fixed else stage_one)
    sizes = plan.component_sizes()
    flat_sizes = [x for g in sizes for x in g]
    more = [
        ComponentCounts(n - first, _streams.count_successes(key, first, n, pk))
        for key, n, pk in zip(keys, flat_sizes, p)
    ]
    ledger = stage_one.extend(_regroup(more, shape))

    pv = posterior_variance(canon, ledger)
    truth = system_reliability(canon.topology, _regroup(p, shape))
    err = estimate_reliability(canon, ledger) - truth
    return Replication(index, _regroup(p, shape), ledger, sizes, pv, err * err)


def simulate_block(problem: SimProblem, m: int, master_seed: int, start: int, stop: int):
    n = stop - start
    pv = np.empty(n)
    se = np.empty(n)
    for k in range(n):
        rec = replicate(problem, m, master_seed, start + k)
        pv[k] = rec.posterior_variance
        se[k] = rec.squared_error
    return pv, se
