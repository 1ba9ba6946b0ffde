"""Exact small-instance computations used to check the simulation and the closed forms.

Enumeration runs over count vectors rather than outcome sequences: under a
beta prior the outcomes of one component are exchangeable, so the number of
successes carries all the information and its law is beta-binomial.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import betaln, gammaln

from .allocation import Scheme, plan_for, stage_one_trials
from .core_model import (
    BetaParams,
    ComponentCounts,
    ObservationLedger,
    SystemSpec,
    Topology,
    dualize,
    moments_from_counts,
    system_moments,
)
from .risk import b_constant

DEFAULT_MAX_PATHS = 10**7


class BudgetExceededError(RuntimeError):
    def __init__(self, paths: int, max_paths: int):
        self.paths = paths
        self.max_paths = max_paths
        super().__init__(f"enumeration needs {paths} paths, budget is {max_paths}")


@dataclass(frozen=True)
class EnumerationBudget:
    max_paths: int = DEFAULT_MAX_PATHS

    def __post_init__(self):
        if self.max_paths < 1:
            raise ValueError("max_paths must be positive")

    def check(self, paths: int) -> None:
        if paths > self.max_paths:
            raise BudgetExceededError(paths, self.max_paths)


def beta_binomial_pmf(prior: BetaParams, trials: int, successes: int) -> float:
    if not 0 <= successes <= trials:
        raise ValueError(f"successes must lie in [0, {trials}], got {successes}")
    return float(beta_binomial_pmf_vector(prior.alpha, prior.beta, trials)[successes])


def beta_binomial_pmf_vector(alpha: float, beta: float, trials: int) -> np.ndarray:
    """Probabilities of ``0..trials`` successes, evaluated in log space."""
    s = np.arange(trials + 1, dtype=np.float64)
    log_choose = gammaln(trials + 1.0) - gammaln(s + 1.0) - gammaln(trials - s + 1.0)
    logp = log_choose + betaln(alpha + s, beta + trials - s) - betaln(alpha, beta)
    return np.exp(logp)


@dataclass(frozen=True)
class EnumerationResult:
    risk: float
    total_probability: float
    paths: int


def _ledger(flat_counts, shape) -> ObservationLedger:
    groups, pos = [], 0
    for n in shape:
        groups.append(tuple(flat_counts[pos:pos + n]))
        pos += n
    return ObservationLedger(tuple(groups))


def enumerate_scheme_risk(
    spec: SystemSpec,
    scheme: Scheme,
    m: int,
    budget: EnumerationBudget | None = None,
) -> EnumerationResult:
    """Exact Bayes risk of ``scheme`` at budget ``m`` with bookkeeping.

    Every stage-one count vector is weighted by its prior predictive
    probability, the plan is computed from it, and every stage-two count
    vector is weighted by the predictive given stage one.  The posterior
    variance of each complete path is then averaged.
    """
    budget = budget or EnumerationBudget()
    priors = spec.priors
    shape = spec.shape
    k = len(priors)
    first = stage_one_trials(scheme, m)

    n_first = (first + 1) ** k
    budget.check(n_first)
    first_pmfs = [beta_binomial_pmf_vector(p.alpha, p.beta, first) for p in priors]

    # Plans first, so the budget is checked before any heavy work.
    branches = []
    paths = 0
    for s1 in itertools.product(range(first + 1), repeat=k):
        prob = math.prod(float(first_pmfs[j][s]) for j, s in enumerate(s1))
        if scheme.is_fixed:
            plan = plan_for(spec, scheme, m)
        else:
            ledger = _ledger([ComponentCounts(first, s) for s in s1], shape)
            plan = plan_for(spec, scheme, m, ledger)
        extra = [n - first for g in plan.component_sizes() for n in g]
        branches.append((s1, prob, extra))
        paths += math.prod(e + 1 for e in extra)
        budget.check(paths)

    terms = []
    total_prob = []
    for s1, prob, extra in branches:
        comps = []
        weight = np.float64(prob)
        for j, (prior, s, d) in enumerate(zip(priors, s1, extra)):
            post_a = prior.alpha + s
            post_b = prior.beta + (first - s)
            pmf = beta_binomial_pmf_vector(post_a, post_b, d)
            s2 = np.arange(d + 1, dtype=np.float64)
            idx = [1] * k
            idx[j] = d + 1
            comps.append(moments_from_counts(
                prior.alpha, prior.beta,
                np.float64(first + d), (s + s2).reshape(idx),
            ))
            weight = weight * pmf.reshape(idx)
        groups, pos = [], 0
        for n in shape:
            groups.append(comps[pos:pos + n])
            pos += n
        var = np.broadcast_to(system_moments(spec.topology, groups).var, weight.shape)
        terms.append(math.fsum((weight * var).ravel()))
        total_prob.append(math.fsum(np.ravel(weight)))
    return EnumerationResult(
        risk=math.fsum(terms), total_probability=math.fsum(total_prob), paths=paths
    )


def exact_scheme_risk(
    spec: SystemSpec, scheme: Scheme, m: int, budget: EnumerationBudget | None = None
) -> float:
    return enumerate_scheme_risk(spec, scheme, m, budget).risk


def _compositions(total: int, parts: int):
    """Non-negative integer vectors of length ``parts`` summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


def optimal_fixed_allocation(
    spec: SystemSpec, m: int, budget: EnumerationBudget | None = None
) -> tuple[tuple[int, ...], float]:
    """Best fixed (non-adaptive) allocation by brute force.

    Returns the flat per-component sizes in group-major order and their
    exact risk; the lexicographically smallest allocation wins ties.
    """
    budget = budget or EnumerationBudget()
    k = spec.n_components
    allocations = list(_compositions(m, k))
    budget.check(sum(math.prod(x + 1 for x in a) for a in allocations))
    best, best_risk = None, math.inf
    for alloc in allocations:
        sizes, pos = [], 0
        for n in spec.shape:
            sizes.append(alloc[pos:pos + n])
            pos += n
        risk = exact_scheme_risk(spec, Scheme.fixed_custom(sizes), m, budget)
        if risk < best_risk * (1.0 - 1e-12):
            best, best_risk = alloc, risk
    return best, best_risk


class McCheck(NamedTuple):
    mc_estimate: float
    std_error: float

    def z_score(self, closed_form: float) -> float:
        gap = self.mc_estimate - closed_form
        if self.std_error == 0.0:
            # degenerate integrand (e.g. a single subsystem): the estimate is exact
            if abs(gap) <= 1e-12 * max(1.0, abs(closed_form)):
                return 0.0
            return math.copysign(math.inf, gap)
        return gap / self.std_error


_MC_CHUNK = 1 << 20


def _sqrt_v_sum(p: np.ndarray) -> np.ndarray:
    # p has shape (n_components, draws)
    q = 1.0 - p
    total = np.zeros(p.shape[1])
    for i in range(p.shape[0]):
        term = np.sqrt(p[i] * q[i])
        for j in range(p.shape[0]):
            if j != i:
                term = term * q[j]
        total += term
    return total


def mc_constant_check(
    target: SystemSpec | Sequence[BetaParams], draws: int, seed: int
) -> McCheck:
    """Prior Monte Carlo estimate of an asymptotic constant.

    A list of priors is treated as a parallel system and checks
    ``E[(sum sqrt(V_i))^2]`` (also the subsystem constant ``B_i``).  A
    parallel-series system checks ``E[(sum sqrt(B_i Z_i))^2]`` with the
    closed-form ``B_i``; series forms are dualized first.
    """
    if draws < 2:
        raise ValueError("need at least two draws")
    if isinstance(target, SystemSpec):
        spec = target
        if spec.topology in (Topology.SERIES, Topology.SERIES_PARALLEL):
            spec = dualize(spec)
    else:
        spec = SystemSpec.parallel(target)
    rng = np.random.default_rng(seed)
    alpha = np.array([p.alpha for p in spec.priors])[:, None]
    beta = np.array([p.beta for p in spec.priors])[:, None]
    roots_b = np.sqrt([b_constant(g) for g in spec.groups])

    values = []
    done = 0
    while done < draws:
        size = min(_MC_CHUNK, draws - done)
        p = rng.beta(alpha, beta, size=(len(alpha), size))
        if spec.topology is Topology.PARALLEL:
            x = _sqrt_v_sum(p) ** 2
        else:
            q = 1.0 - p
            sub, pos = [], 0
            for n in spec.shape:
                sub.append(1.0 - np.prod(q[pos:pos + n], axis=0))
                pos += n
            sub = np.array(sub)
            total = np.zeros(size)
            for i in range(len(sub)):
                z = np.prod(np.delete(sub, i, axis=0), axis=0) if len(sub) > 1 else np.ones(size)
                total += roots_b[i] * z
            x = total ** 2
        values.append(x)
        done += size
    x = np.concatenate(values)
    mean = math.fsum(x) / draws
    var = math.fsum((x - mean) ** 2) / (draws - 1)
    return McCheck(mean, math.sqrt(var / draws))
