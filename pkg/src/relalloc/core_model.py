"""Beta-binomial conjugate machinery for component and system reliability.

Every component reliability carries an independent ``Beta(alpha, beta)``
prior.  Observations enter only through sufficient statistics (trials and
successes), so a ledger of counts is all the posterior ever needs.

Systems come in four topologies.  ``PARALLEL`` and ``SERIES`` are flat: one
group holding every component.  ``PARALLEL_SERIES`` puts its groups in series
and the members of each group in parallel; ``SERIES_PARALLEL`` is the dual
arrangement (groups in parallel, members in series).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence


class Topology(str, enum.Enum):
    PARALLEL = "parallel"
    SERIES = "series"
    PARALLEL_SERIES = "parallel-series"
    SERIES_PARALLEL = "series-parallel"

    @property
    def dual(self) -> "Topology":
        return _DUAL_TOPOLOGY[self]

    @property
    def is_flat(self) -> bool:
        return self in (Topology.PARALLEL, Topology.SERIES)

    @property
    def members_in_parallel(self) -> bool:
        """True when the components inside a group are wired in parallel."""
        return self in (Topology.PARALLEL, Topology.PARALLEL_SERIES)


_DUAL_TOPOLOGY = {
    Topology.PARALLEL: Topology.SERIES,
    Topology.SERIES: Topology.PARALLEL,
    Topology.PARALLEL_SERIES: Topology.SERIES_PARALLEL,
    Topology.SERIES_PARALLEL: Topology.PARALLEL_SERIES,
}


class StructureError(ValueError):
    """Raised when a ledger or data set does not match the system layout."""


@dataclass(frozen=True)
class BetaParams:
    """Beta prior or posterior on a single component reliability."""

    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError(f"{name} must be a real number, got {value!r}")
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be a finite positive number, got {value!r}")

    @property
    def r(self) -> float:
        return self.alpha + self.beta

    @property
    def mean(self) -> float:
        return self.alpha / self.r

    @property
    def variance(self) -> float:
        r = self.r
        return self.alpha * self.beta / (r * r * (r + 1.0))

    def swapped(self) -> "BetaParams":
        return BetaParams(self.beta, self.alpha)


@dataclass(frozen=True)
class ComponentCounts:
    """Number of units tested on one component and how many survived."""

    trials: int = 0
    successes: int = 0

    def __post_init__(self):
        for name in ("trials", "successes"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError(f"{name} must be an integer, got {value!r}")
        if self.trials < 0:
            raise ValueError(f"trials must be non-negative, got {self.trials}")
        if not 0 <= self.successes <= self.trials:
            raise ValueError(
                f"successes must lie in [0, trials={self.trials}], got {self.successes}"
            )

    @property
    def failures(self) -> int:
        return self.trials - self.successes

    def __add__(self, other: "ComponentCounts") -> "ComponentCounts":
        return ComponentCounts(self.trials + other.trials, self.successes + other.successes)

    def swapped(self) -> "ComponentCounts":
        return ComponentCounts(self.trials, self.failures)


Groups = tuple[tuple[BetaParams, ...], ...]
CountGroups = tuple[tuple[ComponentCounts, ...], ...]


@dataclass(frozen=True)
class SystemSpec:
    topology: Topology
    groups: Groups

    def __post_init__(self):
        object.__setattr__(self, "topology", Topology(self.topology))
        groups = tuple(tuple(g) for g in self.groups)
        if not groups:
            raise ValueError("a system needs at least one group")
        for i, g in enumerate(groups):
            if not g:
                raise ValueError(f"group {i} is empty")
            for p in g:
                if not isinstance(p, BetaParams):
                    raise TypeError(f"group {i} holds {p!r}, expected BetaParams")
        if self.topology.is_flat and len(groups) != 1:
            raise ValueError(f"a {self.topology.value} system is a single group, got {len(groups)}")
        object.__setattr__(self, "groups", groups)

    @classmethod
    def parallel(cls, priors: Iterable[BetaParams]) -> "SystemSpec":
        return cls(Topology.PARALLEL, (tuple(priors),))

    @classmethod
    def series(cls, priors: Iterable[BetaParams]) -> "SystemSpec":
        return cls(Topology.SERIES, (tuple(priors),))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    @property
    def n_components(self) -> int:
        return sum(self.shape)

    @property
    def priors(self) -> tuple[BetaParams, ...]:
        """All component priors, group-major."""
        return tuple(p for g in self.groups for p in g)


@dataclass(frozen=True)
class ObservationLedger:
    """Counts per component, plus the prefix of them observed in stage one.

    ``stage_one_counts`` defaults to empty counts, i.e. nothing attributed to
    a first stage.
    """

    counts: CountGroups
    stage_one_counts: CountGroups | None = field(default=None)

    def __post_init__(self):
        counts = tuple(tuple(g) for g in self.counts)
        object.__setattr__(self, "counts", counts)
        if self.stage_one_counts is None:
            first = tuple(tuple(ComponentCounts() for _ in g) for g in counts)
        else:
            first = tuple(tuple(g) for g in self.stage_one_counts)
        if _shape(first) != _shape(counts):
            raise StructureError("stage-one counts and total counts have different shapes")
        for g_tot, g_one in zip(counts, first):
            for tot, one in zip(g_tot, g_one):
                if one.trials > tot.trials or one.successes > tot.successes:
                    raise ValueError(f"stage-one counts {one} exceed the total counts {tot}")
                if one.failures > tot.failures:
                    raise ValueError(f"stage-one failures in {one} exceed the total counts {tot}")
        object.__setattr__(self, "stage_one_counts", first)

    @classmethod
    def empty(cls, spec: SystemSpec) -> "ObservationLedger":
        return cls(tuple(tuple(ComponentCounts() for _ in g) for g in spec.groups))

    @classmethod
    def from_counts(cls, counts: Sequence[Sequence[tuple[int, int]]]) -> "ObservationLedger":
        """Build a ledger from nested ``(trials, successes)`` pairs."""
        return cls(tuple(tuple(ComponentCounts(t, s) for t, s in g) for g in counts))

    @property
    def shape(self) -> tuple[int, ...]:
        return _shape(self.counts)

    def extend(self, more: CountGroups) -> "ObservationLedger":
        """Append stage-two counts, keeping the current totals as stage one."""
        if _shape(more) != self.shape:
            raise StructureError("extension counts do not match the ledger shape")
        total = tuple(
            tuple(a + b for a, b in zip(ga, gb)) for ga, gb in zip(self.counts, more)
        )
        return ObservationLedger(total, self.counts)

    def swapped(self) -> "ObservationLedger":
        """Exchange successes and failures everywhere (the dual data set)."""
        return ObservationLedger(
            tuple(tuple(c.swapped() for c in g) for g in self.counts),
            tuple(tuple(c.swapped() for c in g) for g in self.stage_one_counts),
        )


def _shape(groups) -> tuple[int, ...]:
    return tuple(len(g) for g in groups)


def check_ledger(spec: SystemSpec, ledger: ObservationLedger) -> None:
    if spec.shape != ledger.shape:
        raise StructureError(
            f"ledger shape {ledger.shape} does not match system shape {spec.shape}"
        )


def posterior_params(prior: BetaParams, counts: ComponentCounts) -> BetaParams:
    return BetaParams(prior.alpha + counts.successes, prior.beta + counts.failures)


def _rising_log(x: float, k: float) -> float:
    return math.lgamma(x + k) - math.lgamma(x)


def beta_moment(params: BetaParams, s: float, t: float) -> float:
    """E[p**s * (1 - p)**t] for ``p ~ Beta(alpha, beta)``.

    Integer exponents use the exact rising-factorial ratio; anything else goes
    through log-gamma differences.
    """
    if s < 0 or t < 0:
        raise ValueError("moment exponents must be non-negative")
    a, b = params.alpha, params.beta
    r = a + b
    if float(s).is_integer() and float(t).is_integer():
        s, t = int(s), int(t)
        num = 1.0
        for k in range(s):
            num *= a + k
        for k in range(t):
            num *= b + k
        den = 1.0
        for k in range(s + t):
            den *= r + k
        return num / den
    return math.exp(_rising_log(a, s) + _rising_log(b, t) - _rising_log(r, s + t))


@dataclass(frozen=True)
class Moments:
    """Mean reliability, mean unreliability and variance of one block.

    Both means are carried so that neither is ever formed as ``1 - x`` from
    the other at component level.  Fields may be numpy arrays, which lets the
    enumeration oracle evaluate whole grids of ledgers at once.
    """

    mean_p: object
    mean_q: object
    var: object


def component_moments(params: BetaParams) -> Moments:
    r = params.r
    return Moments(params.alpha / r, params.beta / r, params.variance)


def moments_from_counts(alpha, beta, trials, successes) -> Moments:
    """Vectorised posterior moments from raw prior parameters and counts."""
    a = alpha + successes
    b = beta + (trials - successes)
    r = a + b
    return Moments(a / r, b / r, a * b / (r * r * (r + 1.0)))


def _product(means, variances):
    """Mean and variance of a product of independent factors.

    ``Var(XY) = mx^2 vy + my^2 vx + vx vy`` keeps every term non-negative, so
    there is no cancellation even when the variance is tiny.
    """
    mean, var = means[0], variances[0]
    for m, v in zip(means[1:], variances[1:]):
        var = mean * mean * v + m * m * var + var * v
        mean = mean * m
    return mean, var


def series_block(parts: Sequence[Moments]) -> Moments:
    mean_p, var = _product([p.mean_p for p in parts], [p.var for p in parts])
    return Moments(mean_p, 1.0 - mean_p, var)


def parallel_block(parts: Sequence[Moments]) -> Moments:
    mean_q, var = _product([p.mean_q for p in parts], [p.var for p in parts])
    return Moments(1.0 - mean_q, mean_q, var)


def system_moments(topology: Topology, groups: Sequence[Sequence[Moments]]) -> Moments:
    """Combine independent component moments along the system structure."""
    topology = Topology(topology)
    inner = parallel_block if topology.members_in_parallel else series_block
    blocks = [inner(g) for g in groups]
    if len(blocks) == 1:
        return blocks[0]
    outer = series_block if topology.members_in_parallel else parallel_block
    return outer(blocks)


def posterior_moments(spec: SystemSpec, ledger: ObservationLedger) -> Moments:
    check_ledger(spec, ledger)
    groups = [
        [component_moments(posterior_params(p, c)) for p, c in zip(gp, gc)]
        for gp, gc in zip(spec.groups, ledger.counts)
    ]
    return system_moments(spec.topology, groups)


def estimate_reliability(spec: SystemSpec, ledger: ObservationLedger) -> float:
    """Posterior-mean plug-in estimate of the system reliability."""
    return float(posterior_moments(spec, ledger).mean_p)


def system_reliability(topology: Topology, groups: Sequence[Sequence[float]]) -> float:
    """Structure function evaluated at known component reliabilities."""
    topology = Topology(topology)
    if topology.members_in_parallel:
        blocks = [1.0 - reduce(lambda acc, p: acc * (1.0 - p), g, 1.0) for g in groups]
        return reduce(lambda acc, p: acc * p, blocks, 1.0)
    blocks = [reduce(lambda acc, p: acc * p, g, 1.0) for g in groups]
    return 1.0 - reduce(lambda acc, p: acc * (1.0 - p), blocks, 1.0)


def dualize(spec: SystemSpec) -> SystemSpec:
    """Swap reliabilities with failure probabilities.

    Parallel becomes series (and vice versa) and every prior has its two
    parameters exchanged; pair it with :meth:`ObservationLedger.swapped` for
    the data.  The map is an involution.
    """
    return SystemSpec(
        spec.topology.dual,
        tuple(tuple(p.swapped() for p in g) for g in spec.groups),
    )
