"""Two-stage and hybrid two-stage sample allocation.

Stage one tests a fixed number of units on every component; the resulting
posteriors give plug-in weights, and the rest of the budget is split in
proportion to their square roots.  Each split floors every share but the
last, keeps each share at or above the stage-one size, and gives the last
index whatever remains.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .core_model import (
    BetaParams,
    ComponentCounts,
    ObservationLedger,
    StructureError,
    SystemSpec,
    Topology,
    dualize,
)
from .risk import b_constant, u_weights, w_weights

__all__ = [
    "AllocationPlan",
    "InfeasibleBudgetError",
    "Scheme",
    "SchemeKind",
    "check_feasible",
    "dualize",
    "hybrid_allocate",
    "plan_for",
    "predictor",
    "stage_one_size",
    "stage_one_trials",
    "two_stage_allocate",
]

# Relative slack when flooring predictor values that should be integers but
# picked up rounding error (e.g. 49.99999999999999 for an exact half split).
_FLOOR_RTOL = 1e-12


class InfeasibleBudgetError(ValueError):
    """The total sample size cannot honour the stage-one floors."""

    def __init__(self, detail: str):
        super().__init__(f"sample budget too small: {detail}")


class SchemeKind(str, enum.Enum):
    TWO_STAGE = "two_stage"
    HYBRID = "hybrid"
    FIXED_EQUAL = "fixed_equal"
    FIXED_CUSTOM = "fixed_custom"


@dataclass(frozen=True)
class Scheme:
    kind: SchemeKind
    sizes: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if self.kind is SchemeKind.FIXED_CUSTOM:
            if self.sizes is None:
                raise ValueError("a fixed_custom scheme needs explicit sizes")
            sizes = tuple(tuple(int(x) for x in g) for g in self.sizes)
            if any(x < 0 for g in sizes for x in g):
                raise ValueError("fixed_custom sizes must be non-negative")
            object.__setattr__(self, "sizes", sizes)
        elif self.sizes is not None:
            raise ValueError(f"{self.kind.value} takes no sizes")

    @classmethod
    def two_stage(cls) -> "Scheme":
        return cls(SchemeKind.TWO_STAGE)

    @classmethod
    def hybrid(cls) -> "Scheme":
        return cls(SchemeKind.HYBRID)

    @classmethod
    def fixed_equal(cls) -> "Scheme":
        return cls(SchemeKind.FIXED_EQUAL)

    @classmethod
    def fixed_custom(cls, sizes) -> "Scheme":
        return cls(SchemeKind.FIXED_CUSTOM, sizes)

    @property
    def label(self) -> str:
        return self.kind.value

    @property
    def is_fixed(self) -> bool:
        return self.kind in (SchemeKind.FIXED_EQUAL, SchemeKind.FIXED_CUSTOM)


@dataclass(frozen=True)
class AllocationPlan:
    """Final sample sizes.

    ``per_subsystem`` holds one entry per component for the flat two-stage
    scheme (each component is its own share there) and one entry per group
    otherwise.  ``per_component`` is filled for the hybrid and fixed schemes.
    """

    total: int
    stage_one: int
    per_subsystem: tuple[int, ...]
    stage_one_tilde: int | None = None
    per_component: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "per_subsystem", tuple(int(x) for x in self.per_subsystem))
        if self.per_component is not None:
            object.__setattr__(
                self, "per_component", tuple(tuple(int(x) for x in g) for g in self.per_component)
            )

    def component_sizes(self) -> tuple[tuple[int, ...], ...]:
        if self.per_component is not None:
            return self.per_component
        return (self.per_subsystem,)

    def to_dict(self) -> dict:
        return {
            "m": self.total,
            "L": self.stage_one,
            "L_tilde": self.stage_one_tilde,
            "m_i": list(self.per_subsystem),
            "m_ij": None if self.per_component is None else [list(g) for g in self.per_component],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AllocationPlan":
        m_ij = data.get("m_ij")
        return cls(
            total=int(data["m"]),
            stage_one=int(data["L"]),
            per_subsystem=tuple(data["m_i"]),
            stage_one_tilde=data.get("L_tilde"),
            per_component=None if m_ij is None else tuple(tuple(g) for g in m_ij),
        )


def stage_one_size(m: int) -> int:
    if m < 1:
        raise ValueError(f"total sample size must be positive, got {m}")
    return math.isqrt(m)


def predictor(m: int, weights: Sequence[float]) -> list[float]:
    roots = [math.sqrt(w) for w in weights]
    total = 0.0
    for x in roots:
        total += x
    return [m * (x / total) for x in roots]


def _floor(x: float) -> int:
    k = math.floor(x)
    if x - k > 1.0 - _FLOOR_RTOL * max(1.0, abs(x)):
        k += 1
    return k


def _corrected_split(m: int, predicted: Sequence[float], floors: Sequence[int]) -> list[int]:
    """Corrector ``max(floor_i, [predicted_i])`` for all but the last share.

    The last share takes the remainder.  If that leaves it under its floor,
    the largest other share (lowest index on ties) gives up one unit at a
    time until the floor is met.
    """
    n = len(predicted)
    if sum(floors) > m:
        raise InfeasibleBudgetError(f"floors {list(floors)} exceed m={m}")
    sizes = [max(floors[i], _floor(predicted[i])) for i in range(n - 1)]
    sizes.append(m - sum(sizes))
    while sizes[-1] < floors[-1]:
        donors = [i for i in range(n - 1) if sizes[i] > floors[i]]
        if not donors:
            raise InfeasibleBudgetError(f"cannot raise the last share to {floors[-1]}")
        k = max(donors, key=lambda i: (sizes[i], -i))
        sizes[k] -= 1
        sizes[-1] += 1
    return sizes


def _parallel_split(
    total: int,
    priors: Sequence[BetaParams],
    counts: Sequence[ComponentCounts],
    floor: int,
    *,
    printed: bool = False,
) -> list[int]:
    weights = u_weights(priors, counts, printed=printed)
    return _corrected_split(total, predictor(total, weights), [floor] * len(priors))


def _check_stage_one(counts: Sequence[ComponentCounts], size: int) -> None:
    for c in counts:
        if c.trials != size:
            raise StructureError(f"stage-one data must have {size} trials per component, got {c.trials}")


def two_stage_allocate(
    m: int,
    priors: Sequence[BetaParams],
    stage_one_data: Sequence[ComponentCounts],
    *,
    printed: bool = False,
) -> AllocationPlan:
    """Two-stage plan for a parallel system of ``len(priors)`` components."""
    L = stage_one_size(m)
    if len(stage_one_data) != len(priors):
        raise StructureError("stage-one data and priors have different lengths")
    if len(priors) * L > m:
        raise InfeasibleBudgetError(f"{len(priors)} components x L={L} > m={m}")
    _check_stage_one(stage_one_data, L)
    sizes = _parallel_split(m, priors, stage_one_data, L, printed=printed)
    return AllocationPlan(total=m, stage_one=L, per_subsystem=tuple(sizes))


def _hybrid_floors(spec: SystemSpec, L: int, L_tilde: int) -> list[int]:
    # A subsystem must also fit L_tilde units on each of its components.
    return [max(L, len(g) * L_tilde) for g in spec.groups]


def hybrid_allocate(
    m: int,
    spec: SystemSpec,
    stage_one_data: Sequence[Sequence[ComponentCounts]],
) -> AllocationPlan:
    """Hybrid two-stage plan for a parallel-series system."""
    if spec.topology is not Topology.PARALLEL_SERIES:
        raise StructureError(f"hybrid allocation needs a parallel-series system, got {spec.topology.value}")
    L = stage_one_size(m)
    L_tilde = math.isqrt(L)
    floors = _hybrid_floors(spec, L, L_tilde)
    if sum(floors) > m:
        raise InfeasibleBudgetError(f"subsystem floors {floors} exceed m={m}")
    ledger = ObservationLedger(tuple(tuple(g) for g in stage_one_data))
    if ledger.shape != spec.shape:
        raise StructureError(f"stage-one data shape {ledger.shape} != system shape {spec.shape}")
    for g in ledger.counts:
        _check_stage_one(g, L_tilde)

    bw = [b * w for b, w in zip((b_constant(g) for g in spec.groups), w_weights(spec, ledger))]
    predicted = [float(_floor(x)) for x in predictor(m, bw)]
    subsystem = _corrected_split(m, predicted, floors)
    components = tuple(
        tuple(_parallel_split(mi, gp, gc, L_tilde))
        for mi, gp, gc in zip(subsystem, spec.groups, ledger.counts)
    )
    return AllocationPlan(
        total=m,
        stage_one=L,
        per_subsystem=tuple(subsystem),
        stage_one_tilde=L_tilde,
        per_component=components,
    )


def _canonical(spec: SystemSpec, ledger: ObservationLedger | None = None):
    if spec.topology in (Topology.SERIES, Topology.SERIES_PARALLEL):
        return dualize(spec), None if ledger is None else ledger.swapped()
    return spec, ledger


def _check_scheme_topology(spec: SystemSpec, scheme: Scheme) -> None:
    if scheme.kind is SchemeKind.TWO_STAGE and not spec.topology.is_flat:
        raise StructureError("the two-stage scheme needs a parallel or series system")
    if scheme.kind is SchemeKind.HYBRID and spec.topology.is_flat:
        raise StructureError("the hybrid scheme needs a parallel-series or series-parallel system")


def stage_one_trials(scheme: Scheme, m: int) -> int:
    """Units tested on every component before any adaptive decision."""
    if scheme.kind is SchemeKind.TWO_STAGE:
        return stage_one_size(m)
    if scheme.kind is SchemeKind.HYBRID:
        return math.isqrt(stage_one_size(m))
    return 0


def _fixed_sizes(spec: SystemSpec, scheme: Scheme, m: int) -> tuple[tuple[int, ...], ...]:
    if scheme.kind is SchemeKind.FIXED_CUSTOM:
        sizes = scheme.sizes
        if tuple(len(g) for g in sizes) != spec.shape:
            raise StructureError(f"fixed_custom sizes shape does not match system shape {spec.shape}")
        if sum(map(sum, sizes)) != m:
            raise ValueError(f"fixed_custom sizes sum to {sum(map(sum, sizes))}, not m={m}")
        return sizes
    k = spec.n_components
    base, extra = divmod(m, k)
    flat = [base + (1 if i < extra else 0) for i in range(k)]
    out, pos = [], 0
    for n in spec.shape:
        out.append(tuple(flat[pos:pos + n]))
        pos += n
    return tuple(out)


def check_feasible(spec: SystemSpec, scheme: Scheme, m: int) -> None:
    """Raise unless ``m`` satisfies the scheme's budget precondition."""
    _check_scheme_topology(spec, scheme)
    if m < 0 or (m == 0 and not scheme.is_fixed):
        raise InfeasibleBudgetError(f"m={m}")
    if scheme.is_fixed:
        _fixed_sizes(spec, scheme, m)
        return
    canon, _ = _canonical(spec)
    L = stage_one_size(m)
    if scheme.kind is SchemeKind.TWO_STAGE:
        if canon.n_components * L > m:
            raise InfeasibleBudgetError(f"{canon.n_components} components x L={L} > m={m}")
    else:
        floors = _hybrid_floors(canon, L, math.isqrt(L))
        if sum(floors) > m:
            raise InfeasibleBudgetError(f"subsystem floors {floors} exceed m={m}")


def plan_for(
    spec: SystemSpec, scheme: Scheme, m: int, stage_one: ObservationLedger | None = None
) -> AllocationPlan:
    """Plan for any topology and scheme; series forms go through the dual."""
    check_feasible(spec, scheme, m)
    if scheme.is_fixed:
        sizes = _fixed_sizes(spec, scheme, m)
        return AllocationPlan(
            total=m,
            stage_one=0,
            per_subsystem=tuple(sum(g) for g in sizes),
            per_component=sizes,
        )
    if stage_one is None:
        raise ValueError(f"the {scheme.label} scheme needs stage-one data")
    canon, data = _canonical(spec, stage_one)
    if data.shape != canon.shape:
        raise StructureError(f"stage-one data shape {data.shape} != system shape {canon.shape}")
    if scheme.kind is SchemeKind.TWO_STAGE:
        return two_stage_allocate(m, canon.groups[0], data.counts[0])
    return hybrid_allocate(m, canon, data.counts)
