"""Posterior variances, allocation weights and asymptotic risk constants.

Weights are posterior expectations of latent quantities:

* ``u_weight``: ``E[p_i (1 - p_i) prod_{j != i} (1 - p_j)^2 | data]`` for a
  parallel group,
* ``w_weight``: ``E[prod_{l != i} p_l^2 | data]`` across the subsystems of a
  parallel-series system,
* ``b_constant``: the prior constant ``E[(sum_j sqrt(V_ij))^2]`` of one
  parallel subsystem.

Passing ``printed=True`` to the weight functions reproduces the typeset
variants of those formulas (``a(a+1)`` factors in ``u_weight`` and an extra
``(r+m+1)`` in the linear term of ``w_weight``).  They exist for comparison
only; nothing else in the package uses them.
"""

from __future__ import annotations

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
    beta_moment,
    check_ledger,
    dualize,
    posterior_moments,
    posterior_params,
)


@dataclass(frozen=True)
class RiskWeights:
    u: tuple[tuple[float, ...], ...]
    w: tuple[float, ...]
    b: tuple[float, ...]


def _fail_moments(post: BetaParams, printed: bool = False) -> tuple[float, float]:
    """First and second posterior moments of ``1 - p``."""
    a, b = post.alpha, post.beta
    r = a + b
    second = b * (b + 1.0) / (r * (r + 1.0))
    first = b / (r * (r + 1.0)) if printed else b / r
    return first, second


def u_weight(
    priors: Sequence[BetaParams],
    counts: Sequence[ComponentCounts],
    i: int,
    *,
    printed: bool = False,
) -> float:
    if len(priors) != len(counts):
        raise StructureError("priors and counts must be aligned")
    if not 0 <= i < len(priors):
        raise IndexError(f"component index {i} out of range for {len(priors)} components")
    posts = [posterior_params(p, c) for p, c in zip(priors, counts)]
    a, b = posts[i].alpha, posts[i].beta
    r = a + b
    value = a * b / (r * (r + 1.0))
    for j, post in enumerate(posts):
        if j == i:
            continue
        x = post.alpha if printed else post.beta
        rj = post.r
        value *= x * (x + 1.0) / (rj * (rj + 1.0))
    return value


def u_weights(priors, counts, *, printed: bool = False) -> list[float]:
    return [u_weight(priors, counts, i, printed=printed) for i in range(len(priors))]


def posterior_variance(spec: SystemSpec, ledger: ObservationLedger) -> float:
    """Exact posterior variance of the system reliability."""
    return float(posterior_moments(spec, ledger).var)


def _require_parallel_series(spec: SystemSpec) -> None:
    if spec.topology is not Topology.PARALLEL_SERIES:
        raise StructureError(
            f"expected a parallel-series system, got {spec.topology.value}; dualize first"
        )


def subsystem_square_moments(
    priors: Sequence[BetaParams],
    counts: Sequence[ComponentCounts] | None = None,
    *,
    printed: bool = False,
) -> tuple[float, float]:
    """``(E[p_l], E[p_l^2])`` for a parallel subsystem under its (posterior) law."""
    if counts is None:
        counts = [ComponentCounts()] * len(priors)
    lin = 1.0
    sq = 1.0
    lin_printed = 1.0
    for prior, c in zip(priors, counts):
        post = posterior_params(prior, c)
        first, second = _fail_moments(post)
        lin *= first
        sq *= second
        if printed:
            lin_printed *= _fail_moments(post, printed=True)[0]
    second_moment = 1.0 - 2.0 * (lin_printed if printed else lin) + sq
    return 1.0 - lin, second_moment


def w_weight(
    spec: SystemSpec, ledger: ObservationLedger, i: int, *, printed: bool = False
) -> float:
    _require_parallel_series(spec)
    check_ledger(spec, ledger)
    if not 0 <= i < len(spec.groups):
        raise IndexError(f"subsystem index {i} out of range for {len(spec.groups)} subsystems")
    value = 1.0
    for l, (gp, gc) in enumerate(zip(spec.groups, ledger.counts)):
        if l == i:
            continue
        value *= subsystem_square_moments(gp, gc, printed=printed)[1]
    return value


def w_weights(spec: SystemSpec, ledger: ObservationLedger, *, printed: bool = False) -> list[float]:
    return [w_weight(spec, ledger, i, printed=printed) for i in range(len(spec.groups))]


def _sqrt_v_expansion(priors: Sequence[BetaParams]) -> float:
    # E[(sum_j sqrt(V_j))^2] expanded under prior independence.
    diag = [beta_moment(p, 1, 1) for p in priors]
    cross = [beta_moment(p, 0.5, 1.5) for p in priors]
    fail_sq = [beta_moment(p, 0, 2) for p in priors]
    n = len(priors)
    total = 0.0
    for j in range(n):
        term = diag[j]
        for l in range(n):
            if l != j:
                term *= fail_sq[l]
        total += term
    for j in range(n):
        for k in range(n):
            if j == k:
                continue
            term = cross[j] * cross[k]
            for l in range(n):
                if l != j and l != k:
                    term *= fail_sq[l]
            total += term
    return total


def b_constant(subsystem_priors: Sequence[BetaParams]) -> float:
    if not subsystem_priors:
        raise ValueError("a subsystem needs at least one component")
    return _sqrt_v_expansion(subsystem_priors)


def asymptotic_constant_parallel(priors: Sequence[BetaParams]) -> float:
    """Limit of ``m * R_m`` for the two-stage scheme on a parallel system."""
    if not priors:
        raise ValueError("a parallel system needs at least one component")
    return _sqrt_v_expansion(priors)


def asymptotic_constant_hybrid(spec: SystemSpec) -> float:
    """Limit of ``m * R_m`` for the hybrid scheme on a parallel-series system."""
    _require_parallel_series(spec)
    bs = [b_constant(g) for g in spec.groups]
    moments = [subsystem_square_moments(g) for g in spec.groups]
    first = [m[0] for m in moments]
    second = [m[1] for m in moments]
    n = len(bs)
    total = 0.0
    for i in range(n):
        ez = 1.0
        for l in range(n):
            if l != i:
                ez *= second[l]
        total += bs[i] * ez
    for i in range(n):
        for k in range(n):
            if i == k:
                continue
            term = math.sqrt(bs[i] * bs[k]) * first[i] * first[k]
            for l in range(n):
                if l != i and l != k:
                    term *= second[l]
            total += term
    return total


def asymptotic_constant(spec: SystemSpec) -> float:
    """Optimal first-order constant for any topology, via duality if needed."""
    if spec.topology in (Topology.SERIES, Topology.SERIES_PARALLEL):
        spec = dualize(spec)
    if spec.topology is Topology.PARALLEL:
        return asymptotic_constant_parallel(spec.groups[0])
    return asymptotic_constant_hybrid(spec)


def risk_weights(spec: SystemSpec, ledger: ObservationLedger) -> RiskWeights:
    """All weights of a parallel-series (or flat parallel) system at once."""
    check_ledger(spec, ledger)
    u = tuple(
        tuple(u_weights(gp, gc)) for gp, gc in zip(spec.groups, ledger.counts)
    )
    if spec.topology is Topology.PARALLEL:
        w: tuple[float, ...] = (1.0,)
    else:
        w = tuple(w_weights(spec, ledger))
    b = tuple(b_constant(g) for g in spec.groups)
    return RiskWeights(u=u, w=w, b=b)
