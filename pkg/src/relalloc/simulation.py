"""Seeded Monte Carlo estimation of Bayes risks and allocation fractions.

Replication ``k`` of a run draws everything from streams keyed by
``(master_seed, k)`` (see ``_streams``), replications are evaluated in
fixed-size blocks, and the per-replication losses are reduced with
``math.fsum``.  The thread count therefore never changes a result.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from ._reference import SimProblem, replicate
from .allocation import Scheme, SchemeKind, check_feasible
from .core_model import SystemSpec
from .risk import asymptotic_constant, b_constant

BLOCK_SIZE = 4096

CSV_HEADER = (
    "m",
    "scheme",
    "risk_estimate",
    "std_error",
    "m_times_risk",
    "target_constant",
    "replications",
    "seed",
)


class LossMode(str, enum.Enum):
    POSTERIOR_VARIANCE = "posterior_variance"
    SQUARED_ERROR = "squared_error"
    BOTH = "both"


class SimulationError(RuntimeError):
    """One or more grid points failed; ``partial`` holds the rows that worked."""

    def __init__(self, failures, partial):
        self.failures = failures
        self.partial = partial
        detail = "; ".join(f"m={m}: {exc}" for m, exc in failures)
        super().__init__(f"{len(failures)} grid point(s) failed: {detail}")


@dataclass(frozen=True)
class SimulationConfig:
    spec: SystemSpec
    scheme: Scheme
    m_grid: tuple[int, ...]
    replications: int
    master_seed: int = 0
    loss_mode: LossMode = LossMode.POSTERIOR_VARIANCE
    output_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "m_grid", tuple(int(m) for m in self.m_grid))
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))
        if self.replications < 1:
            raise ValueError(f"replications must be at least 1, got {self.replications}")
        for m in self.m_grid:
            check_feasible(self.spec, self.scheme, m)

    def with_seed(self, seed: int) -> "SimulationConfig":
        return SimulationConfig(
            self.spec, self.scheme, self.m_grid, self.replications, seed,
            self.loss_mode, self.output_path,
        )


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    m: int
    p_true: tuple[tuple[float, ...], ...]
    sizes: tuple[tuple[int, ...], ...]
    successes: tuple[tuple[int, ...], ...]
    posterior_variance: float
    squared_error: float


@dataclass(frozen=True)
class RiskRow:
    m: int
    scheme: str
    risk_estimate: float
    std_error: float | None
    m_times_risk: float
    target_constant: float
    replications: int
    seed: int
    loss_mode: str = LossMode.POSTERIOR_VARIANCE.value
    squared_error_estimate: float | None = None
    squared_error_std_error: float | None = None

    @property
    def m_times_std_error(self) -> float | None:
        return None if self.std_error is None else self.m * self.std_error

    def csv_fields(self) -> list[str]:
        return [
            str(self.m),
            self.scheme,
            _fmt(self.risk_estimate),
            "" if self.std_error is None else _fmt(self.std_error),
            _fmt(self.m_times_risk),
            _fmt(self.target_constant),
            str(self.replications),
            str(self.seed),
        ]


def _fmt(x: float) -> str:
    return format(x, ".17g")


@dataclass
class RiskReport:
    rows: list[RiskRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.csv_fields())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RiskReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            m, scheme, risk, se, mr, target, reps, seed = rec
            rows.append(RiskRow(
                m=int(m), scheme=scheme, risk_estimate=float(risk),
                std_error=None if se == "" else float(se), m_times_risk=float(mr),
                target_constant=float(target), replications=int(reps), seed=int(seed),
            ))
        return cls(rows)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("RELALLOC_THREADS", "1") or 1)
    if threads < 1:
        raise ValueError(f"thread count must be positive, got {threads}")
    return threads


def _regroup(flat, shape):
    out, pos = [], 0
    for n in shape:
        out.append(tuple(flat[pos:pos + n]))
        pos += n
    return tuple(out)


def run_replication(config: SimulationConfig, m: int, replication_index: int) -> ReplicationRecord:
    """One replication through the pure-Python reference path."""
    check_feasible(config.spec, config.scheme, m)
    problem = SimProblem.build(config.spec, config.scheme)
    rep = replicate(problem, m, config.master_seed, replication_index)
    return ReplicationRecord(
        index=replication_index,
        m=m,
        p_true=rep.p_true,
        sizes=rep.sizes,
        successes=tuple(tuple(c.successes for c in g) for g in rep.ledger.counts),
        posterior_variance=rep.posterior_variance,
        squared_error=rep.squared_error,
    )


def simulate_losses(
    config: SimulationConfig,
    m: int,
    *,
    threads: int | None = None,
    backend: str | None = None,
    block_size: int = BLOCK_SIZE,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-replication posterior variances and squared errors, in index order."""
    check_feasible(config.spec, config.scheme, m)
    problem = SimProblem.build(config.spec, config.scheme)
    bounds = [
        (lo, min(lo + block_size, config.replications))
        for lo in range(0, config.replications, block_size)
    ]

    def work(bound):
        return _backend.simulate_block(problem, m, config.master_seed, *bound, backend=backend)

    threads = resolve_threads(threads)
    if threads == 1 or len(bounds) == 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    pv = np.concatenate([p[0] for p in parts])
    se = np.concatenate([p[1] for p in parts])
    return pv, se


def _mean_and_se(x: np.ndarray) -> tuple[float, float | None]:
    n = len(x)
    mean = math.fsum(x) / n
    if n < 2:
        return mean, None
    var = math.fsum((x - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def target_constant(spec: SystemSpec) -> float:
    return asymptotic_constant(spec)


def estimate_bayes_risk(
    config: SimulationConfig,
    m: int,
    *,
    threads: int | None = None,
    backend: str | None = None,
) -> RiskRow:
    pv, se = simulate_losses(config, m, threads=threads, backend=backend)
    mode = config.loss_mode
    primary = se if mode is LossMode.SQUARED_ERROR else pv
    mean, err = _mean_and_se(primary)
    alt_mean = alt_err = None
    if mode is LossMode.BOTH:
        alt_mean, alt_err = _mean_and_se(se)
    return RiskRow(
        m=m,
        scheme=config.scheme.label,
        risk_estimate=mean,
        std_error=err,
        m_times_risk=m * mean,
        target_constant=target_constant(config.spec),
        replications=config.replications,
        seed=config.master_seed,
        loss_mode=mode.value,
        squared_error_estimate=alt_mean,
        squared_error_std_error=alt_err,
    )


def convergence_study(
    config: SimulationConfig, *, threads: int | None = None, backend: str | None = None
) -> RiskReport:
    report = RiskReport()
    failures = []
    for m in config.m_grid:
        try:
            report.rows.append(estimate_bayes_risk(config, m, threads=threads, backend=backend))
        except (ValueError, RuntimeError) as exc:
            failures.append((m, exc))
    if failures:
        raise SimulationError(failures, report)
    return report


@dataclass(frozen=True)
class FractionResult:
    m: int
    level: str
    fractions: tuple[float, ...]
    targets: tuple[float, ...]
    sizes: tuple[tuple[int, ...], ...]

    @property
    def max_deviation(self) -> float:
        return max(abs(f - t) for f, t in zip(self.fractions, self.targets))

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "level": self.level,
            "fractions": list(self.fractions),
            "targets": list(self.targets),
            "max_deviation": self.max_deviation,
            "sizes": [list(g) for g in self.sizes],
        }


def parallel_fraction_targets(p: Sequence[float]) -> list[float]:
    """``sqrt(V_i) / sum_j sqrt(V_j)`` at known reliabilities of a parallel system."""
    roots = []
    for i, pi in enumerate(p):
        v = math.sqrt(pi * (1.0 - pi))
        for j, pj in enumerate(p):
            if j != i:
                v *= 1.0 - pj
        roots.append(v)
    total = math.fsum(roots)
    return [x / total for x in roots]


def hybrid_fraction_targets(spec: SystemSpec, p: Sequence[Sequence[float]]) -> list[float]:
    """``sqrt(B_i Z_i) / sum_k sqrt(B_k Z_k)`` for a parallel-series system."""
    subsystem = [1.0 - math.prod(1.0 - x for x in g) for g in p]
    roots = []
    for i, g in enumerate(spec.groups):
        z = math.prod(s for l, s in enumerate(subsystem) if l != i)
        roots.append(math.sqrt(b_constant(g)) * z)
    total = math.fsum(roots)
    return [x / total for x in roots]


def fraction_study(
    config: SimulationConfig,
    m: int,
    p_true: Sequence[float],
    replication_index: int = 0,
) -> FractionResult:
    """Run the scheme once on data from fixed reliabilities and compare shares with their limits.

    ``p_true`` lists the component reliabilities of ``config.spec`` in
    group-major order.
    """
    spec, scheme = config.spec, config.scheme
    if scheme.kind not in (SchemeKind.TWO_STAGE, SchemeKind.HYBRID):
        raise ValueError("fraction studies need the two-stage or hybrid scheme")
    p = [float(x) for x in p_true]
    if len(p) != spec.n_components:
        raise ValueError(f"p_true has {len(p)} entries, the system has {spec.n_components} components")
    if any(not 0.0 < x < 1.0 for x in p):
        raise ValueError("p_true entries must lie strictly between 0 and 1")
    check_feasible(spec, scheme, m)

    problem = SimProblem.build(spec, scheme)
    canon = problem.canonical
    if canon is not spec:
        p = [1.0 - x for x in p]
    rep = replicate(problem, m, config.master_seed, replication_index, p_true=p)
    groups = _regroup(p, canon.shape)
    if scheme.kind is SchemeKind.TWO_STAGE:
        shares = rep.sizes[0]
        targets = parallel_fraction_targets(groups[0])
        level = "component"
    else:
        shares = tuple(sum(g) for g in rep.sizes)
        targets = hybrid_fraction_targets(canon, groups)
        level = "subsystem"
    return FractionResult(
        m=m,
        level=level,
        fractions=tuple(s / m for s in shares),
        targets=tuple(targets),
        sizes=rep.sizes,
    )
