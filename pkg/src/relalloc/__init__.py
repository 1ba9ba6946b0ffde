"""Bayesian two-stage sample allocation for system reliability estimation."""

from ._backend import BACKEND
from .allocation import (
    AllocationPlan,
    InfeasibleBudgetError,
    Scheme,
    SchemeKind,
    dualize,
    hybrid_allocate,
    plan_for,
    stage_one_size,
    two_stage_allocate,
)
from .core_model import (
    BetaParams,
    ComponentCounts,
    ObservationLedger,
    StructureError,
    SystemSpec,
    Topology,
    beta_moment,
    estimate_reliability,
    posterior_params,
)
from .risk import (
    asymptotic_constant,
    asymptotic_constant_hybrid,
    asymptotic_constant_parallel,
    b_constant,
    posterior_variance,
    u_weight,
    w_weight,
)

__version__ = "0.1.0"
