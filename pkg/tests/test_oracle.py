import itertools
import math

import numpy as np
import pytest
from scipy import stats

from relalloc.allocation import Scheme, plan_for
from relalloc.core_model import (
    BetaParams,
    ComponentCounts,
    ObservationLedger,
    SystemSpec,
    Topology,
    dualize,
)
from relalloc.oracle import (
    BudgetExceededError,
    EnumerationBudget,
    beta_binomial_pmf,
    beta_binomial_pmf_vector,
    enumerate_scheme_risk,
    exact_scheme_risk,
    mc_constant_check,
    optimal_fixed_allocation,
)
from relalloc.risk import asymptotic_constant, b_constant, posterior_variance

U = BetaParams(1, 1)
PAIR = SystemSpec.parallel([U, U])


@pytest.mark.parametrize("a,b,n", [(1, 1, 5), (2.5, 0.5, 12), (40, 3, 30)])
def test_beta_binomial_matches_scipy(a, b, n):
    ours = beta_binomial_pmf_vector(a, b, n)
    ref = stats.betabinom(n, a, b).pmf(np.arange(n + 1))
    np.testing.assert_allclose(ours, ref, rtol=1e-12)
    assert beta_binomial_pmf(BetaParams(a, b), n, 0) == pytest.approx(ref[0], rel=1e-12)
    with pytest.raises(ValueError):
        beta_binomial_pmf(BetaParams(a, b), n, n + 1)


def _sequence_risk(spec, scheme, m):
    """Brute force over outcome sequences with the sequential predictive rule."""
    priors = spec.priors
    k = len(priors)
    first = {"two_stage": math.isqrt(m), "hybrid": math.isqrt(math.isqrt(m))}.get(scheme.kind.value, 0)

    def seq_prob(prior, outcomes):
        a, b, prob = prior.alpha, prior.beta, 1.0
        for o in outcomes:
            prob *= (a if o else b) / (a + b)
            a, b = a + o, b + (1 - o)
        return prob

    total = 0.0
    for s1 in itertools.product(itertools.product((0, 1), repeat=first), repeat=k):
        p1 = math.prod(seq_prob(pr, o) for pr, o in zip(priors, s1))
        counts = [ComponentCounts(first, sum(o)) for o in s1]
        ledger = _shape(counts, spec.shape)
        plan = plan_for(spec, scheme, m, None if scheme.is_fixed else ledger)
        extra = [n - first for g in plan.component_sizes() for n in g]
        for s2 in itertools.product(*[itertools.product((0, 1), repeat=d) for d in extra]):
            prob = p1
            final = []
            for pr, o1, o2 in zip(priors, s1, s2):
                prob *= seq_prob(BetaParams(pr.alpha + sum(o1), pr.beta + len(o1) - sum(o1)), o2)
                final.append(ComponentCounts(len(o1) + len(o2), sum(o1) + sum(o2)))
            total += prob * posterior_variance(spec, _shape(final, spec.shape))
    return total


def _shape(flat, shape):
    out, pos = [], 0
    for n in shape:
        out.append(tuple(flat[pos:pos + n]))
        pos += n
    return ObservationLedger(tuple(out))


class TestEnumeration:
    def test_fixed_equal_single_component(self):
        res = enumerate_scheme_risk(SystemSpec.parallel([U]), Scheme.fixed_equal(), 2)
        assert res.risk == pytest.approx(1 / 24, rel=1e-14)
        assert res.total_probability == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize(
        "spec,scheme,m",
        [
            (PAIR, Scheme.two_stage(), 9),
            (SystemSpec.parallel([BetaParams(2, 1), BetaParams(1, 3)]), Scheme.two_stage(), 8),
            (SystemSpec(Topology.PARALLEL_SERIES, ((U,), (BetaParams(2, 2),))), Scheme.hybrid(), 9),
            (SystemSpec.series([U, BetaParams(3, 1)]), Scheme.fixed_equal(), 7),
        ],
    )
    def test_matches_sequence_enumeration(self, spec, scheme, m):
        assert exact_scheme_risk(spec, scheme, m) == pytest.approx(_sequence_risk(spec, scheme, m), rel=1e-12)

    def test_probability_sums_to_one(self):
        res = enumerate_scheme_risk(PAIR, Scheme.two_stage(), 16)
        assert res.total_probability == pytest.approx(1.0, abs=1e-12)
        assert res.paths == 484
        assert res.risk == pytest.approx(0.010021495391733491, rel=1e-12)

    def test_zero_budget_is_prior_variance(self):
        assert exact_scheme_risk(PAIR, Scheme.fixed_equal(), 0) == pytest.approx(7 / 144)

    def test_budget(self):
        with pytest.raises(BudgetExceededError) as info:
            exact_scheme_risk(PAIR, Scheme.two_stage(), 400, EnumerationBudget(1000))
        assert info.value.max_paths == 1000
        with pytest.raises(ValueError):
            EnumerationBudget(0)

    @pytest.mark.parametrize("m", [2, 8, 16])
    def test_series_duality(self, m):
        series = SystemSpec.series([BetaParams(2, 1), BetaParams(1, 3)])
        for scheme in (Scheme.fixed_equal(), Scheme.two_stage()):
            assert exact_scheme_risk(series, scheme, m) == pytest.approx(
                exact_scheme_risk(dualize(series), scheme, m), abs=1e-12
            )

    def test_risk_decreases_with_budget(self):
        risks = [exact_scheme_risk(PAIR, Scheme.fixed_equal(), m) for m in (2, 4, 8, 16)]
        assert all(a > b for a, b in zip(risks, risks[1:]))


class TestOptimalFixed:
    def test_symmetric(self):
        alloc, risk = optimal_fixed_allocation(PAIR, 16)
        assert alloc == (8, 8)
        assert risk == pytest.approx(0.010833333333333346, rel=1e-12)

    def test_asymmetric_fixture(self):
        spec = SystemSpec.parallel([U, BetaParams(5, 5)])
        alloc, risk = optimal_fixed_allocation(spec, 16)
        assert alloc == (10, 6)
        assert risk == pytest.approx(0.008325441919191932, rel=1e-12)

    def test_beats_every_fixed_split(self):
        spec = SystemSpec.parallel([BetaParams(2, 1), BetaParams(1, 3)])
        _, best = optimal_fixed_allocation(spec, 10)
        for k in range(11):
            assert best <= exact_scheme_risk(spec, Scheme.fixed_custom([[k, 10 - k]]), 10) + 1e-15

    def test_budget(self):
        with pytest.raises(BudgetExceededError):
            optimal_fixed_allocation(SystemSpec.parallel([U] * 3), 40, EnumerationBudget(100))


class TestMcConstant:
    def test_uniform_single(self):
        check = mc_constant_check([U], 200_000, 1)
        assert abs(check.z_score(1 / 6)) < 4

    def test_parallel_pair(self):
        check = mc_constant_check(PAIR, 200_000, 2)
        assert abs(check.z_score(asymptotic_constant(PAIR))) < 4

    def test_hybrid(self):
        spec = SystemSpec(Topology.SERIES_PARALLEL, ((U, BetaParams(2, 1)), (BetaParams(1, 3),)))
        check = mc_constant_check(spec, 200_000, 3)
        assert abs(check.z_score(asymptotic_constant(spec))) < 4

    def test_seeded(self):
        assert mc_constant_check([U], 1000, 9) == mc_constant_check([U], 1000, 9)
        with pytest.raises(ValueError):
            mc_constant_check([U], 1, 0)

    def test_subsystem_constant(self):
        group = [BetaParams(2, 1), BetaParams(1, 3)]
        check = mc_constant_check(group, 200_000, 4)
        assert abs(check.z_score(b_constant(group))) < 4


def test_degenerate_check_has_zero_error():
    spec = SystemSpec(Topology.PARALLEL_SERIES, ((U,),))
    check = mc_constant_check(spec, 1000, 0)
    assert check.std_error == pytest.approx(0.0, abs=1e-15)
    assert check.z_score(1 / 6) == 0.0
    assert check.z_score(0.2) == -math.inf


class TestSmallExamples:
    def test_uniform_marginal_over_counts(self):
        np.testing.assert_allclose(beta_binomial_pmf_vector(1, 1, 2), [1 / 3] * 3, rtol=1e-14)
        assert beta_binomial_pmf(U, 0, 0) == pytest.approx(1.0)
        assert math.fsum(beta_binomial_pmf_vector(2.5, 0.7, 7)) == pytest.approx(1.0, abs=1e-12)

    def test_zero_budget_single_component(self):
        assert exact_scheme_risk(SystemSpec.parallel([U]), Scheme.fixed_equal(), 0) == pytest.approx(1 / 12)

    def test_single_component_optimum(self):
        assert optimal_fixed_allocation(SystemSpec.parallel([U]), 7)[0] == (7,)

    def test_constant_dominates_diagonal(self):
        from relalloc.risk import asymptotic_constant_parallel, u_weights
        from relalloc.core_model import ComponentCounts as C

        priors = [BetaParams(2, 1), BetaParams(1, 3), U]
        assert asymptotic_constant_parallel(priors) >= math.fsum(u_weights(priors, [C()] * 3))
