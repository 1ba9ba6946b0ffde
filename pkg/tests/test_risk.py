import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from relalloc.core_model import (
    BetaParams,
    ComponentCounts,
    ObservationLedger,
    StructureError,
    SystemSpec,
    Topology,
    dualize,
)
from relalloc.risk import (
    asymptotic_constant,
    asymptotic_constant_hybrid,
    asymptotic_constant_parallel,
    b_constant,
    posterior_variance,
    risk_weights,
    subsystem_square_moments,
    u_weight,
    u_weights,
    w_weight,
    w_weights,
)

U = BetaParams(1, 1)


def _fraction_moment(a, b, s, t):
    # E[p^s (1-p)^t] for integer a, b, s, t via rising factorials
    num = math.prod(a + k for k in range(s)) * math.prod(b + k for k in range(t))
    den = math.prod(a + b + k for k in range(s + t))
    return Fraction(num, den)


def _exact_variance(groups, topology):
    """Exact variance with rational arithmetic, via E[R^2] - E[R]^2 on the structure polynomial."""
    # R = prod_i (1 - prod_j q_ij) for parallel-series; independence factors the moments.
    first = Fraction(1)
    second = Fraction(1)
    for g in groups:
        eq = math.prod((_fraction_moment(a, b, 0, 1) for a, b in g), start=Fraction(1))
        eq2 = math.prod((_fraction_moment(a, b, 0, 2) for a, b in g), start=Fraction(1))
        first *= 1 - eq
        second *= 1 - 2 * eq + eq2
    assert topology is Topology.PARALLEL_SERIES or len(groups) == 1
    return second - first * first


class TestPosteriorVariance:
    def test_uniform_pair(self):
        spec = SystemSpec.parallel([U, U])
        assert posterior_variance(spec, ObservationLedger.empty(spec)) == pytest.approx(7 / 144, rel=1e-14)

    @pytest.mark.parametrize(
        "groups,data",
        [
            ([[(2, 3), (1, 4)]], [[(5, 2), (3, 3)]]),
            ([[(1, 1)], [(2, 5), (3, 1)]], [[(4, 0)], [(2, 1), (6, 6)]]),
            ([[(3, 2), (1, 1), (2, 2)], [(1, 2)]], [[(0, 0), (7, 3), (1, 1)], [(9, 4)]]),
        ],
    )
    def test_against_rational_expansion(self, groups, data):
        topo = Topology.PARALLEL if len(groups) == 1 else Topology.PARALLEL_SERIES
        spec = SystemSpec(topo, tuple(tuple(BetaParams(a, b) for a, b in g) for g in groups))
        ledger = ObservationLedger(tuple(tuple(ComponentCounts(t, s) for t, s in g) for g in data))
        post = [[(a + s, b + t - s) for (a, b), (t, s) in zip(g, d)] for g, d in zip(groups, data)]
        expected = float(_exact_variance(post, Topology.PARALLEL_SERIES))
        assert posterior_variance(spec, ledger) == pytest.approx(expected, rel=1e-12)

    def test_series_duality(self):
        priors = [BetaParams(2, 1), BetaParams(1, 3)]
        ledger = ObservationLedger(((ComponentCounts(4, 3), ComponentCounts(2, 0)),))
        series = SystemSpec.series(priors)
        assert posterior_variance(series, ledger) == pytest.approx(
            posterior_variance(dualize(series), ledger.swapped()), rel=1e-14
        )

    def test_series_parallel_against_monte_carlo(self):
        spec = SystemSpec(Topology.SERIES_PARALLEL, ((BetaParams(2, 1), BetaParams(1, 3)), (BetaParams(4, 2),)))
        ledger = ObservationLedger.empty(spec)
        rng = np.random.default_rng(7)
        p = [rng.beta(pr.alpha, pr.beta, size=400_000) for pr in spec.priors]
        r = 1 - (1 - p[0] * p[1]) * (1 - p[2])
        assert posterior_variance(spec, ledger) == pytest.approx(r.var(), rel=0.02)


def _quad_factor(a, b, s, t):
    dist = stats.beta(a, b)
    return integrate.quad(lambda x: x**s * (1 - x) ** t * dist.pdf(x), 0, 1, epsrel=1e-12)[0]


class TestUWeight:
    def test_symmetric_uniform(self):
        # E[p(1-p)] * E[(1-p)^2] = 1/6 * 1/3
        assert u_weight([U, U], [ComponentCounts(), ComponentCounts()], 0) == pytest.approx(1 / 18)

    @pytest.mark.parametrize(
        "priors,data",
        [
            ([(1, 1), (1, 1)], [(10, 0), (10, 10)]),
            ([(2, 3), (0.5, 0.5), (4, 1)], [(3, 1), (0, 0), (7, 7)]),
        ],
    )
    def test_against_quadrature(self, priors, data):
        ps = [BetaParams(*p) for p in priors]
        cs = [ComponentCounts(*c) for c in data]
        posts = [(a + s, b + t - s) for (a, b), (t, s) in zip(priors, data)]
        for i in range(len(ps)):
            expected = _quad_factor(*posts[i], 1, 1)
            for j, post in enumerate(posts):
                if j != i:
                    expected *= _quad_factor(*post, 0, 2)
            assert u_weight(ps, cs, i) == pytest.approx(expected, rel=1e-9)

    def test_printed_form_uses_alpha(self):
        ps = [U, U]
        cs = [ComponentCounts(10, 0), ComponentCounts(10, 10)]
        # printed form swaps the roles of successes and failures in the cross factor
        assert u_weight(ps, cs, 0, printed=True) == pytest.approx(
            (1 * 11 / (12 * 13)) * (11 * 12 / (12 * 13))
        )
        assert u_weight(ps, cs, 0) == pytest.approx((1 * 11 / (12 * 13)) * (1 * 2 / (12 * 13)))

    def test_index_checks(self):
        with pytest.raises(IndexError):
            u_weight([U], [ComponentCounts()], 1)
        with pytest.raises(StructureError):
            u_weight([U, U], [ComponentCounts()], 0)


prior_st = st.builds(BetaParams, st.floats(0.2, 20), st.floats(0.2, 20))


@st.composite
def parallel_case(draw, max_n=4):
    n = draw(st.integers(1, max_n))
    priors = [draw(prior_st) for _ in range(n)]
    data = []
    for _ in range(n):
        t = draw(st.integers(0, 25))
        data.append(ComponentCounts(t, draw(st.integers(0, t))))
    return priors, data


def _one_step_average(value, priors, data, k):
    """E[value(data + one more unit on k) | data] under the posterior predictive."""
    post = priors[k].alpha + data[k].successes, priors[k].beta + data[k].failures
    p_success = post[0] / (post[0] + post[1])
    up = list(data)
    down = list(data)
    up[k] = data[k] + ComponentCounts(1, 1)
    down[k] = data[k] + ComponentCounts(1, 0)
    return p_success * value(up) + (1 - p_success) * value(down)


class TestMartingale:
    @settings(max_examples=150)
    @given(parallel_case(), st.data())
    def test_u_weight(self, case, data):
        priors, counts = case
        i = data.draw(st.integers(0, len(priors) - 1))
        k = data.draw(st.integers(0, len(priors) - 1))
        value = lambda cs: u_weight(priors, cs, i)
        assert _one_step_average(value, priors, counts, k) == pytest.approx(value(counts), rel=1e-12)

    @settings(max_examples=150)
    @given(st.lists(parallel_case(max_n=3), min_size=1, max_size=3), st.data())
    def test_w_weight(self, groups, data):
        spec = SystemSpec(Topology.PARALLEL_SERIES, tuple(tuple(g[0]) for g in groups))
        ledger = ObservationLedger(tuple(tuple(g[1]) for g in groups))
        i = data.draw(st.integers(0, len(groups) - 1))
        g = data.draw(st.integers(0, len(groups) - 1))
        k = data.draw(st.integers(0, len(groups[g][0]) - 1))

        def value(cs):
            counts = list(ledger.counts)
            counts[g] = tuple(cs)
            return w_weight(spec, ObservationLedger(tuple(counts)), i)

        avg = _one_step_average(value, list(spec.groups[g]), list(ledger.counts[g]), k)
        assert avg == pytest.approx(value(ledger.counts[g]), rel=1e-12)

    def test_printed_u_weight_is_a_different_quantity(self):
        # still a martingale (it is E[p_i q_i p_j^2]) but not the conditional mean of V_i
        priors = [U, U]
        counts = [ComponentCounts(10, 0), ComponentCounts(10, 10)]
        expected = _quad_factor(1, 11, 1, 1) * _quad_factor(11, 1, 0, 2)
        assert u_weight(priors, counts, 0) == pytest.approx(expected, rel=1e-9)
        assert u_weight(priors, counts, 0, printed=True) > 50 * expected


class TestWWeight:
    def test_needs_parallel_series(self):
        spec = SystemSpec.parallel([U, U])
        with pytest.raises(StructureError):
            w_weights(spec, ObservationLedger.empty(spec))

    def test_uniform_two_by_one(self):
        spec = SystemSpec(Topology.PARALLEL_SERIES, ((U,), (U,)))
        assert w_weights(spec, ObservationLedger.empty(spec)) == pytest.approx([1 / 3, 1 / 3])

    def test_subsystem_second_moment_against_quadrature(self):
        priors = [BetaParams(2, 3), BetaParams(1, 4)]
        counts = [ComponentCounts(3, 2), ComponentCounts(5, 1)]
        posts = [(4, 4), (2, 8)]
        d = [stats.beta(*p) for p in posts]
        val, _ = integrate.dblquad(
            lambda y, x: (1 - (1 - x) * (1 - y)) ** 2 * d[0].pdf(x) * d[1].pdf(y), 0, 1, 0, 1,
            epsabs=1e-13, epsrel=1e-11,
        )
        mean, second = subsystem_square_moments(priors, counts)
        assert second == pytest.approx(val, rel=1e-8)
        assert mean == pytest.approx(1 - (4 / 8) * (8 / 10))

    def test_printed_second_moment_is_not_a_moment(self):
        # with the printed linear term E[p^2] exceeds E[p], impossible for p in [0, 1]
        mean, second = subsystem_square_moments([U], printed=True)
        assert second > mean


def _sqrt_v_pair(priors):
    # E[(sqrt(p1 q1) q2 + sqrt(p2 q2) q1)^2], expanded into separable one-dimensional integrals
    (a1, b1), (a2, b2) = [(p.alpha, p.beta) for p in priors]
    square = _quad_factor(a1, b1, 1, 1) * _quad_factor(a2, b2, 0, 2)
    square += _quad_factor(a2, b2, 1, 1) * _quad_factor(a1, b1, 0, 2)
    cross = _quad_factor(a1, b1, 0.5, 1.5) * _quad_factor(a2, b2, 0.5, 1.5)
    return square + 2 * cross


class TestConstants:
    def test_single_component(self):
        assert b_constant([U]) == pytest.approx(1 / 6)
        assert b_constant([BetaParams(2, 1)]) == pytest.approx(2 / 12)

    @pytest.mark.parametrize("priors", [[U, U], [BetaParams(2, 1), BetaParams(1, 3)], [BetaParams(0.7, 2.5), BetaParams(3, 3)]])
    def test_parallel_pair_against_quadrature(self, priors):
        assert asymptotic_constant_parallel(priors) == pytest.approx(_sqrt_v_pair(priors), rel=1e-9)

    def test_uniform_pair_value(self):
        assert asymptotic_constant_parallel([U, U]) == pytest.approx(0.18821739549462, rel=1e-12)

    def test_hybrid_two_by_one(self):
        spec = SystemSpec(Topology.PARALLEL_SERIES, ((U,), (U,)))
        assert asymptotic_constant_hybrid(spec) == pytest.approx(7 / 36, rel=1e-14)

    def test_hybrid_single_group_reduces_to_parallel(self):
        priors = (BetaParams(2, 1), BetaParams(1, 3))
        spec = SystemSpec(Topology.PARALLEL_SERIES, (priors,))
        assert asymptotic_constant_hybrid(spec) == pytest.approx(asymptotic_constant_parallel(priors))

    def test_series_forms_use_the_dual(self):
        priors = [BetaParams(2, 1), BetaParams(1, 3)]
        assert asymptotic_constant(SystemSpec.series(priors)) == pytest.approx(
            asymptotic_constant_parallel([p.swapped() for p in priors])
        )

    def test_permutation_invariance(self):
        a = (BetaParams(2, 1), BetaParams(1, 3))
        b = (BetaParams(4, 2),)
        one = SystemSpec(Topology.PARALLEL_SERIES, (a, b))
        two = SystemSpec(Topology.PARALLEL_SERIES, (b, a[::-1]))
        assert asymptotic_constant(one) == pytest.approx(asymptotic_constant(two), rel=1e-14)


def test_risk_weights_bundle():
    spec = SystemSpec(Topology.PARALLEL_SERIES, ((U, U), (U,)))
    ledger = ObservationLedger.empty(spec)
    rw = risk_weights(spec, ledger)
    assert rw.u[0] == tuple(u_weights([U, U], [ComponentCounts()] * 2))
    assert rw.w == tuple(w_weights(spec, ledger))
    assert rw.b == (b_constant([U, U]), 1 / 6)
