import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from vnentropy.chan import (
    conditional_expectation_map,
    convex_combination,
    identity_map,
    lam,
    random_bimodule_channel,
    random_majorized_pair,
)
from vnentropy.entropy import (
    PartitionOfUnity,
    araki,
    dp_witness,
    h_closed_form_subalgebra,
    h_downward,
    h_partition_search,
    is_monotone,
    multiplier_densities,
    partition_value,
    renyi,
    s_half_closed_form,
    s_p,
    s_tau,
    umegaki,
    upper_bound_gap_formula,
    upper_bound_value,
)
from vnentropy.harness import SUITES, run_trial, theorem_harness, trial_seed
from vnentropy.inclusion import build_inclusion
from vnentropy.mmalg import (
    AlgebraElement,
    MultiMatrixAlgebra,
    TraceWeights,
    random_element,
    random_state,
    support_projection,
    trace,
)
from vnentropy.tower import Tower, downward_criterion

from conftest import INSTANCES, LOWER, LOG2, downward, factor_inclusions, inclusion, tower

NAMES = sorted(INSTANCES)
DOWN = sorted(LOWER)
M2 = MultiMatrixAlgebra((2,))
TR = TraceWeights((1.0,))
seeds = st.integers(0, 2**31 - 1)
H_THIRD = math.log(3) - (2 / 3) * math.log(2)


def diag2(a, b):
    return AlgebraElement(M2, [np.diag([a, b]).astype(complex)])


def id_e(t):
    return identity_map(t.inc.big), conditional_expectation_map(t.inc)


# -- Umegaki ------------------------------------------------------------------------


def test_umegaki_of_equal_arguments():
    rho = random_state(0, M2)
    assert umegaki(rho, rho, TR).value == pytest.approx(0.0, abs=1e-12)


def test_umegaki_pure_against_maximally_mixed():
    res = umegaki(diag2(1, 0), diag2(0.5, 0.5), TR)
    assert res.value == pytest.approx(LOG2, abs=1e-12)
    assert res.support_ok and res.rank_rho == 1 and res.rank_sigma == 2


def test_umegaki_support_failure():
    res = umegaki(diag2(1, 0), diag2(0, 1), TR)
    assert res.value == math.inf and not res.support_ok


def test_umegaki_rejects_non_positive():
    with pytest.raises(ValueError):
        umegaki(diag2(1, -1), diag2(0.5, 0.5), TR)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_umegaki_is_nonnegative_for_states(seed):
    alg = MultiMatrixAlgebra((2, 1))
    w = TraceWeights((0.3, 0.4))
    rng = np.random.default_rng(seed)
    rho, sigma = random_state(rng, alg, w), random_state(rng, alg, w)
    assert umegaki(rho, sigma, w).value >= -1e-12


# -- sandwiched Rényi ---------------------------------------------------------------


@pytest.mark.parametrize("p", [0.5, 0.75, 1.0, 1.5, 2.0, 7.0, math.inf])
def test_renyi_of_equal_arguments(p):
    rho = random_state(3, M2)
    assert renyi(rho, rho, TR, p).value == pytest.approx(0.0, abs=1e-10)


def test_renyi_at_infinity_example():
    assert renyi(diag2(1, 0), diag2(0.5, 0.5), TR, math.inf).value == pytest.approx(LOG2, abs=1e-12)


def test_renyi_rejects_small_order():
    with pytest.raises(ValueError):
        renyi(diag2(1, 0), diag2(0.5, 0.5), TR, 0.4)


def test_renyi_support_failure_above_one():
    assert renyi(diag2(1, 0), diag2(0, 1), TR, 2.0).value == math.inf


def _classical(a, b, p):
    """Scalar oracle for two-point distributions."""
    pa, pb = (a, 1 - a), (b, 1 - b)
    if p == 1:
        return sum(x * math.log(x / y) for x, y in zip(pa, pb) if x > 0)
    if math.isinf(p):
        return math.log(max(x / y for x, y in zip(pa, pb) if x > 0))
    return math.log(sum(x ** p * y ** (1 - p) for x, y in zip(pa, pb))) / (p - 1)


@settings(max_examples=80, deadline=None)
@given(st.floats(0.02, 0.98), st.floats(0.02, 0.98),
       st.sampled_from([0.5, 0.6, 0.9, 1.0, 1.3, 2.0, 3.5, 10.0, math.inf]))
def test_renyi_matches_classical_for_commuting_states(a, b, p):
    got = renyi(diag2(a, 1 - a), diag2(b, 1 - b), TR, p).value
    assert got == pytest.approx(_classical(a, b, p), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_renyi_is_monotone_in_order(seed):
    alg = MultiMatrixAlgebra((2, 2))
    w = TraceWeights((0.2, 0.3))
    rng = np.random.default_rng(seed)
    rho, sigma = random_state(rng, alg, w), random_state(rng, alg, w)
    grid = [0.5, 0.7, 1.0, 1.5, 2.0, 4.0, 16.0, math.inf]
    vals = [renyi(rho, sigma, w, p).value for p in grid]
    assert is_monotone(vals, 1e-9)


# -- multiplier entropy -------------------------------------------------------------------


def test_s_tau_scalars_in_m2():
    t = tower("C_in_M2")
    assert s_tau(*id_e(t), t).value == pytest.approx(math.log(4), abs=1e-9)


def test_s_tau_scalars_in_c2():
    t = tower("C_in_C2")
    assert s_tau(*id_e(t), t).value == pytest.approx(H_THIRD, abs=1e-9)
    assert H_THIRD == pytest.approx(0.636514, abs=1e-6)


@pytest.mark.parametrize("name", NAMES)
def test_s_tau_of_equal_maps_vanishes(name):
    t = tower(name)
    phi = random_bimodule_channel(t, 1)
    assert s_tau(phi, phi, t).value == pytest.approx(0.0, abs=1e-9)


def test_s_tau_is_infinite_without_majorization():
    t = tower("C_in_M2")
    thin = random_bimodule_channel(t, 0, rank=1)
    res = s_tau(conditional_expectation_map(t.inc), thin, t)
    assert res.value == math.inf and not res.support_ok


@pytest.mark.parametrize("name", NAMES)
def test_s_p_variants_are_consistent(name):
    t = tower(name)
    phi, psi = random_majorized_pair(t, 4)
    st_val = s_tau(phi, psi, t).value
    one = s_p(phi, psi, t, 1.0)
    assert one.normalized.value == pytest.approx(st_val, abs=1e-9)
    assert one.prefixed == pytest.approx(st_val, abs=1e-9)
    for p in (0.5, 2.0, 4.0, math.inf):
        v = s_p(phi, psi, t, p)
        assert v.prefixed == pytest.approx(t.delta * v.raw.value, rel=1e-12)
        # both densities carry mass 1/delta, so rescaling them shifts the value by log(delta)/(p-1)
        shift = 0.0 if math.isinf(p) else math.log(t.delta) / (p - 1)
        assert v.normalized.value == pytest.approx(v.raw.value + shift, abs=1e-9)


@pytest.mark.parametrize("name", DOWN)
def test_s_infinity_is_log_index_on_downward_instances(name):
    t = downward(name).tower
    ident, e = id_e(t)
    top = s_p(ident, e, t, math.inf).value
    assert top == pytest.approx(-math.log(lam(ident, e, t).value), abs=1e-9)
    assert top == pytest.approx(math.log(t.index), abs=1e-9)


FACTOR_CASES = [
    ([1], [[2]]),
    ([1, 1], [[1], [1]]),
    ([1, 1], [[1], [2]]),
    ([2, 1], [[1], [1]]),
    ([1, 1], [[1], [3]]),
    ([1, 2], [[2], [1]]),
]


@pytest.mark.parametrize("dims,adj", FACTOR_CASES)
def test_s_half_closed_form_on_factors(dims, adj):
    m = int((np.array(dims) @ np.array(adj))[0])
    t = Tower(build_inclusion(dims, adj, [1 / m]))
    got = s_p(*id_e(t), t, 0.5).value
    d0_inv_trace = sum(t.inc.central_projection_trace(k, l) / c
                       for (k, l), c in _delta0_coefficients(t).items())
    assert got == pytest.approx(math.log(t.index) - math.log(d0_inv_trace), abs=1e-9)
    assert got == pytest.approx(s_half_closed_form(t), abs=1e-9)


def _delta0_coefficients(t):
    inc = t.inc
    s, w = inc.trace_small.weights, inc.trace_big.weights
    return {(k, l): s[k] * inc.big.dims[l] / (inc.index * inc.small.dims[k] * w[l]) for k, l in inc.central_pairs()}


@pytest.mark.parametrize("dims,adj", [([1], [[2]]), ([1, 1], [[1], [2]]), ([2], [[1]])])
def test_s1_minus_s_half_matches_block_formula(dims, adj):
    """Left failing on purpose: ``sum (n_k a_k / m) log(a_k / n_k)`` disagrees with direct evaluation.

    For ``M_2`` inside itself both entropies vanish while the block sum gives
    ``-log 2``; see the decisions ledger.
    """
    m = int((np.array(dims) @ np.array(adj))[0])
    t = Tower(build_inclusion(dims, adj, [1 / m]))
    ident, e = id_e(t)
    diff = s_p(ident, e, t, 1.0).value - s_p(ident, e, t, 0.5).value
    formula = sum(n * a[0] / m * math.log(a[0] / n) for n, a in zip(dims, adj))
    assert diff == pytest.approx(formula, abs=1e-9)


# -- closed forms ------------------------------------------------------------------------


@pytest.mark.parametrize("name,h,ub,gap", [
    ("C_in_M2", LOG2, math.log(4), LOG2),
    ("C2_in_M2", LOG2, LOG2, 0.0),
    ("C_in_C2", H_THIRD, H_THIRD, 0.0),
])
def test_closed_forms(name, h, ub, gap):
    t = tower(name)
    assert h_closed_form_subalgebra(t.inc) == pytest.approx(h, abs=1e-9)
    assert upper_bound_value(t) == pytest.approx(ub, abs=1e-9)
    assert upper_bound_gap_formula(t.inc) == pytest.approx(gap, abs=1e-9)
    assert s_tau(*id_e(t), t).value == pytest.approx(ub, abs=1e-9)


@pytest.mark.parametrize("dims,adj,tr", [
    ([1], [[2]], [0.5]),
    ([1, 1], [[1], [2]], [1 / 3]),
    ([1, 2], [[3, 0], [1, 1]], [0.1, 0.2]),
    ([1], [[2, 1]], [0.3, 0.4]),
])
def test_gap_matches_formula_when_criterion_fails(dims, adj, tr):
    t = Tower(build_inclusion(dims, adj, tr, normalize=True))
    assert not downward_criterion(t.inc)[0]
    gap = upper_bound_value(t) - h_closed_form_subalgebra(t.inc)
    assert gap == pytest.approx(upper_bound_gap_formula(t.inc), abs=1e-9)
    assert gap > 0


# -- downward formula ------------------------------------------------------------------


@pytest.mark.parametrize("name", DOWN)
def test_h_downward_of_equal_maps(name):
    down = downward(name)
    phi = random_bimodule_channel(down.tower, 0)
    assert h_downward(phi, phi, down).value == pytest.approx(0.0, abs=1e-9)


def test_h_downward_of_scalars_in_c2_extension():
    down = downward("up_C_in_C2")
    t = down.tower
    got = h_downward(*id_e(t), down).value
    assert got == pytest.approx(LOG2, abs=1e-9)
    assert got == pytest.approx(h_closed_form_subalgebra(t.inc), abs=1e-9)


@pytest.mark.parametrize("name", DOWN)
def test_downward_chain(name):
    down = downward(name)
    t = down.tower
    for seed in range(3):
        phi, psi = random_majorized_pair(t, seed)
        hd = h_downward(phi, psi, down).value
        st_val = s_tau(phi, psi, t).value
        assert hd == pytest.approx(st_val, abs=1e-8)
        best = h_partition_search(phi, psi, t, budget=60, seed=seed, e_minus1=down.e_minus1).best
        assert best <= hd + 1e-8


# -- partition search -----------------------------------------------------------------------


def test_partition_of_unity_validation():
    one = M2.identity()
    PartitionOfUnity((diag2(1, 0), diag2(0, 1)))
    with pytest.raises(ValueError):
        PartitionOfUnity((diag2(1, 0),))
    with pytest.raises(ValueError):
        PartitionOfUnity((diag2(2, 1), diag2(-1, 0)))
    with pytest.raises(ValueError):
        PartitionOfUnity(())
    assert len(PartitionOfUnity((one,))) == 1


@pytest.mark.parametrize("name", NAMES)
def test_trivial_partition_is_the_baseline(name):
    t = tower(name)
    phi, psi = random_majorized_pair(t, 2)
    w = t.inc.trace_big
    one = t.inc.big.identity()
    base = umegaki(phi(one), psi(one), w).value
    res = h_partition_search(phi, psi, t, budget=1, seed=0)
    assert res.evaluations == 1
    assert res.best == pytest.approx(base, abs=1e-12)
    assert partition_value(phi, psi, [one], w) == pytest.approx(base, abs=1e-12)


@pytest.mark.parametrize("name", NAMES)
def test_search_is_sound_monotone_and_reproducible(name):
    t = tower(name)
    phi, psi = random_majorized_pair(t, 6)
    a = h_partition_search(phi, psi, t, budget=200, seed=3)
    b = h_partition_search(phi, psi, t, budget=200, seed=3)
    assert a.best == b.best and a.trace == b.trace
    assert all(y >= x for x, y in zip(a.trace, a.trace[1:]))
    assert a.best <= s_tau(phi, psi, t).value + 1e-8
    part = PartitionOfUnity(tuple(a.partition))
    assert partition_value(phi, psi, part.elements, t.inc.trace_big) == pytest.approx(a.best, abs=1e-9)


def test_search_rejects_unknown_strategy():
    t = tower("C_in_C2")
    with pytest.raises(ValueError):
        h_partition_search(*id_e(t), t, strategies=("annealing",))


# -- data-processing witness ------------------------------------------------------------------


@pytest.mark.parametrize("name", NAMES)
def test_dp_witness_is_trace_preserving_and_reproduces_functional(name):
    t = tower(name)
    w = t.inc.trace_big
    phi, psi = random_majorized_pair(t, 9)
    xs = h_partition_search(phi, psi, t, budget=40, seed=1).partition
    rng = np.random.default_rng(5)
    for _ in range(5):
        a = random_element(rng, t.end_mm.algebra)
        total = sum(trace(w, y) for y in dp_witness(t, xs, a))
        assert abs(total - t.tau_m2(t.from_end(a))) < 1e-9
    rho, sigma = multiplier_densities(phi, psi, t)
    lhs = partition_value(phi, psi, xs, w)
    rhs = t.delta * sum(umegaki(a, b, w).value
                        for a, b in zip(dp_witness(t, xs, rho), dp_witness(t, xs, sigma)))
    assert lhs == pytest.approx(rhs, abs=1e-8)


# -- Araki entropy ------------------------------------------------------------------------------


@pytest.mark.parametrize("name", NAMES)
def test_araki_examples(name):
    t = tower(name)
    w = t.inc.trace_big
    phi, psi = random_majorized_pair(t, 10)
    assert araki(psi, psi, w).value == pytest.approx(0.0, abs=1e-9)
    st_val = s_tau(phi, psi, t).value
    assert araki(phi, psi, w).value == pytest.approx(st_val, abs=1e-8)
    e = conditional_expectation_map(t.inc)
    wider = convex_combination([psi, e], [0.5, 0.5])
    assert araki(phi, psi, w, reference=wider).value == pytest.approx(st_val, abs=1e-8)
    assert araki(phi, psi, w, reference=e).value == pytest.approx(st_val, abs=1e-8)


def test_araki_reports_missing_majorization():
    t = tower("C_in_M2")
    thin = random_bimodule_channel(t, 0, rank=1)
    res = araki(conditional_expectation_map(t.inc), thin, t.inc.trace_big)
    assert res.value == math.inf and not res.support_ok


# -- downward criterion versus the entropy gap ---------------------------------------------


FACTORS = list(factor_inclusions(4))


def test_factor_enumeration_size():
    assert len(FACTORS) == 20


@pytest.mark.parametrize("dims,adj", FACTORS, ids=[f"{d}-{a}" for d, a in FACTORS])
def test_criterion_iff_h_dominates_s_half(dims, adj):
    m = int((np.array(dims) @ np.array(adj))[0])
    t = Tower(build_inclusion(dims, adj, [1 / m]))
    ident, e = id_e(t)
    h = h_closed_form_subalgebra(t.inc)
    half = s_p(ident, e, t, 0.5).value
    assert downward_criterion(t.inc)[0] == (h - half >= -1e-9)


# -- property harness ----------------------------------------------------------------------


def test_harness_small_run_is_clean():
    rep = theorem_harness(trials=4, seed=1)
    assert len(rep.rows) == 4 * len(SUITES)
    assert rep.violations == []
    assert set(rep.summary()) == set(SUITES)


@pytest.mark.parametrize("suite", SUITES)
def test_harness_rows_replay_from_their_seed(suite):
    rep = theorem_harness(suites=(suite,), trials=2, seed=7)
    for row in rep.rows:
        assert row.seed == trial_seed(7, suite, row.trial)
        again = run_trial(suite, row.seed, row.trial)
        assert again.instance_digest == row.instance_digest
        assert again.margin == row.margin or (math.isnan(again.margin) and math.isnan(row.margin))


def test_harness_rejects_unknown_suite():
    with pytest.raises(ValueError):
        theorem_harness(suites=("subadditivity",), trials=1)
    with pytest.raises(ValueError):
        run_trial("subadditivity", 0)
