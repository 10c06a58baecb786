import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vnentropy.inclusion import build_inclusion, instance_digest, markov_trace
from vnentropy.mmalg import AlgebraElement, is_positive, random_element, random_positive, random_unitary, trace

from conftest import INSTANCES, downward, inclusion, max_abs

NAMES = sorted(INSTANCES)
seeds = st.integers(0, 2**31 - 1)


# -- construction -------------------------------------------------------------


def test_scalars_in_m2():
    inc = build_inclusion([1], [[2]], [0.5])
    assert inc.big.dims == (2,)
    assert inc.trace_small.weights == pytest.approx((1.0,))
    lam = AlgebraElement(inc.small, [np.array([[2.5 - 1j]])])
    assert inc.embed(lam).allclose(inc.big.identity() * (2.5 - 1j))


def test_diagonal_subalgebra_of_m2():
    inc = build_inclusion([1, 1], [[1], [1]], [0.5])
    y = AlgebraElement(inc.small, [np.array([[3.0]]), np.array([[-1.0]])])
    assert inc.big.dims == (2,)
    assert np.allclose(inc.embed(y).blocks[0], np.diag([3.0, -1.0]))


def test_scalars_in_c2():
    inc = build_inclusion([1], [[1, 1]], [1 / 3, 2 / 3])
    assert inc.big.dims == (1, 1)
    assert inc.trace_small.weights == pytest.approx((1.0,))
    lam = AlgebraElement(inc.small, [np.array([[4.0]])])
    assert [b[0, 0] for b in inc.embed(lam).blocks] == [4.0, 4.0]


def test_copies_are_laid_out_in_order():
    inc = build_inclusion([1, 2], [[2], [1]], [0.25])
    y = AlgebraElement(inc.small, [np.array([[7.0]]), np.arange(4.0).reshape(2, 2)])
    expect = np.zeros((4, 4))
    expect[0, 0] = expect[1, 1] = 7.0
    expect[2:, 2:] = np.arange(4.0).reshape(2, 2)
    assert np.allclose(inc.embed(y).blocks[0], expect)


@pytest.mark.parametrize("bad", [
    dict(dims_small=[1], adjacency=[[2]], trace_spec=[0.0]),
    dict(dims_small=[1], adjacency=[[2]], trace_spec=[-0.5]),
    dict(dims_small=[1, 1], adjacency=[[1], [0]], trace_spec=[0.5]),
    dict(dims_small=[1], adjacency=[[1, 0]], trace_spec=[0.5, 0.5]),
    dict(dims_small=[1], adjacency=[[1.5]], trace_spec=[0.5]),
    dict(dims_small=[1], adjacency=[[2]], trace_spec=[0.5, 0.5]),
    dict(dims_small=[1], adjacency=[[2]], trace_spec="uniform"),
    dict(dims_small=[1, 1], adjacency=[[2]], trace_spec=[0.5]),
])
def test_invalid_data_is_rejected(bad):
    with pytest.raises(ValueError):
        build_inclusion(**bad)


def test_normalize_rescales_trace():
    inc = build_inclusion([1], [[1, 1]], [1, 2], normalize=True)
    assert inc.trace_big.weights == pytest.approx((1 / 3, 2 / 3))
    assert inc.trace_big.normalized


def test_markov_trace_is_normalized_perron_vector():
    adj = np.array([[1, 0], [1, 1]])
    t = markov_trace([1, 2], adj)
    m = np.array([1, 2]) @ adj
    assert m @ t == pytest.approx(1.0)
    ata = adj.T @ adj
    ratio = (ata @ t) / t
    assert np.allclose(ratio, ratio[0])


@pytest.mark.parametrize("name", NAMES)
def test_structural_invariants(name):
    inc = inclusion(name)
    n, m = np.array(inc.small.dims), np.array(inc.big.dims)
    assert np.array_equal(n @ inc.adjacency, m)
    assert np.allclose(inc.adjacency @ np.array(inc.trace_big.weights), inc.trace_small.weights, atol=1e-12)
    units = inc.small.basis()
    assert inc.embed(inc.small.identity()).allclose(inc.big.identity(), 1e-12)
    for a in units:
        assert abs(trace(inc.trace_big, inc.embed(a)) - trace(inc.trace_small, a)) < 1e-12
        assert inc.embed(a.adj()).allclose(inc.embed(a).adj(), 1e-12)
        for b in units:
            assert inc.embed(a @ b).allclose(inc.embed(a) @ inc.embed(b), 1e-12)


def test_instance_digest_is_stable_and_distinguishes():
    a, b = inclusion("C_in_M2"), build_inclusion([1], [[2]], [0.5])
    assert instance_digest(a) == instance_digest(b)
    assert instance_digest(a) != instance_digest(inclusion("C2_in_M2"))
    assert len(instance_digest(a)) == 12


# -- conditional expectation --------------------------------------------------


def test_expectation_onto_scalars_is_normalized_trace():
    inc = inclusion("C_in_M2")
    x = random_element(4, inc.big)
    oracle = trace(inc.trace_big, x)  # weighted trace, tau(1) = 1
    assert inc.expectation_in_big(x).allclose(inc.big.identity() * oracle, 1e-12)


def test_expectation_onto_diagonal_is_pinching():
    inc = inclusion("C2_in_M2")
    x = random_element(5, inc.big)
    assert np.allclose(inc.expectation_in_big(x).blocks[0], np.diag(np.diag(x.blocks[0])))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(NAMES), seeds)
def test_expectation_properties(name, seed):
    inc = inclusion(name)
    rng = np.random.default_rng(seed)
    x = random_element(rng, inc.big)
    a, b = random_element(rng, inc.small), random_element(rng, inc.small)
    y = random_element(rng, inc.small)
    e = inc.conditional_expectation
    assert e(inc.embed(y)).allclose(y, 1e-10)
    assert e(inc.embed(a) @ x @ inc.embed(b)).allclose(a @ e(x) @ b, 1e-9)
    assert e(inc.expectation_in_big(x)).allclose(e(x), 1e-10)
    assert e(inc.big.identity()).allclose(inc.small.identity(), 1e-12)
    assert abs(trace(inc.trace_small, e(x)) - trace(inc.trace_big, x)) < 1e-10
    assert is_positive(e(random_positive(rng, inc.big)), 1e-10)


# -- Pimsner-Popa basis and index --------------------------------------------


@pytest.mark.parametrize("name", NAMES)
def test_reconstruction_on_full_basis(name):
    inc = inclusion(name)
    for u in inc.big.basis():
        assert inc.reconstruction_residual(u) < 1e-9


def test_basis_for_scalars_in_m2():
    inc = inclusion("C_in_M2")
    got = sorted(tuple(np.round(e.blocks[0].ravel(), 12)) for e in inc.pp_basis)
    want = sorted(tuple(np.round(math.sqrt(2) * inc.big.unit(0, i, j).blocks[0].ravel(), 12))
                  for i in range(2) for j in range(2))
    assert got == want


def test_basis_for_scalars_in_c2():
    inc = inclusion("C_in_C2")
    vals = sorted(tuple(round(float(b[0, 0].real), 12) for b in e.blocks) for e in inc.pp_basis)
    assert vals == sorted([(round(1 / math.sqrt(1 / 3), 12), 0.0), (0.0, round(1 / math.sqrt(2 / 3), 12))])


@pytest.mark.parametrize("name,expected", [("C_in_M2", 4.0), ("C2_in_M2", 2.0), ("C_in_C2", 2.0)])
def test_index_examples(name, expected):
    inc = inclusion(name)
    oracle = sum(trace(inc.trace_big, e.adj() @ e).real for e in inc.pp_basis)
    assert oracle == pytest.approx(expected, abs=1e-12)
    assert inc.index == pytest.approx(expected, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.99))
def test_index_of_scalars_in_c2_ignores_trace(t1):
    inc = build_inclusion([1], [[1, 1]], [t1, 1 - t1])
    assert inc.index == pytest.approx(2.0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(NAMES), seeds)
def test_index_invariant_under_unitary_change_of_basis(name, seed):
    inc = inclusion(name)
    u = inc.embed(random_unitary(seed, inc.small))
    moved = [e @ u for e in inc.pp_basis]
    assert sum(trace(inc.trace_big, e.adj() @ e).real for e in moved) == pytest.approx(inc.index, abs=1e-8)
    x = random_element(seed + 1, inc.big)
    acc = inc.big.zero()
    for e in moved:
        acc = acc + e @ inc.expectation_in_big(e.adj() @ x)
    assert acc.allclose(x, 1e-9)


@pytest.mark.parametrize("name", ["up_C_in_C2", "up_C_in_C3", "up_C2_in_M2"])
def test_pimsner_popa_inequality(name):
    inc = downward(name).inc
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = random_positive(rng, inc.big)
        assert is_positive(inc.expectation_in_big(x) - x / inc.index, 1e-9)


# -- relative commutant -------------------------------------------------------


def test_relative_commutant_dimensions():
    assert len(inclusion("C_in_M2").relative_commutant_basis) == 4
    assert len(inclusion("C2_in_M2").relative_commutant_basis) == 2


@pytest.mark.parametrize("name", NAMES)
def test_relative_commutant_basis_commutes_and_is_orthonormal(name):
    inc = inclusion(name)
    basis = inc.relative_commutant_basis
    gram = np.array([[trace(inc.trace_big, b.adj() @ a) for a in basis] for b in basis])
    assert max_abs(gram - np.eye(len(basis))) < 1e-10
    for a in basis:
        for y in inc.small.basis():
            ey = inc.embed(y)
            assert (a @ ey - ey @ a).norm() < 1e-10


def test_central_projection_trace_example():
    inc = inclusion("C_in_M2")
    assert inc.central_projection_trace(0, 0) == pytest.approx(1.0)
    assert trace(inc.trace_big, inc.central_projection(0, 0)).real == pytest.approx(1.0)


@pytest.mark.parametrize("name", NAMES)
def test_central_projections_sum_to_one(name):
    inc = inclusion(name)
    total = inc.big.zero()
    for k, l in inc.central_pairs():
        p = inc.central_projection(k, l)
        assert trace(inc.trace_big, p).real == pytest.approx(inc.central_projection_trace(k, l), abs=1e-12)
        total = total + p
    assert total.allclose(inc.big.identity())
