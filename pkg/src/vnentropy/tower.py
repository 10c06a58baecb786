"""Basic construction tower of a finite inclusion, realized on concrete spaces.

Coordinates on ``L^2(M)``: the orthonormal basis ``e^{(l)}_ij / sqrt(t_l)``,
so the vector of ``x Omega`` is ``sqrt(t) * x.vector()``.  In these coordinates
left and right multiplication have the same matrices as on coefficients.

The relative tensor space ``H = L^2(M) (x)_N L^2(M)`` is the quotient of the
span of ``e_a (x) e_b`` by the kernel of its form.  ``M_1`` acts on the first
leg, and ``M' cap M_2`` is the joint commutant of the two ``M``-actions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .inclusion import Inclusion, build_inclusion
from .mmalg import (
    DEFAULT_TOL,
    Action,
    AlgebraElement,
    Commutant,
    MultiMatrixAlgebra,
    TraceWeights,
    fn_calculus,
    joint_commutant,
    orthonormal_range,
    trace,
)
from .pairs import PairSpace


# ---------------------------------------------------------------------------
# Standard form
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StandardForm:
    inc: Inclusion

    @property
    def algebra(self) -> MultiMatrixAlgebra:
        return self.inc.big

    @property
    def dimension(self) -> int:
        return self.inc.big.dim

    @cached_property
    def sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.inc.trace_big.coefficient_weights(self.inc.big))

    def vector(self, x: AlgebraElement) -> np.ndarray:
        return self.sqrt_weights * x.vector()

    def element(self, vec: np.ndarray) -> AlgebraElement:
        return self.inc.big.from_vector(np.asarray(vec) / self.sqrt_weights)

    @cached_property
    def omega(self) -> np.ndarray:
        return self.vector(self.inc.big.identity())

    def left(self, x: AlgebraElement) -> np.ndarray:
        return self.inc.big.left_matrix(x)

    def right(self, x: AlgebraElement) -> np.ndarray:
        return self.inc.big.right_matrix(x)

    def element_of_left(self, op: np.ndarray) -> AlgebraElement:
        """The ``x`` whose left multiplication is ``op`` (read off from ``op Omega``)."""
        return self.element(op @ self.omega)

    @cached_property
    def j_permutation(self) -> np.ndarray:
        return self.inc.big.transpose_permutation()

    def apply_j(self, vec: np.ndarray) -> np.ndarray:
        """``J x Omega = x^* Omega``."""
        return self.j_permutation @ np.conj(vec)

    def conjugate_by_j(self, op: np.ndarray) -> np.ndarray:
        """``J op J``."""
        p = self.j_permutation
        return p @ np.conj(op) @ p

    @cached_property
    def e_n(self) -> np.ndarray:
        """Jones projection onto the closure of ``N Omega``."""
        s = self.sqrt_weights
        return (s[:, None] * self.inc.expectation_map_big) / s[None, :]

    # actions of the small algebra on L^2(M)
    def left_small(self, y: AlgebraElement) -> np.ndarray:
        return self.left(self.inc.embed(y))

    def right_small(self, y: AlgebraElement) -> np.ndarray:
        return self.right(self.inc.embed(y))

    def left_action(self) -> Action:
        big = self.inc.big
        return Action(big.dims, lru_cache(None)(lambda k, i, j: self.left(big.unit(k, i, j))))

    def right_action(self) -> Action:
        big = self.inc.big
        return Action(big.dims, lru_cache(None)(lambda k, i, j: self.right(big.unit(k, j, i))))

    def right_small_action(self) -> Action:
        small = self.inc.small
        return Action(small.dims, lru_cache(None)(lambda k, i, j: self.right_small(small.unit(k, j, i))))


def standard_form(inc: Inclusion) -> StandardForm:
    return StandardForm(inc)


# ---------------------------------------------------------------------------
# First basic construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BasicConstruction:
    sf: StandardForm

    @property
    def inc(self) -> Inclusion:
        return self.sf.inc

    @cached_property
    def m1(self) -> Commutant:
        """``M_1``: commutant of the right ``N``-action on ``L^2(M)``."""
        return joint_commutant([self.sf.right_small_action()], self.sf.dimension)

    @cached_property
    def tau_density(self) -> np.ndarray:
        """``Q`` with ``tau_M1(z) = Tr(Q z)``: ``delta^-2 sum_j |eta_j Omega><eta_j Omega|``."""
        vecs = np.array([self.sf.vector(e) for e in self.inc.pp_basis]).T
        return vecs @ vecs.conj().T / self.inc.index

    def tau_m1(self, z: np.ndarray) -> complex:
        return complex(np.trace(self.tau_density @ z))

    @cached_property
    def m1_weights(self) -> TraceWeights:
        return self.m1.weights_for(self.tau_m1)

    @cached_property
    def h(self) -> AlgebraElement:
        """``h_{M1,M}`` in the centre of ``M``: ``tau_M(h x) = tau_M1(x)``."""
        big, t = self.inc.big, self.inc.trace_big.weights
        blocks = []
        for l, m in enumerate(big.dims):
            val = self.tau_m1(self.sf.left(big.central_projection(l))).real / (m * t[l])
            blocks.append(val * np.eye(m))
        return AlgebraElement(big, blocks)

    def expectation_onto_m(self, z: np.ndarray) -> AlgebraElement:
        """``E^{M_1}_M(z)`` for the trace ``tau_M1``."""
        big = self.inc.big
        ops = [self.sf.left(u) for u in big.basis()]
        q = self.tau_density
        gram = np.array([[np.trace(q @ a.conj().T @ b) for b in ops] for a in ops])
        rhs = np.array([np.trace(q @ a.conj().T @ z) for a in ops])
        return big.from_vector(np.linalg.solve(gram, rhs))


def basic_construction(sf: StandardForm) -> BasicConstruction:
    return BasicConstruction(sf)


# ---------------------------------------------------------------------------
# Relative tensor space
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RelTensorSpace:
    sf: StandardForm
    bc: BasicConstruction

    @property
    def inc(self) -> Inclusion:
        return self.sf.inc

    @cached_property
    def space(self) -> PairSpace:
        inc = self.inc
        w = inc.trace_big.coefficient_weights(inc.big)
        return PairSpace.build(inc.big, inc.big, inc.expectation_map_big, np.diag(w).astype(complex))

    @property
    def dimension(self) -> int:
        return self.space.dimension

    def pair(self, x: AlgebraElement, y: AlgebraElement) -> np.ndarray:
        """Coordinates of ``x Omega (x) y Omega``."""
        return self.space.pair_vector(x, y)

    @cached_property
    def omega_omega(self) -> np.ndarray:
        one = self.inc.big.identity()
        return self.pair(one, one)

    @lru_cache(maxsize=None)
    def _left_unit(self, k, i, j):
        big = self.inc.big
        return self.space.kron_operator(big.left_matrix(big.unit(k, i, j)), None)

    @lru_cache(maxsize=None)
    def _right_unit(self, k, i, j):
        big = self.inc.big
        return self.space.kron_operator(None, big.right_matrix(big.unit(k, i, j)))

    def left(self, x: AlgebraElement) -> np.ndarray:
        return self.space.kron_operator(self.inc.big.left_matrix(x), None)

    def right(self, y: AlgebraElement) -> np.ndarray:
        return self.space.kron_operator(None, self.inc.big.right_matrix(y))

    def lift(self, op: np.ndarray) -> np.ndarray:
        """``z (x) 1`` for an operator ``z`` on ``L^2(M)`` commuting with the right ``N``-action."""
        s = self.sf.sqrt_weights
        coeff = (op * s[None, :]) / s[:, None]
        return self.space.kron_operator(coeff, None)

    def lift_residual(self, op: np.ndarray) -> float:
        s = self.sf.sqrt_weights
        coeff = (op * s[None, :]) / s[:, None]
        n = self.inc.big.dim
        return self.space.model.well_defined_residual(np.kron(coeff, np.eye(n)))

    @cached_property
    def v_n(self) -> np.ndarray:
        """``y Omega -> Omega (x) y Omega`` from ``L^2(M)`` coordinates."""
        n = self.inc.big.dim
        one = self.inc.big.identity().vector()
        gen = np.kron(one[:, None], np.eye(n)) / self.sf.sqrt_weights[None, :]
        return self.space.model.coords @ gen

    @cached_property
    def u_n(self) -> np.ndarray:
        """``xi -> xi (x) Omega``."""
        n = self.inc.big.dim
        one = self.inc.big.identity().vector()
        gen = np.kron(np.eye(n), one[:, None]) / self.sf.sqrt_weights[None, :]
        return self.space.model.coords @ gen

    def left_action(self) -> Action:
        return Action(self.inc.big.dims, self._left_unit)

    def right_action(self) -> Action:
        return Action(self.inc.big.dims, lambda k, i, j: self._right_unit(k, j, i))

    @cached_property
    def xi0(self) -> np.ndarray:
        """``sum_j eta_j Omega (x) eta_j^* Omega``, which is ``delta`` times the image of ``Omega_{M1}``."""
        return sum(self.pair(e, e.adj()) for e in self.inc.pp_basis)

    def ident_gram_residual(self) -> float:
        """Compare the form on ``H`` with ``delta^2 tau_M1`` on the operators ``x e_N y``."""
        inc, sf = self.inc, self.sf
        units = inc.big.basis()
        lefts = [sf.left(u) for u in units]
        ops = np.array([lx @ sf.e_n @ ly for lx in lefts for ly in lefts])
        q = self.bc.tau_density
        flat = ops.reshape(len(ops), -1)
        via_m1 = inc.index * (np.conj(flat) @ (ops @ q).reshape(len(ops), -1).T)
        coords = self.space.model.coords
        direct = coords.conj().T @ coords
        return float(np.max(np.abs(via_m1 - direct)))


def rel_tensor(sf: StandardForm, bc: BasicConstruction) -> RelTensorSpace:
    return RelTensorSpace(sf, bc)


# ---------------------------------------------------------------------------
# Second floor: M' cap M_2, its trace, Delta and Delta_0
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Tower:
    """Everything attached to one inclusion ``N < M``, built lazily."""

    inc: Inclusion

    @cached_property
    def sf(self) -> StandardForm:
        return StandardForm(self.inc)

    @cached_property
    def bc(self) -> BasicConstruction:
        return BasicConstruction(self.sf)

    @cached_property
    def rts(self) -> RelTensorSpace:
        return RelTensorSpace(self.sf, self.bc)

    @property
    def delta(self) -> float:
        return self.inc.delta

    @property
    def index(self) -> float:
        return self.inc.index

    # -- M' cap M_2 -----------------------------------------------------------

    @cached_property
    def end_mm(self) -> Commutant:
        rts = self.rts
        return joint_commutant([rts.left_action(), rts.right_action()], rts.dimension)

    @cached_property
    def tau_m2_density(self) -> np.ndarray:
        """``tau_M2(z) = Tr(Q z)`` with ``Q = delta^-2 sum_j |eta_j Omega (x) Omega><...|``."""
        vecs = np.array([self.rts.u_n @ self.sf.vector(e) for e in self.inc.pp_basis]).T
        return vecs @ vecs.conj().T / self.index

    def tau_m2(self, z: np.ndarray) -> complex:
        return complex(np.sum(self.tau_m2_density.T * z))

    @cached_property
    def m2_weights(self) -> TraceWeights:
        return self.end_mm.weights_for(self.tau_m2)

    def omega_n(self, op: np.ndarray) -> complex:
        v = self.rts.omega_omega
        return complex(v.conj() @ op @ v)

    def to_end(self, op: np.ndarray) -> AlgebraElement:
        """Compress an operator in ``M' cap M_2`` to the abstract block algebra."""
        return self.end_mm.compress(op)

    def from_end(self, z: AlgebraElement) -> np.ndarray:
        return self.end_mm.embed(z)

    @cached_property
    def e_m(self) -> np.ndarray:
        """Projection of ``H`` onto the image of ``L^2(M)``, spanned by ``x xi0``."""
        vecs = np.array([self.rts.left(u) @ self.rts.xi0 for u in self.inc.big.basis()]).T
        q = orthonormal_range(vecs)
        return q @ q.conj().T

    @cached_property
    def e_n_on_h(self) -> np.ndarray:
        return self.rts.lift(self.sf.e_n)

    # -- M' cap M_1 and Delta ---------------------------------------------------

    @cached_property
    def m_prime_m1(self) -> Commutant:
        sf = self.sf
        return joint_commutant([sf.left_action(), sf.right_small_action()], sf.dimension)

    def tau_n_prime(self, op: np.ndarray) -> complex:
        """``tau_{N'}(z') = tau_M1(J z' J)``."""
        return self.bc.tau_m1(self.sf.conjugate_by_j(op))

    @cached_property
    def delta_op(self) -> np.ndarray:
        """``Delta`` on ``L^2(M)``: ``tau_M1(Delta z) = tau_M(J z^* J)`` on ``M' cap M_1``."""
        c = self.m_prime_m1
        w = c.weights_for(self.bc.tau_m1).weights
        blocks = []
        for b, mu in enumerate(c.algebra.dims):
            blk = np.zeros((mu, mu), dtype=complex)
            for i in range(mu):
                for j in range(mu):
                    z = c.embed(c.algebra.unit(b, i, j))
                    jzj = self.sf.conjugate_by_j(z.conj().T)
                    val = trace(self.inc.trace_big, self.sf.element_of_left(jzj))
                    blk[j, i] = val / w[b]
            blocks.append(blk)
        return c.embed(AlgebraElement(c.algebra, blocks))

    @cached_property
    def delta_element(self) -> AlgebraElement:
        """``Delta`` as an element of the block algebra ``M' cap M_1``."""
        return self.m_prime_m1.compress(self.delta_op)

    @cached_property
    def delta_on_h(self) -> np.ndarray:
        return self.rts.lift(self.delta_op)

    @cached_property
    def delta_end(self) -> AlgebraElement:
        """``Delta (x) 1`` as an element of the block algebra ``M' cap M_2``."""
        return self.to_end(self.delta_on_h)

    @cached_property
    def delta_end_sqrt(self) -> AlgebraElement:
        return fn_calculus(self.delta_end, np.sqrt)

    # -- Delta_0 ----------------------------------------------------------------

    @cached_property
    def delta0(self) -> AlgebraElement:
        """Solved from ``tau_M(Delta_0 x) = tau_{N'}(x)`` on ``N' cap M``."""
        acc = self.inc.big.zero()
        for b in self.inc.relative_commutant_basis:
            coeff = self.tau_n_prime(self.sf.left(b.adj()))
            acc = acc + b * coeff
        return acc

    @cached_property
    def delta0_closed_form(self) -> AlgebraElement:
        """``sum_{k,l} s_k m_l / (delta^2 n_k t_l) e_k f_l``."""
        inc = self.inc
        s, t = inc.trace_small.weights, inc.trace_big.weights
        acc = inc.big.zero()
        for k, l in inc.central_pairs():
            coeff = s[k] * inc.big.dims[l] / (inc.index * inc.small.dims[k] * t[l])
            acc = acc + inc.central_projection(k, l) * coeff
        return acc

    def delta0_from_delta(self) -> AlgebraElement:
        """``J Delta^{-1} J`` read as an element of ``M``."""
        c = self.m_prime_m1
        inv = c.embed(fn_calculus(self.delta_element, lambda v: 1 / v))
        return self.sf.element_of_left(self.sf.conjugate_by_j(inv))

    def identity_multiplier(self) -> np.ndarray:
        """Multiplier of ``id_M``: ``delta^-1 sum_j (. eta_j) (x) (eta_j^* .)``."""
        from .chan import identity_map, fourier_multiplier
        return fourier_multiplier(identity_map(self.inc.big), self)


def build_tower(inc: Inclusion) -> Tower:
    return Tower(inc)


def end_mm_and_tau_m2(tower: Tower):
    return tower.end_mm, tower.m2_weights


def delta_and_delta0(tower: Tower, tol: float = 1e-9):
    """Return ``(Delta on L^2(M), Delta_0)`` after checking the two routes to ``Delta_0`` agree."""
    d0 = tower.delta0
    gap = (d0 - tower.delta0_closed_form).norm()
    if gap > tol:
        raise ValueError(f"Delta_0 linear solve and closed form disagree by {gap:.2e}")
    return tower.delta_op, d0


# ---------------------------------------------------------------------------
# Downward construction
# ---------------------------------------------------------------------------


def downward_criterion(inc: Inclusion) -> tuple[bool, list[tuple[int, int]]]:
    """``a_kl <= n_k`` for all ``k, l``; the witness lists violating pairs."""
    bad = [(k, l) for k in range(inc.adjacency.shape[0]) for l in range(inc.adjacency.shape[1])
           if inc.adjacency[k, l] > inc.small.dims[k]]
    return (not bad, bad)


@dataclass(frozen=True, eq=False)
class DownwardTower:
    """``N_{-1} < N < M`` where ``M`` is the basic construction of the lower pair."""

    lower: Inclusion           # N_{-1} < N
    inc: Inclusion             # N < M in the standard layout
    tower: Tower               # tower of N < M
    e_minus1: AlgebraElement   # Jones projection of the lower pair, inside M
    to_lower_ops: np.ndarray   # columns: M matrix units as operators on L^2(N), flattened
    markov: bool

    @cached_property
    def lower_sf(self) -> StandardForm:
        return StandardForm(self.lower)

    def on_l2n(self, x: AlgebraElement) -> np.ndarray:
        """``x in M`` as an operator on ``L^2(N)``."""
        d = self.lower_sf.dimension
        return (self.to_lower_ops @ x.vector()).reshape(d, d)

    def from_l2n(self, op: np.ndarray) -> AlgebraElement:
        coeffs, *_ = np.linalg.lstsq(self.to_lower_ops, op.reshape(-1), rcond=None)
        return self.inc.big.from_vector(coeffs)

    def j_n(self, x: AlgebraElement) -> AlgebraElement:
        """``J_N x J_N`` computed on ``L^2(N)`` and read back in ``M``."""
        return self.from_l2n(self.lower_sf.conjugate_by_j(self.on_l2n(x)))

    def temperley_lieb_residuals(self) -> tuple[float, float]:
        """Residuals of ``e_-1 e_N e_-1 = delta^-2 e_-1`` and ``e_N e_M e_N = delta^-2 e_N``."""
        t = self.tower
        e1 = t.sf.left(self.e_minus1)
        en = t.sf.e_n
        r1 = np.max(np.abs(e1 @ en @ e1 - e1 / t.index))
        enh, em = t.e_n_on_h, t.e_m
        r2 = np.max(np.abs(enh @ em @ enh - enh / t.index))
        return float(r1), float(r2)

    def shift_inverse(self, x: np.ndarray, tol: float = 1e-8) -> AlgebraElement:
        """``gamma^{-1}(x)`` from ``y e_M = delta^4 e_M e_N e_-1 x e_-1 e_N e_M`` on ``H``."""
        t = self.tower
        rts = t.rts
        e1 = rts.left(self.e_minus1)
        en, em = t.e_n_on_h, t.e_m
        rhs = t.index ** 2 * em @ en @ e1 @ x @ e1 @ en @ em
        target = rhs @ rts.xi0
        cols = np.array([rts.left(u) @ rts.xi0 for u in self.inc.big.basis()]).T
        coeffs, *_ = np.linalg.lstsq(cols, target, rcond=None)
        y = self.inc.big.from_vector(coeffs)
        resid = np.max(np.abs(rts.left(y) @ em - rhs))
        if resid > tol * max(1.0, np.max(np.abs(rhs))):
            raise ValueError(f"shift inverse extraction residual {resid:.2e}")
        return y


def extend_upward(lower: Inclusion) -> DownwardTower:
    """Realize ``M`` as the basic construction of ``lower = (N_{-1} < N)``.

    ``M`` is the commutant of the right ``N_{-1}``-action on ``L^2(N)``; it is
    conjugated into the standard layout for ``N < M`` and carries the canonical
    trace of the basic construction.
    """
    sf0 = StandardForm(lower)
    bc0 = BasicConstruction(sf0)
    raw = bc0.m1
    n_alg = lower.big
    # image of N's matrix units in the raw block algebra
    img = {}
    for k, i, j in n_alg.unit_labels():
        img[(k, i, j)] = raw.compress(sf0.left(n_alg.unit(k, i, j)))
    n_blocks, m_blocks = len(n_alg.dims), len(raw.algebra.dims)
    adjacency = np.zeros((n_blocks, m_blocks), dtype=int)
    unitaries = []
    for l, mu in enumerate(raw.algebra.dims):
        cols = []
        for k, n in enumerate(n_alg.dims):
            p = img[(k, 0, 0)].blocks[l]
            vals, vecs = np.linalg.eigh((p + p.conj().T) / 2)
            starts = vecs[:, vals > 0.5]
            adjacency[k, l] = starts.shape[1]
            for c in range(starts.shape[1]):
                for r in range(n):
                    cols.append(img[(k, r, 0)].blocks[l] @ starts[:, c])
        u = np.array(cols).T
        if u.shape != (mu, mu):
            raise ValueError("left action of N is not unital on the basic construction")
        unitaries.append(u)
    weights = raw.weights_for(bc0.tau_m1).weights
    inc = build_inclusion(n_alg.dims, adjacency, list(weights))
    big = inc.big

    def standardize(z: AlgebraElement) -> AlgebraElement:
        return AlgebraElement(big, [u.conj().T @ b @ u for u, b in zip(unitaries, z.blocks)])

    def unstandardize(x: AlgebraElement) -> AlgebraElement:
        return AlgebraElement(raw.algebra, [u @ b @ u.conj().T for u, b in zip(unitaries, x.blocks)])

    for k, i, j in n_alg.unit_labels():
        if not standardize(img[(k, i, j)]).allclose(inc.embed(n_alg.unit(k, i, j)), atol=1e-9):
            raise ValueError("failed to bring the embedding into the standard layout")
    e_minus1 = standardize(raw.compress(sf0.e_n))
    ops = np.array([raw.embed(unstandardize(u)).reshape(-1) for u in big.basis()]).T
    markov = bool(np.allclose(bc0.h.dense(), np.eye(n_alg.size), atol=1e-9))
    return DownwardTower(lower, inc, Tower(inc), e_minus1, ops, markov)
