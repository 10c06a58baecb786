"""Completely positive maps, Fourier multipliers, correspondences and derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .inclusion import Inclusion
from .mmalg import (
    DEFAULT_TOL,
    Action,
    AlgebraElement,
    Commutant,
    MultiMatrixAlgebra,
    TraceWeights,
    fn_calculus,
    gns_space,
    joint_commutant,
    max_eigenvalue,
    psd_fn,
    quotient_from_gram,
    state_gram,
    support_projection,
    trace,
)
from .pairs import PairSpace
from .tower import Tower


# ---------------------------------------------------------------------------
# Linear maps between algebras
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearMap:
    """A linear map given by its matrix on coefficient vectors."""

    source: MultiMatrixAlgebra
    target: MultiMatrixAlgebra
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.shape != (self.target.dim, self.source.dim):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match algebras")

    def __call__(self, x: AlgebraElement) -> AlgebraElement:
        return self.target.from_vector(self.matrix @ x.vector())

    def __add__(self, other: "LinearMap") -> "LinearMap":
        return LinearMap(self.source, self.target, self.matrix + other.matrix)

    def __sub__(self, other: "LinearMap") -> "LinearMap":
        return LinearMap(self.source, self.target, self.matrix - other.matrix)

    def __mul__(self, c) -> "LinearMap":
        return LinearMap(self.source, self.target, c * self.matrix)

    __rmul__ = __mul__

    def then(self, other: "LinearMap") -> "LinearMap":
        """``other o self``."""
        return LinearMap(self.source, other.target, other.matrix @ self.matrix)

    def choi_blocks(self) -> list[np.ndarray]:
        """For each source block, the block matrix ``[Phi(e_ij)]_{ij}`` (dense target)."""
        out = []
        for k, n in enumerate(self.source.dims):
            size = self.target.size
            c = np.zeros((n * size, n * size), dtype=complex)
            for i in range(n):
                for j in range(n):
                    c[i * size:(i + 1) * size, j * size:(j + 1) * size] = self(self.source.unit(k, i, j)).dense()
            out.append(c)
        return out

    def is_unital(self, tol: float = 1e-10) -> bool:
        return self(self.source.identity()).allclose(self.target.identity(), atol=tol)

    def bimodule_residual(self, inc: Inclusion, samples: int = 0) -> float:
        """``max |Phi(a x b) - a Phi(x) b|`` over matrix units ``a, b`` of ``N`` and ``x`` of ``M``."""
        worst = 0.0
        small, big = inc.small.basis(), inc.big.basis()
        for a in small:
            ea = inc.embed(a)
            for x in big:
                lhs = self(ea @ x)
                rhs = ea @ self(x)
                worst = max(worst, (lhs - rhs).norm())
                lhs = self(x @ ea)
                rhs = self(x) @ ea
                worst = max(worst, (lhs - rhs).norm())
        return worst


def choi_cp_test(phi: LinearMap, tol: float = DEFAULT_TOL) -> bool:
    for c in choi_blocks_hermitian(phi):
        vals = np.linalg.eigvalsh(c)
        scale = max(np.max(np.abs(vals)), 1.0)
        if vals.min() < -tol * scale:
            return False
    return True


def choi_blocks_hermitian(phi: LinearMap):
    for c in phi.choi_blocks():
        if np.max(np.abs(c - c.conj().T)) > 1e-8 * max(1.0, np.max(np.abs(c))):
            yield np.array([[-1.0]])  # not hermiticity preserving, so not positive
        else:
            yield (c + c.conj().T) / 2


def identity_map(algebra: MultiMatrixAlgebra) -> LinearMap:
    return LinearMap(algebra, algebra, np.eye(algebra.dim, dtype=complex))


def conditional_expectation_map(inc: Inclusion) -> LinearMap:
    """``E_N`` viewed as a map ``M -> M``."""
    return LinearMap(inc.big, inc.big, inc.expectation_map_big.astype(complex))


def transpose_map(algebra: MultiMatrixAlgebra) -> LinearMap:
    return LinearMap(algebra, algebra, algebra.transpose_permutation().astype(complex))


def trace_map(algebra: MultiMatrixAlgebra, weights: TraceWeights) -> LinearMap:
    """``x -> tau(x) 1``."""
    one = algebra.identity().vector()
    f = np.zeros(algebra.dim)
    for idx, (k, i, j) in enumerate(algebra.unit_labels()):
        if i == j:
            f[idx] = weights.weights[k]
    return LinearMap(algebra, algebra, np.outer(one, f).astype(complex))


def map_from_function(source: MultiMatrixAlgebra, target: MultiMatrixAlgebra, fn) -> LinearMap:
    cols = [fn(u).vector() for u in source.basis()]
    return LinearMap(source, target, np.array(cols).T)


def sandwich(phi: LinearMap, left: AlgebraElement, right: AlgebraElement) -> LinearMap:
    """``x -> left Phi(x) right``."""
    t = phi.target
    return LinearMap(phi.source, t, t.left_matrix(left) @ t.right_matrix(right) @ phi.matrix)


def normalize_unital(phi: LinearMap, tol: float = DEFAULT_TOL) -> LinearMap:
    """``Phi(1)^{-1/2} Phi(.) Phi(1)^{-1/2}``; ``Phi(1)`` must be invertible."""
    one = phi(phi.source.identity())
    inv_root = fn_calculus(one, lambda v: v ** -0.5, tol)
    return sandwich(phi, inv_root, inv_root)


def convex_combination(maps, weights) -> LinearMap:
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("convex weights must be non-negative")
    acc = maps[0] * weights[0]
    for m, w in zip(maps[1:], weights[1:]):
        acc = acc + m * w
    return acc


def compose(maps) -> LinearMap:
    """``maps[-1] o ... o maps[0]``: the first map is applied first."""
    acc = maps[0]
    for m in maps[1:]:
        acc = acc.then(m)
    return acc


# ---------------------------------------------------------------------------
# Fourier multipliers of bimodule maps
# ---------------------------------------------------------------------------


def fourier_multiplier(phi: LinearMap, tower: Tower, check: bool = False, tol: float = 1e-9) -> np.ndarray:
    """``Phi^(x Omega (x) y Omega) = delta^-1 sum_j x eta_j Omega (x) Phi(eta_j^*) y Omega``."""
    inc, big = tower.inc, tower.inc.big
    if check:
        resid = phi.bimodule_residual(inc)
        if resid > tol:
            raise ValueError(f"map is not N-bimodular (residual {resid:.2e})")
    terms = [(big.right_matrix(e), big.left_matrix(phi(e.adj()))) for e in inc.pp_basis]
    hat = tower.rts.space.kron_sum_operator(terms) / tower.delta
    if check:
        resid = tower.end_mm.membership_residual(hat)
        if resid > tol:
            raise ValueError(f"multiplier is not in M' cap M2 (residual {resid:.2e})")
    return hat


def from_multiplier(p: np.ndarray, tower: Tower, check: bool = False, tol: float = 1e-9) -> LinearMap:
    """``Phi(x) = delta v_N^* (x (x) 1) P v_N``, read off on ``Omega``."""
    if check:
        resid = tower.end_mm.membership_residual(p)
        if resid > tol * max(1.0, np.max(np.abs(p))):
            raise ValueError(f"operator is not in M' cap M2 (residual {resid:.2e})")
    rts, sf = tower.rts, tower.sf
    big = tower.inc.big
    pv = p @ rts.omega_omega
    vn_adj = rts.v_n.conj().T
    cols = []
    for u in big.basis():
        vec = tower.delta * (vn_adj @ (rts.left(u) @ pv))
        cols.append(vec / sf.sqrt_weights)
    return LinearMap(big, big, np.array(cols).T)


def random_multiplier(tower: Tower, seed, rank: int | None = None) -> np.ndarray:
    """``G^* G`` for a random ``G`` in ``M' cap M_2``; ``rank`` limits each block's rank."""
    rng = np.random.default_rng(seed)
    blocks = []
    for mu in tower.end_mm.algebra.dims:
        r = mu if rank is None else max(1, min(rank, mu))
        g = rng.standard_normal((r, mu)) + 1j * rng.standard_normal((r, mu))
        blocks.append(g.conj().T @ g)
    return tower.from_end(AlgebraElement(tower.end_mm.algebra, blocks))


def random_bimodule_channel(tower: Tower, seed, unital: bool = True, rank: int | None = None) -> LinearMap:
    phi = from_multiplier(random_multiplier(tower, seed, rank), tower)
    return normalize_unital(phi) if unital else phi


def random_majorized_pair(tower: Tower, seed, unital: bool = True, rank: int | None = None,
                          weight: float | None = None):
    """Random ``(Phi, Psi)`` with ``Phi <= Psi``: ``Psi = (1 - s) Phi + s Phi_2``.

    ``rank`` limits the rank of each multiplier block, which leaves both
    supports proper when it is below the block size.
    """
    rng = np.random.default_rng(seed)
    s = float(rng.uniform(0.2, 0.8)) if weight is None else weight
    phi = random_bimodule_channel(tower, rng, unital, rank)
    other = random_bimodule_channel(tower, rng, unital, rank)
    return phi, convex_combination([phi, other], [1 - s, s])


def multiplier_element(phi: LinearMap, tower: Tower) -> AlgebraElement:
    return tower.to_end(fourier_multiplier(phi, tower))


def majorizes(phi: LinearMap, psi: LinearMap, tower: Tower, tol: float = DEFAULT_TOL) -> bool:
    """``Phi <= Psi``: the support of ``Phi^`` sits under the support of ``Psi^``."""
    a = multiplier_element(phi, tower)
    b = multiplier_element(psi, tower)
    pa = support_projection(a, tol)
    pb = support_projection(b, tol)
    gap = pa - pb @ pa
    return gap.norm() <= 1e-6


@dataclass(frozen=True)
class LambdaResult:
    value: float
    paper_convention_infinite: bool


def lam(phi: LinearMap, psi: LinearMap, tower: Tower, tol: float = DEFAULT_TOL) -> LambdaResult:
    """Largest ``lambda`` with ``Psi - lambda Phi`` CP, via ``Psi^ - lambda Phi^ >= 0``.

    When ``Phi`` is not majorized by ``Psi`` the value is 0 and the flag is set.
    """
    a = multiplier_element(phi, tower)
    b = multiplier_element(psi, tower)
    if not majorizes(phi, psi, tower, tol):
        return LambdaResult(0.0, True)
    inv_root = fn_calculus(b, lambda v: v ** -0.5, tol)
    top = max_eigenvalue(inv_root @ a @ inv_root)
    if top <= 0:
        return LambdaResult(float("inf"), False)
    return LambdaResult(1.0 / top, False)


def jones_norm_bound(phi: LinearMap, e_minus1: AlgebraElement, tower: Tower) -> tuple[float, float]:
    """``delta^2 ||Phi(e_-1)||`` and ``inf{c : c E^ - Phi^ >= 0} = delta * lambda_max(Phi^)``."""
    direct = tower.index * phi(e_minus1).norm()
    via_multiplier = tower.delta * max_eigenvalue(multiplier_element(phi, tower))
    return direct, via_multiplier


# ---------------------------------------------------------------------------
# Correspondences of general CP maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Correspondence:
    """GNS bimodule ``H^Psi`` of ``Psi: A -> B`` with respect to a faithful state ``phi`` on ``B``."""

    psi: LinearMap
    weights: TraceWeights       # trace on B the density refers to
    density: AlgebraElement     # phi(x) = tau(density x)

    @property
    def source(self) -> MultiMatrixAlgebra:
        return self.psi.source

    @property
    def target(self) -> MultiMatrixAlgebra:
        return self.psi.target

    @cached_property
    def gns(self):
        return gns_space(self.target, self.density, self.weights)

    @cached_property
    def space(self) -> PairSpace:
        gram = state_gram(self.target, self.weights, self.density)
        return PairSpace.build(self.source, self.target, self.psi.matrix, gram)

    @property
    def dimension(self) -> int:
        return self.space.dimension

    @lru_cache(maxsize=None)
    def _left_unit(self, k, i, j):
        a = self.source
        return self.space.kron_operator(a.left_matrix(a.unit(k, i, j)), None)

    @lru_cache(maxsize=None)
    def _right_unit(self, k, i, j):
        return self.right(self.target.unit(k, i, j))

    def left(self, a: AlgebraElement) -> np.ndarray:
        return self.space.kron_operator(self.source.left_matrix(a), None)

    def right(self, b: AlgebraElement) -> np.ndarray:
        twisted = self.gns.modular_twist(b)
        return self.space.kron_operator(None, self.target.right_matrix(twisted))

    @cached_property
    def omega(self) -> np.ndarray:
        """``Omega_Psi = [1 (x) Omega_phi]``."""
        return self.space.pair_vector(self.source.identity(), self.target.identity())

    @cached_property
    def v(self) -> np.ndarray:
        """``v_Psi: L^2(B, phi) -> H^Psi``, ``xi -> [1 (x) xi]``."""
        one = self.source.identity().vector()
        gen = np.kron(one[:, None], self.gns.model.pinv)
        return self.space.model.coords @ gen

    @cached_property
    def source_gns(self):
        """``L^2(A, phi o Psi)``."""
        dens_a = self.pulled_back_density()
        return gns_space(self.source, dens_a, TraceWeights.matrix_trace(self.source))

    def pulled_back_density(self) -> AlgebraElement:
        """Density of ``phi o Psi`` with respect to the matrix trace on ``A``."""
        vals = []
        for u in self.source.basis():
            vals.append(trace(self.weights, self.density @ self.psi(u)))
        # tau_A(D e_ij) = D_ji, so D_ji = phi(Psi(e_ij))
        a = self.source
        blocks = [np.zeros((n, n), dtype=complex) for n in a.dims]
        for val, (k, i, j) in zip(vals, a.unit_labels()):
            blocks[k][j, i] = val
        return AlgebraElement(a, blocks)

    @cached_property
    def u(self) -> np.ndarray:
        """``u_Psi: a Omega_{phi o Psi} -> a Omega_Psi``."""
        one = self.target.identity().vector()
        # pinv maps L^2(A) coordinates to coefficients of a; pair each with Omega_phi
        gen = np.einsum("ac,b->abc", self.source_gns.model.pinv, one).reshape(-1, self.source_gns.dimension)
        return self.space.model.coords @ gen

    @cached_property
    def end(self) -> Commutant:
        """Joint commutant of the left ``A``- and right ``B``-actions."""
        left = Action(self.source.dims, self._left_unit)
        right = Action(self.target.dims, lambda k, i, j: self._right_unit(k, j, i))
        return joint_commutant([left, right], self.dimension)

    def dilation_residual(self) -> float:
        worst = 0.0
        for a in self.source.basis():
            lhs = self.v.conj().T @ self.left(a) @ self.v
            rhs = self.gns.left(self.psi(a))
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        return worst

    def derivative(self, phi: LinearMap, tol: float = 1e-8) -> np.ndarray:
        """``h_{Phi,Psi}``: the positive element of ``End`` with ``Phi(a) = v^* pi(a) h v``."""
        end = self.end
        basis = end.algebra.basis()
        cols = []
        rhs = []
        v, vh = self.v, self.v.conj().T
        lefts = [self.left(a) for a in self.source.basis()]
        for u in basis:
            w = end.embed(u)
            cols.append(np.concatenate([(vh @ la @ w @ v).reshape(-1) for la in lefts]))
        for a in self.source.basis():
            rhs.append(self.gns.left(phi(a)).reshape(-1))
        mat = np.array(cols).T
        target = np.concatenate(rhs)
        coeffs, *_ = np.linalg.lstsq(mat, target, rcond=None)
        resid = np.max(np.abs(mat @ coeffs - target), initial=0.0)
        if resid > tol * max(1.0, np.max(np.abs(target))):
            raise ValueError(f"no derivative: dilation residual {resid:.2e} (map not majorized?)")
        h = end.algebra.from_vector(coeffs)
        h = (h + h.adj()) * 0.5
        vals = np.concatenate([np.linalg.eigvalsh(b) for b in h.blocks])
        if vals.min() < -1e-7 * max(1.0, vals.max()):
            raise ValueError(f"derivative is not positive (eigenvalue {vals.min():.2e})")
        return end.embed(h)

    def derivative_is_unique(self) -> bool:
        """The dilation system has trivial kernel on ``End``."""
        end = self.end
        v, vh = self.v, self.v.conj().T
        lefts = [self.left(a) for a in self.source.basis()]
        cols = [np.concatenate([(vh @ la @ end.embed(u) @ v).reshape(-1) for la in lefts])
                for u in end.algebra.basis()]
        s = np.linalg.svd(np.array(cols).T, compute_uv=False)
        return bool(s.min() > 1e-9 * s.max())

    def radon_nikodym_residual(self, phi: LinearMap, h: np.ndarray) -> float:
        """Compare ``v^* h u`` with ``a Omega_{phi o Psi} -> Phi(a) Omega_phi``."""
        lhs = self.v.conj().T @ h @ self.u
        src = self.source_gns
        worst = 0.0
        for a in self.source.basis():
            xi = src.vector(a)
            direct = self.gns.vector(phi(a))
            worst = max(worst, float(np.max(np.abs(lhs @ xi - direct))))
        return worst


def correspondence(psi: LinearMap, weights: TraceWeights, density: AlgebraElement | None = None) -> Correspondence:
    if density is None:
        density = psi.target.identity() / weights.total(psi.target)
    return Correspondence(psi, weights, density)


def derivative(phi: LinearMap, psi: LinearMap, weights: TraceWeights, density=None) -> np.ndarray:
    return correspondence(psi, weights, density).derivative(phi)


def bimodule_identification(corr: Correspondence, tower: Tower) -> np.ndarray:
    """The unitary ``iota: H^{E_N} -> L^2(M) (x)_N L^2(M)``, ``[a (x) b Omega] -> a Omega (x) b Omega``.

    Both spaces are quotients over the same generators, so ``iota`` is read off
    generator by generator.
    """
    return tower.rts.space.model.coords @ corr.space.model.pinv


# ---------------------------------------------------------------------------
# Relative tensor product of correspondences and the convolution isometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RelativeTensor:
    """``H1 (x)_phi H2`` for ``H1 = H^{Psi2}`` (an ``A-B`` bimodule) and ``H2 = H^{Psi1}`` (``B-C``)."""

    first: Correspondence
    second: Correspondence

    @cached_property
    def space(self):
        h1, h2 = self.first, self.second
        d1, d2 = h1.dimension, h2.dimension
        b = h1.target
        pinv = h1.gns.model.pinv
        # untwisted right multiplication: b Omega_phi -> xi . (rho^-1/2 b rho^1/2)
        rights = np.array([h1.space.kron_operator(None, b.right_matrix(u)) for u in b.basis()])
        # lmat[q, p, m] = <L(e_q) f_m, e_p> where L(xi): L^2(B, phi) -> H1, b Omega -> xi b
        lmat = np.einsum("cm,cpq->qpm", pinv, rights)
        # <xi_q | e_p>_B has L^2 vector conj(lmat[q, p, :]); read off its coefficients
        coeffs = np.einsum("cm,qpm->qpc", pinv, np.conj(lmat))
        lefts = np.array([h2.left(u) for u in b.basis()])
        # <e_p (x) f_r, e_q (x) f_s> = <pi(beta_qp) f_r, f_s>
        pis = np.einsum("qpc,csr->qpsr", coeffs, lefts)
        gram = pis.transpose(0, 2, 1, 3).reshape(d1 * d2, d1 * d2)
        return quotient_from_gram(gram)

    @property
    def dimension(self) -> int:
        return self.space.dimension

    def vector(self, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        return self.space.vector(np.kron(xi, eta))

    def tensor_operator(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.space.operator(np.kron(x, y))

    def tensor_residual(self, x: np.ndarray, y: np.ndarray) -> float:
        return self.space.well_defined_residual(np.kron(x, y))


def convolution_isometry(corr_composite: Correspondence, rel: RelativeTensor) -> tuple[np.ndarray, float]:
    """``Y: a Omega_{Psi1 Psi2} c -> a Omega_{Psi2} (x)_phi Omega_{Psi1} c``.

    ``corr_composite`` is the correspondence of ``Psi1 o Psi2``.  Returns ``Y``
    and the residual of the defining relation on the spanning vectors.
    """
    h1, h2 = rel.first, rel.second
    src_cols, tgt_cols = [], []
    for a in h1.source.basis():
        left_comp = corr_composite.left(a) @ corr_composite.omega
        left_first = h1.left(a) @ h1.omega
        for c in h2.target.basis():
            src_cols.append(corr_composite.right(c) @ left_comp)
            tgt_cols.append(rel.vector(left_first, h2.right(c) @ h2.omega))
    s = np.array(src_cols).T
    t = np.array(tgt_cols).T
    y = t @ np.linalg.pinv(s, rcond=1e-10)
    resid = float(np.max(np.abs(y @ s - t)))
    return y, resid
