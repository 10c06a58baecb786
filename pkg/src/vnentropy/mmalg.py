"""Multi-matrix algebras, weighted traces, functional calculus and Gram quotients.

An algebra is a direct sum of full matrix blocks ``M_{n_1} + ... + M_{n_r}``.
Elements are stored block by block.  Linear maps on an algebra act on the
*coefficient vector*, the concatenation of the row-major flattened blocks.

Every rank decision (supports, quotients, commutants) goes through the same
relative cutoff: an eigenvalue counts as zero when it is at most
``tol * lambda_max``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

DEFAULT_TOL = 1e-9


# ---------------------------------------------------------------------------
# Algebras and elements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiMatrixAlgebra:
    """Direct sum of full matrix algebras with block sizes ``dims``."""

    dims: tuple[int, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not dims or any(n < 1 for n in dims):
            raise ValueError(f"block sizes must be positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        if self.labels is not None and len(self.labels) != len(dims):
            raise ValueError("one label per block is required")

    @property
    def dim(self) -> int:
        """Linear dimension, the sum of squared block sizes."""
        return sum(n * n for n in self.dims)

    @property
    def size(self) -> int:
        """Size of the block-diagonal matrix realizing the algebra."""
        return sum(self.dims)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Start of each block in the coefficient vector."""
        out, pos = [], 0
        for n in self.dims:
            out.append(pos)
            pos += n * n
        return tuple(out)

    def zero(self) -> "AlgebraElement":
        return AlgebraElement(self, [np.zeros((n, n), complex) for n in self.dims])

    def identity(self) -> "AlgebraElement":
        return AlgebraElement(self, [np.eye(n, dtype=complex) for n in self.dims])

    def central_projection(self, k: int) -> "AlgebraElement":
        blocks = [np.zeros((n, n), complex) for n in self.dims]
        blocks[k] = np.eye(self.dims[k], dtype=complex)
        return AlgebraElement(self, blocks)

    def unit(self, k: int, i: int, j: int) -> "AlgebraElement":
        """Matrix unit ``e_ij`` of block ``k``."""
        blocks = [np.zeros((n, n), complex) for n in self.dims]
        blocks[k][i, j] = 1.0
        return AlgebraElement(self, blocks)

    def unit_index(self, k: int, i: int, j: int) -> int:
        return self.offsets[k] + i * self.dims[k] + j

    def unit_labels(self) -> list[tuple[int, int, int]]:
        """(block, row, column) of every coefficient, in coefficient order."""
        return [(k, i, j) for k, n in enumerate(self.dims) for i in range(n) for j in range(n)]

    def basis(self) -> list["AlgebraElement"]:
        return [self.unit(k, i, j) for k, i, j in self.unit_labels()]

    def from_vector(self, vec) -> "AlgebraElement":
        vec = np.asarray(vec, dtype=complex)
        if vec.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {vec.shape}")
        blocks = [vec[o:o + n * n].reshape(n, n) for o, n in zip(self.offsets, self.dims)]
        return AlgebraElement(self, blocks)

    def from_dense(self, mat) -> "AlgebraElement":
        """Read the diagonal blocks of a block-diagonal matrix."""
        mat = np.asarray(mat, dtype=complex)
        blocks, pos = [], 0
        for n in self.dims:
            blocks.append(mat[pos:pos + n, pos:pos + n])
            pos += n
        return AlgebraElement(self, blocks)

    def left_matrix(self, x: "AlgebraElement") -> np.ndarray:
        """Matrix of ``y -> x y`` on coefficient vectors."""
        return _block_diag([np.kron(b, np.eye(n)) for b, n in zip(x.blocks, self.dims)])

    def right_matrix(self, x: "AlgebraElement") -> np.ndarray:
        """Matrix of ``y -> y x`` on coefficient vectors."""
        return _block_diag([np.kron(np.eye(n), b.T) for b, n in zip(x.blocks, self.dims)])

    def transpose_permutation(self) -> np.ndarray:
        """Permutation matrix sending the coefficients of ``x`` to those of ``x^T``."""
        perm = np.zeros((self.dim, self.dim))
        for k, i, j in self.unit_labels():
            perm[self.unit_index(k, j, i), self.unit_index(k, i, j)] = 1.0
        return perm


class AlgebraElement:
    """An element of a multi-matrix algebra, one square complex block per summand."""

    __slots__ = ("algebra", "blocks")

    def __init__(self, algebra: MultiMatrixAlgebra, blocks: Sequence):
        if len(blocks) != len(algebra.dims):
            raise ValueError(f"expected {len(algebra.dims)} blocks, got {len(blocks)}")
        arrs = []
        for b, n in zip(blocks, algebra.dims):
            a = np.array(b, dtype=complex)
            if a.shape != (n, n):
                raise ValueError(f"block of shape {a.shape} does not match size {n}")
            a.setflags(write=False)
            arrs.append(a)
        self.algebra = algebra
        self.blocks = tuple(arrs)

    def _check(self, other: "AlgebraElement"):
        if other.algebra.dims != self.algebra.dims:
            raise ValueError("elements belong to different algebras")

    def __add__(self, other):
        self._check(other)
        return AlgebraElement(self.algebra, [a + b for a, b in zip(self.blocks, other.blocks)])

    def __sub__(self, other):
        self._check(other)
        return AlgebraElement(self.algebra, [a - b for a, b in zip(self.blocks, other.blocks)])

    def __neg__(self):
        return AlgebraElement(self.algebra, [-a for a in self.blocks])

    def __mul__(self, scalar):
        return AlgebraElement(self.algebra, [scalar * a for a in self.blocks])

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return AlgebraElement(self.algebra, [a / scalar for a in self.blocks])

    def __matmul__(self, other):
        self._check(other)
        return AlgebraElement(self.algebra, [a @ b for a, b in zip(self.blocks, other.blocks)])

    def adj(self) -> "AlgebraElement":
        return AlgebraElement(self.algebra, [a.conj().T for a in self.blocks])

    def vector(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.blocks])

    def dense(self) -> np.ndarray:
        return _block_diag(list(self.blocks))

    def norm(self) -> float:
        """Operator norm."""
        return max((np.linalg.norm(a, 2) for a in self.blocks), default=0.0)

    def is_selfadjoint(self, tol: float = 1e-10) -> bool:
        scale = max(self.norm(), 1.0)
        return all(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol * scale for a in self.blocks)

    def allclose(self, other, atol: float = 1e-10) -> bool:
        self._check(other)
        return all(np.allclose(a, b, atol=atol, rtol=0) for a, b in zip(self.blocks, other.blocks))

    def __repr__(self):
        return f"AlgebraElement(dims={self.algebra.dims}, blocks={[a.tolist() for a in self.blocks]})"


def _block_diag(mats: Sequence[np.ndarray]) -> np.ndarray:
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols), dtype=complex)
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceWeights:
    """Trace of a minimal projection in each block: ``tau(x) = sum_l w_l Tr(x_l)``."""

    weights: tuple[float, ...]
    normalized: bool = False

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if not w or any(not np.isfinite(v) or v <= 0 for v in w):
            raise ValueError(f"trace weights must be positive, got {self.weights}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def matrix_trace(cls, algebra: MultiMatrixAlgebra) -> "TraceWeights":
        return cls(tuple(1.0 for _ in algebra.dims))

    def total(self, algebra: MultiMatrixAlgebra) -> float:
        """``tau(1)``."""
        return float(sum(w * n for w, n in zip(self.weights, algebra.dims)))

    def coefficient_weights(self, algebra: MultiMatrixAlgebra) -> np.ndarray:
        """Weight attached to every coefficient, so that ``<x, y> = sum w conj(y) x``."""
        return np.concatenate([np.full(n * n, w) for w, n in zip(self.weights, algebra.dims)])


def trace(w: TraceWeights, x: AlgebraElement) -> complex:
    """Weighted trace ``sum_l w_l Tr(x_l)``."""
    if len(w.weights) != len(x.blocks):
        raise ValueError("trace weights do not match the number of blocks")
    return complex(sum(t * np.trace(b) for t, b in zip(w.weights, x.blocks)))


def trace_functional_vector(w: TraceWeights, algebra: MultiMatrixAlgebra) -> np.ndarray:
    """Row vector ``f`` with ``trace(w, x) = f @ x.vector()``."""
    f = np.zeros(algebra.dim)
    for (k, i, j), idx in zip(algebra.unit_labels(), range(algebra.dim)):
        if i == j:
            f[idx] = w.weights[k]
    return f


# ---------------------------------------------------------------------------
# Positivity and functional calculus
# ---------------------------------------------------------------------------


def _hermitian_blocks(x: AlgebraElement, tol: float):
    if not x.is_selfadjoint(max(tol, 1e-10)):
        raise ValueError("element is not self-adjoint")
    out = []
    for b in x.blocks:
        h = (b + b.conj().T) / 2
        vals, vecs = np.linalg.eigh(h)
        out.append((vals, vecs))
    return out


def _scale(eigs) -> float:
    top = max((np.max(np.abs(v)) for v, _ in eigs if v.size), default=0.0)
    return top if top > 0 else 1.0


def is_positive(x: AlgebraElement, tol: float = DEFAULT_TOL) -> bool:
    """True when every block has minimum eigenvalue at least ``-tol * scale``."""
    eigs = _hermitian_blocks(x, tol)
    floor = -tol * _scale(eigs)
    return all(v.size == 0 or v.min() >= floor for v, _ in eigs)


def _positive_eigs(x: AlgebraElement, tol: float):
    eigs = _hermitian_blocks(x, tol)
    scale = _scale(eigs)
    for v, _ in eigs:
        if v.size and v.min() < -tol * scale:
            raise ValueError(f"element has a negative eigenvalue {v.min():.3e}")
    top = max((v.max() for v, _ in eigs if v.size), default=0.0)
    cutoff = tol * top if top > 0 else 0.0
    return eigs, cutoff


def fn_calculus(x: AlgebraElement, f: Callable[[np.ndarray], np.ndarray],
                tol: float = DEFAULT_TOL, zero_value: float = 0.0) -> AlgebraElement:
    """Apply ``f`` to the spectrum of a positive element.

    Eigenvalues at or below ``tol * lambda_max`` are treated as zero and sent
    to ``zero_value``.
    """
    eigs, cutoff = _positive_eigs(x, tol)
    blocks = []
    for vals, vecs in eigs:
        keep = vals > cutoff
        fv = np.full(vals.shape, zero_value, dtype=complex)
        if keep.any():
            fv[keep] = f(vals[keep])
        blocks.append((vecs * fv) @ vecs.conj().T)
    return AlgebraElement(x.algebra, blocks)


def support_projection(x: AlgebraElement, tol: float = DEFAULT_TOL) -> AlgebraElement:
    return fn_calculus(x, np.ones_like, tol)


def log_on_support(x: AlgebraElement, tol: float = DEFAULT_TOL) -> AlgebraElement:
    return fn_calculus(x, np.log, tol)


def power_on_support(x: AlgebraElement, p: float, tol: float = DEFAULT_TOL) -> AlgebraElement:
    return fn_calculus(x, lambda v: v ** p, tol)


def sqrt_psd(x: AlgebraElement, tol: float = DEFAULT_TOL) -> AlgebraElement:
    return fn_calculus(x, np.sqrt, tol)


def eta(values: np.ndarray) -> np.ndarray:
    """``-t log t`` with ``eta(0) = 0``."""
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    pos = values > 0
    out[pos] = -values[pos] * np.log(values[pos])
    return out


def selfadjoint_fn(x: AlgebraElement, f: Callable[[np.ndarray], np.ndarray]) -> AlgebraElement:
    """Functional calculus for a self-adjoint element, no support handling."""
    eigs = _hermitian_blocks(x, 1e-10)
    return AlgebraElement(x.algebra, [(vecs * f(vals)) @ vecs.conj().T for vals, vecs in eigs])


def max_eigenvalue(x: AlgebraElement) -> float:
    return max(float(np.linalg.eigvalsh((b + b.conj().T) / 2).max()) for b in x.blocks)


# Dense-matrix versions used on concrete Hilbert spaces.

def psd_fn(mat: np.ndarray, f, tol: float = DEFAULT_TOL, zero_value: float = 0.0) -> np.ndarray:
    h = (mat + mat.conj().T) / 2
    vals, vecs = np.linalg.eigh(h)
    top = vals.max() if vals.size else 0.0
    if vals.size and vals.min() < -tol * max(abs(top), abs(vals.min()), 1e-300):
        raise ValueError(f"matrix has a negative eigenvalue {vals.min():.3e}")
    keep = vals > tol * top if top > 0 else np.zeros(vals.shape, bool)
    fv = np.full(vals.shape, zero_value, dtype=complex)
    fv[keep] = f(vals[keep])
    return (vecs * fv) @ vecs.conj().T


def range_projection(mat: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    return psd_fn(mat, np.ones_like, tol)


def orthonormal_range(mat: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis (as columns) of the column span of ``mat``."""
    if mat.size == 0:
        return np.zeros((mat.shape[0], 0), complex)
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((mat.shape[0], 0), complex)
    return u[:, s > np.sqrt(tol) * s[0]]


def null_space(mat: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis of the kernel, with the relative cutoff applied to ``M^* M``."""
    n = mat.shape[1]
    if mat.shape[0] == 0:
        return np.eye(n, dtype=complex)
    _, s, vh = np.linalg.svd(mat, full_matrices=True)
    top = s[0] if s.size else 0.0
    rank = int(np.sum(s ** 2 > tol * top ** 2)) if top > 0 else 0
    return vh[rank:].conj().T


# ---------------------------------------------------------------------------
# Hilbert space models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HilbertSpaceModel:
    """Orthonormal coordinates for the span of a list of generators.

    ``coords[:, a]`` is the coordinate column of generator ``a``.  ``pinv``
    maps coordinates back to one preimage in generator space, which is what
    turns an operator given on generators into an operator on coordinates.
    """

    coords: np.ndarray
    pinv: np.ndarray
    conjugation: tuple[np.ndarray, bool] | None = None
    generators: tuple = field(default=(), repr=False)

    @property
    def dimension(self) -> int:
        return self.coords.shape[0]

    def vector(self, coefficients) -> np.ndarray:
        """Coordinates of ``sum_a c_a g_a``."""
        return self.coords @ np.asarray(coefficients, dtype=complex)

    def operator(self, on_generators: np.ndarray) -> np.ndarray:
        """Coordinate matrix of the operator whose generator-space matrix is given."""
        return self.coords @ on_generators @ self.pinv

    def well_defined_residual(self, on_generators: np.ndarray) -> float:
        """How far the operator is from preserving the kernel of the quotient."""
        leak = self.coords @ on_generators @ (np.eye(self.coords.shape[1]) - self.pinv @ self.coords)
        return float(np.max(np.abs(leak), initial=0.0))

    def apply_conjugation(self, vec: np.ndarray) -> np.ndarray:
        if self.conjugation is None:
            raise ValueError("no conjugation registered on this space")
        mat, flag = self.conjugation
        return mat @ (np.conj(vec) if flag else vec)


def quotient_from_gram(gram: np.ndarray, tol: float = DEFAULT_TOL, generators=()) -> HilbertSpaceModel:
    """Quotient by the kernel of a Gram matrix ``G[i, j] = <g_j, g_i>``.

    Raises ``ValueError`` if the Gram matrix has a negative eigenvalue beyond
    the tolerance, which means the caller's form is not positive.
    """
    gram = np.asarray(gram, dtype=complex)
    herm = (gram + gram.conj().T) / 2
    if np.max(np.abs(gram - herm), initial=0.0) > 1e-8 * max(1.0, np.max(np.abs(gram), initial=0.0)):
        raise ValueError("form is not hermitian")
    vals, vecs = np.linalg.eigh(herm)
    top = vals.max() if vals.size else 0.0
    if top <= 0:
        return HilbertSpaceModel(np.zeros((0, gram.shape[0]), complex),
                                 np.zeros((gram.shape[0], 0), complex), None, tuple(generators))
    if vals.min() < -max(tol, 1e-10) * top:
        raise ValueError(f"form is not positive semidefinite (eigenvalue {vals.min():.3e})")
    keep = vals > tol * top
    vals, vecs = vals[keep], vecs[:, keep]
    # order coordinates by decreasing weight for reproducibility
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    coords = np.sqrt(vals)[:, None] * vecs.conj().T
    pinv = vecs / np.sqrt(vals)[None, :]
    return HilbertSpaceModel(coords, pinv, None, tuple(generators))


def gram_quotient(generators: Sequence, form: Callable[[object, object], complex],
                  tol: float = DEFAULT_TOL) -> HilbertSpaceModel:
    """Orthonormal model of span(generators) modulo the kernel of ``form``.

    ``form(a, b)`` is the inner product ``<a, b>``, linear in ``a``.
    """
    gens = list(generators)
    n = len(gens)
    gram = np.zeros((n, n), dtype=complex)
    for i, j in product(range(n), range(n)):
        gram[i, j] = form(gens[j], gens[i])
    return quotient_from_gram(gram, tol, gens)


# ---------------------------------------------------------------------------
# GNS spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GNSSpace:
    """``L^2(B, phi)`` for ``phi(x) = tau(rho x)``."""

    algebra: MultiMatrixAlgebra
    weights: TraceWeights
    density: AlgebraElement
    model: HilbertSpaceModel
    phi_gram: np.ndarray  # phi_gram[b2, b1] = phi(e_b2^* e_b1)

    @property
    def dimension(self) -> int:
        return self.model.dimension

    def vector(self, x: AlgebraElement) -> np.ndarray:
        return self.model.vector(x.vector())

    @property
    def omega(self) -> np.ndarray:
        return self.vector(self.algebra.identity())

    def left(self, x: AlgebraElement) -> np.ndarray:
        return self.model.operator(self.algebra.left_matrix(x))

    def right(self, x: AlgebraElement) -> np.ndarray:
        """Right action, the commutant of the left action.

        On coefficients it is ``y -> y rho^{1/2} x rho^{-1/2}``.
        """
        return self.model.operator(self.algebra.right_matrix(self.modular_twist(x)))

    def modular_twist(self, x: AlgebraElement) -> AlgebraElement:
        root = sqrt_psd(self.density)
        inv_root = power_on_support(self.density, -0.5)
        return root @ x @ inv_root

    def element_from_vector(self, vec: np.ndarray) -> AlgebraElement:
        """The element ``x`` with ``x Omega = vec`` (least squares)."""
        coeffs, *_ = np.linalg.lstsq(self.model.coords, vec, rcond=None)
        return self.algebra.from_vector(coeffs)


def state_gram(algebra: MultiMatrixAlgebra, weights: TraceWeights, density: AlgebraElement) -> np.ndarray:
    """``G[b2, b1] = phi(e_b2^* e_b1)`` over matrix units."""
    labels = algebra.unit_labels()
    n = algebra.dim
    gram = np.zeros((n, n), dtype=complex)
    for a, (k, i, j) in enumerate(labels):
        for b, (k2, i2, j2) in enumerate(labels):
            # e_b^* e_a = e_{j2 i2} e_{i j} in block k, nonzero when i2 == i
            if k2 == k and i2 == i:
                gram[b, a] = weights.weights[k] * density.blocks[k][j, j2]
    return gram


def gns_space(algebra: MultiMatrixAlgebra, density: AlgebraElement,
              weights: TraceWeights | None = None, tol: float = DEFAULT_TOL) -> GNSSpace:
    """GNS space of the state ``phi(x) = tau(density x)`` with ``<x, y> = phi(y^* x)``."""
    if weights is None:
        weights = TraceWeights.matrix_trace(algebra)
    if not is_positive(density, tol):
        raise ValueError("density is not positive")
    gram = state_gram(algebra, weights, density)
    model = quotient_from_gram(gram, tol, algebra.unit_labels())
    return GNSSpace(algebra, weights, density, model, gram)


# ---------------------------------------------------------------------------
# Commutants of commuting multi-matrix actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    """A unital *-representation of a multi-matrix algebra on ``C^d``.

    ``unit(k, i, j)`` returns the matrix of the image of ``e_ij`` in block ``k``.
    For right actions pass ``unit(k, i, j) = right(e_ji)`` so that the images
    multiply like matrix units.
    """

    dims: tuple[int, ...]
    unit: Callable[[int, int, int], np.ndarray]


@dataclass(frozen=True)
class Commutant:
    """The joint commutant of commuting actions, realized as a multi-matrix algebra.

    Block ``b`` has frame ``frames[b]`` of shape ``(d, r_b, mu_b)``: for each of
    the ``r_b`` copies, ``mu_b`` orthonormal vectors.  An element ``z`` of the
    abstract algebra acts as ``sum_i F_i z_b F_i^*`` with ``F_i = frames[b][:, i, :]``.
    """

    algebra: MultiMatrixAlgebra
    frames: tuple[np.ndarray, ...]
    labels: tuple[tuple[int, ...], ...]

    @property
    def space_dim(self) -> int:
        return self.frames[0].shape[0]

    @property
    def multiplicities(self) -> tuple[int, ...]:
        return tuple(f.shape[1] for f in self.frames)

    def embed(self, z: AlgebraElement) -> np.ndarray:
        d = self.space_dim
        out = np.zeros((d, d), dtype=complex)
        for frame, block in zip(self.frames, z.blocks):
            for i in range(frame.shape[1]):
                f = frame[:, i, :]
                out += f @ block @ f.conj().T
        return out

    def compress(self, mat: np.ndarray) -> AlgebraElement:
        """Trace-preserving (for the ambient matrix trace) projection onto the commutant."""
        blocks = []
        for frame in self.frames:
            r = frame.shape[1]
            acc = sum(frame[:, i, :].conj().T @ mat @ frame[:, i, :] for i in range(r))
            blocks.append(acc / r)
        return AlgebraElement(self.algebra, blocks)

    def membership_residual(self, mat: np.ndarray) -> float:
        return float(np.max(np.abs(mat - self.embed(self.compress(mat))), initial=0.0))

    def basis(self) -> list[np.ndarray]:
        return [self.embed(u) for u in self.algebra.basis()]

    def weights_for(self, functional: Callable[[np.ndarray], complex]) -> TraceWeights:
        """Trace weights induced by a tracial functional on ambient matrices."""
        w = []
        for b, _ in enumerate(self.algebra.dims):
            w.append(functional(self.embed(self.algebra.unit(b, 0, 0))).real)
        return TraceWeights(tuple(w))

    def ambient_trace_weights(self) -> TraceWeights:
        return TraceWeights(tuple(float(r) for r in self.multiplicities))


def joint_commutant(actions: Sequence[Action], dim: int, tol: float = DEFAULT_TOL) -> Commutant:
    """Joint commutant of pairwise commuting actions on ``C^dim``.

    For each choice of one block per action, the product of the images of
    ``e_11`` is a projection whose range is the multiplicity space; moving it
    around with the images of ``e_i1`` gives the isotypic component.
    """
    dims_out, frames, labels = [], [], []
    for choice in product(*[range(len(a.dims)) for a in actions]):
        p = np.eye(dim, dtype=complex)
        for a, k in zip(actions, choice):
            p = p @ a.unit(k, 0, 0)
        if np.real(np.trace(p)) < 0.5:
            continue
        vals, vecs = np.linalg.eigh((p + p.conj().T) / 2)
        mult = vecs[:, vals > 0.5]
        mu = mult.shape[1]
        ranges = [range(a.dims[k]) for a, k in zip(actions, choice)]
        copies = []
        for idx in product(*ranges):
            w = np.eye(dim, dtype=complex)
            for a, k, i in zip(actions, choice, idx):
                w = w @ a.unit(k, i, 0)
            copies.append(w @ mult)
        frames.append(np.stack(copies, axis=1))
        dims_out.append(mu)
        labels.append(tuple(choice))
    total = sum(f.shape[1] * f.shape[2] for f in frames)
    if total != dim:
        raise ValueError(f"actions are not unital or do not commute: frames cover {total} of {dim}")
    stacked = np.concatenate([f.reshape(dim, -1) for f in frames], axis=1)
    err = np.max(np.abs(stacked.conj().T @ stacked - np.eye(dim)))
    if err > 1e-8:
        raise ValueError(f"isotypic frames are not orthonormal (error {err:.2e})")
    return Commutant(MultiMatrixAlgebra(tuple(dims_out)), tuple(frames), tuple(labels))


def commutant_by_nullspace(generators: Sequence[np.ndarray], tol: float = DEFAULT_TOL) -> np.ndarray:
    """Commutant of a set of matrices as a null space, returned as (count, d, d).

    Quadratic in ``d^2``; only used for small cross-checks.
    """
    d = generators[0].shape[0]
    eye = np.eye(d)
    rows = [np.kron(g, eye) - np.kron(eye, g.T) for g in generators]
    ns = null_space(np.vstack(rows), tol)
    return np.array([ns[:, c].reshape(d, d) for c in range(ns.shape[1])])


# ---------------------------------------------------------------------------
# Random elements
# ---------------------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def random_element(seed, algebra: MultiMatrixAlgebra) -> AlgebraElement:
    rng = _rng(seed)
    return AlgebraElement(algebra, [rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
                                    for n in algebra.dims])


def random_selfadjoint(seed, algebra: MultiMatrixAlgebra) -> AlgebraElement:
    g = random_element(seed, algebra)
    return (g + g.adj()) * 0.5


def random_positive(seed, algebra: MultiMatrixAlgebra) -> AlgebraElement:
    g = random_element(seed, algebra)
    return g.adj() @ g


def random_unitary(seed, algebra: MultiMatrixAlgebra) -> AlgebraElement:
    """Haar-distributed unitary in each block (QR with phase correction)."""
    rng = _rng(seed)
    blocks = []
    for n in algebra.dims:
        z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
        q, r = np.linalg.qr(z)
        d = np.diag(r)
        blocks.append(q * (d / np.abs(d)))
    return AlgebraElement(algebra, blocks)


def random_state(seed, algebra: MultiMatrixAlgebra, weights: TraceWeights | None = None) -> AlgebraElement:
    """Random positive density with ``trace(weights, rho) = 1``."""
    if weights is None:
        weights = TraceWeights.matrix_trace(algebra)
    p = random_positive(seed, algebra)
    return p / trace(weights, p).real
