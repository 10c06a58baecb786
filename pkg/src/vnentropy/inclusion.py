"""Inclusions of multi-matrix algebras built from Bratteli data.

Block ``l`` of the big algebra holds ``a_kl`` consecutive copies of block
``k`` of the small algebra, copies ordered by ``(k, copy)``.  This layout is
relied on everywhere downstream.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mmalg import (
    DEFAULT_TOL,
    AlgebraElement,
    MultiMatrixAlgebra,
    TraceWeights,
    null_space,
    trace,
)


def markov_trace(dims_small, adjacency) -> np.ndarray:
    """Perron-Frobenius vector of ``A^T A`` normalized so that ``sum m_l t_l = 1``."""
    a = np.asarray(adjacency, dtype=float)
    m = np.asarray(dims_small) @ a
    vals, vecs = np.linalg.eigh(a.T @ a)
    t = np.abs(vecs[:, np.argmax(vals)])
    return t / float(m @ t)


@dataclass(frozen=True, eq=False)
class Inclusion:
    """``N`` (dims ``n_k``) inside ``M`` (dims ``m_l``) with multiplicities ``a_kl``."""

    small: MultiMatrixAlgebra
    big: MultiMatrixAlgebra
    adjacency: np.ndarray
    trace_big: TraceWeights
    trace_small: TraceWeights

    # -- layout ------------------------------------------------------------

    @cached_property
    def slots(self) -> list[list[tuple[int, int, int]]]:
        """For block ``l``: list of ``(k, copy, offset)`` in layout order."""
        out = []
        for l in range(len(self.big.dims)):
            pos, row = 0, []
            for k, n in enumerate(self.small.dims):
                for c in range(int(self.adjacency[k, l])):
                    row.append((k, c, pos))
                    pos += n
            out.append(row)
        return out

    def embed(self, y: AlgebraElement) -> AlgebraElement:
        blocks = []
        for l, m in enumerate(self.big.dims):
            b = np.zeros((m, m), dtype=complex)
            for k, _, off in self.slots[l]:
                n = self.small.dims[k]
                b[off:off + n, off:off + n] = y.blocks[k]
            blocks.append(b)
        return AlgebraElement(self.big, blocks)

    @cached_property
    def embed_matrix(self) -> np.ndarray:
        """Matrix of the embedding on coefficient vectors (0/1 entries)."""
        mat = np.zeros((self.big.dim, self.small.dim))
        for col, u in enumerate(self.small.basis()):
            mat[:, col] = self.embed(u).vector().real
        return mat

    # -- conditional expectation -------------------------------------------

    @cached_property
    def expectation_matrix(self) -> np.ndarray:
        """Solves ``tau_N(z^* y) = tau_M(embed(z)^* x)`` for ``y``: ``W_N^{-1} B^T W_M``."""
        w_small = self.trace_small.coefficient_weights(self.small)
        w_big = self.trace_big.coefficient_weights(self.big)
        gram = self.embed_matrix.T @ (w_big[:, None] * self.embed_matrix)
        # gram is W_N restricted to matrix units, diagonal in this layout; solve generally
        rhs = self.embed_matrix.T * w_big[None, :]
        sol = np.linalg.solve(np.diag(w_small), rhs)
        if not np.allclose(gram, np.diag(w_small), atol=1e-12):
            raise ValueError("trace on the small algebra is not the restriction of the big trace")
        return sol

    def conditional_expectation(self, x: AlgebraElement) -> AlgebraElement:
        return self.small.from_vector(self.expectation_matrix @ x.vector())

    def expectation_in_big(self, x: AlgebraElement) -> AlgebraElement:
        """``E_N(x)`` viewed as an element of ``M``."""
        return self.embed(self.conditional_expectation(x))

    @cached_property
    def expectation_map_big(self) -> np.ndarray:
        """Matrix of ``x -> embed(E_N(x))`` on coefficient vectors of ``M``."""
        return self.embed_matrix @ self.expectation_matrix

    # -- Pimsner-Popa basis and index --------------------------------------

    @cached_property
    def pp_basis(self) -> list[AlgebraElement]:
        """``sqrt(s_k / t_l) e^{(l)}_{i, q}`` with ``q`` the first row of each copy."""
        s, t = self.trace_small.weights, self.trace_big.weights
        basis = []
        for l, m in enumerate(self.big.dims):
            for k, _, off in self.slots[l]:
                scale = np.sqrt(s[k] / t[l])
                for i in range(m):
                    basis.append(scale * self.big.unit(l, i, off))
        return basis

    @cached_property
    def index(self) -> float:
        """``delta^2 = sum_j tau(eta_j^* eta_j)``."""
        return float(sum(trace(self.trace_big, e.adj() @ e).real for e in self.pp_basis))

    @property
    def delta(self) -> float:
        return float(np.sqrt(self.index))

    def reconstruction_residual(self, x: AlgebraElement) -> float:
        acc = self.big.zero()
        for e in self.pp_basis:
            acc = acc + e @ self.expectation_in_big(e.adj() @ x)
        return (acc - x).norm()

    # -- relative commutant --------------------------------------------------

    @cached_property
    def relative_commutant_basis(self) -> list[AlgebraElement]:
        """Basis of ``N' cap M`` orthonormal for ``<x, y> = tau(y^* x)``."""
        big = self.big
        rows = []
        for u in self.small.basis():
            ey = self.embed(u)
            rows.append(big.left_matrix(ey) - big.right_matrix(ey))
        ns = null_space(np.vstack(rows), DEFAULT_TOL)
        w = self.trace_big.coefficient_weights(big)
        gram = ns.conj().T @ (w[:, None] * ns)
        vals, vecs = np.linalg.eigh(gram)
        ortho = ns @ vecs / np.sqrt(vals)[None, :]
        return [big.from_vector(ortho[:, c]) for c in range(ortho.shape[1])]

    def central_projection(self, k: int, l: int) -> AlgebraElement:
        """``e_k f_l``: identity on the copies of small block ``k`` inside big block ``l``."""
        b = [np.zeros((m, m), dtype=complex) for m in self.big.dims]
        for kk, _, off in self.slots[l]:
            if kk == k:
                n = self.small.dims[k]
                b[l][off:off + n, off:off + n] = np.eye(n)
        return AlgebraElement(self.big, b)

    def central_pairs(self) -> list[tuple[int, int]]:
        return [(k, l) for k in range(len(self.small.dims)) for l in range(len(self.big.dims))
                if self.adjacency[k, l] > 0]

    def central_projection_trace(self, k: int, l: int) -> float:
        """``tau(e_k f_l) = n_k a_kl t_l``."""
        return self.small.dims[k] * int(self.adjacency[k, l]) * self.trace_big.weights[l]

    def commutant_expectation(self, x: AlgebraElement) -> AlgebraElement:
        """Trace-preserving conditional expectation of ``M`` onto ``N' cap M``."""
        acc = self.big.zero()
        for b in self.relative_commutant_basis:
            acc = acc + b * trace(self.trace_big, b.adj() @ x)
        return acc


def instance_digest(inc: Inclusion) -> str:
    """Short stable hash of the Bratteli data and trace."""
    payload = json.dumps({
        "dims_small": list(inc.small.dims),
        "adjacency": inc.adjacency.tolist(),
        "trace": [repr(float(v)) for v in inc.trace_big.weights],
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def build_inclusion(dims_small, adjacency, trace_spec="markov", normalize: bool = False) -> Inclusion:
    """Inclusion from block sizes of ``N``, the multiplicity matrix and the trace of ``M``.

    ``trace_spec`` is a list of positive minimal-projection traces ``t_l`` or
    the token ``"markov"``.
    """
    dims_small = [int(n) for n in dims_small]
    a = np.asarray(adjacency)
    if a.ndim != 2 or a.shape[0] != len(dims_small):
        raise ValueError(f"adjacency must have {len(dims_small)} rows, got shape {a.shape}")
    if not np.all(np.equal(np.mod(a, 1), 0)) or np.any(a < 0):
        raise ValueError("adjacency entries must be non-negative integers")
    a = a.astype(int)
    if np.any(a.sum(axis=1) == 0):
        raise ValueError("every block of the small algebra must embed somewhere (zero row)")
    if np.any(a.sum(axis=0) == 0):
        raise ValueError("every block of the big algebra must receive something (zero column)")
    dims_big = [int(v) for v in np.asarray(dims_small) @ a]
    if isinstance(trace_spec, str):
        if trace_spec != "markov":
            raise ValueError(f"unknown trace token {trace_spec!r}")
        t = markov_trace(dims_small, a)
        normalized = True
    else:
        t = np.asarray(trace_spec, dtype=float)
        if t.shape != (a.shape[1],):
            raise ValueError(f"trace needs {a.shape[1]} entries, got {t.shape}")
        if np.any(t <= 0):
            raise ValueError("trace weights must be positive")
        if normalize:
            t = t / float(np.asarray(dims_big) @ t)
        normalized = abs(float(np.asarray(dims_big) @ t) - 1.0) < 1e-12
    s = a @ t
    return Inclusion(
        small=MultiMatrixAlgebra(tuple(dims_small)),
        big=MultiMatrixAlgebra(tuple(dims_big)),
        adjacency=a,
        trace_big=TraceWeights(tuple(t), normalized),
        trace_small=TraceWeights(tuple(s), normalized),
    )
