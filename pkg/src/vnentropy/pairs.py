"""Quotients of ``A (x) L^2(B, phi)`` spanned by pairs of matrix units.

Both ``L^2(M) (x)_N L^2(M)`` and the GNS correspondence of a CP map are of
this shape: generators ``e_a (x) e_b`` with form

    <a1 (x) b1, a2 (x) b2> = phi(b2^* Psi(a2^* a1) b1)

for a linear map ``Psi: A -> B`` given on coefficient vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mmalg import DEFAULT_TOL, AlgebraElement, HilbertSpaceModel, MultiMatrixAlgebra, quotient_from_gram


def pair_gram(source: MultiMatrixAlgebra, target: MultiMatrixAlgebra,
              psi: np.ndarray, phi_gram: np.ndarray) -> np.ndarray:
    """Gram matrix ``G[(a2, b2), (a1, b1)] = <e_a1 (x) e_b1, e_a2 (x) e_b2>``."""
    na, nb = source.dim, target.dim
    gram = np.zeros((na, nb, na, nb), dtype=complex)
    labels = source.unit_labels()
    by_row: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for idx, (k, i, j) in enumerate(labels):
        by_row.setdefault((k, i), []).append((idx, j))
    cache: dict[tuple[int, int, int], np.ndarray] = {}
    for (k, _), members in by_row.items():
        for a1, j1 in members:
            for a2, j2 in members:
                key = (k, j2, j1)
                if key not in cache:
                    # e_a2^* e_a1 = e_{j2 j1} in block k
                    kvec = psi[:, source.unit_index(k, j2, j1)]
                    cache[key] = phi_gram @ target.left_matrix(target.from_vector(kvec))
                gram[a2, :, a1, :] = cache[key]
    return gram.reshape(na * nb, na * nb)


@dataclass(frozen=True, eq=False)
class PairSpace:
    """Orthonormal model of the quotient with helpers for product operators."""

    source: MultiMatrixAlgebra
    target: MultiMatrixAlgebra
    model: HilbertSpaceModel

    @classmethod
    def build(cls, source, target, psi, phi_gram, tol=DEFAULT_TOL) -> "PairSpace":
        gram = pair_gram(source, target, psi, phi_gram)
        return cls(source, target, quotient_from_gram(gram, tol))

    @property
    def dimension(self) -> int:
        return self.model.dimension

    @cached_property
    def _coords3(self) -> np.ndarray:
        return self.model.coords.reshape(self.dimension, self.source.dim, self.target.dim)

    def kron_operator(self, left: np.ndarray | None, right: np.ndarray | None) -> np.ndarray:
        """Coordinate matrix of ``L (x) R`` acting on generator coefficients."""
        c = self._coords3
        if left is not None:
            c = np.einsum("dab,ax->dxb", c, left)
        if right is not None:
            c = np.einsum("dab,by->day", c, right)
        return c.reshape(self.dimension, -1) @ self.model.pinv

    def kron_sum_operator(self, terms) -> np.ndarray:
        """Coordinate matrix of ``sum_j L_j (x) R_j``."""
        c = self._coords3
        acc = np.zeros_like(c)
        for left, right in terms:
            acc += np.einsum("dab,ax,by->dxy", c, left, right, optimize=True)
        return acc.reshape(self.dimension, -1) @ self.model.pinv

    def pair_vector(self, a: AlgebraElement | np.ndarray, b: AlgebraElement | np.ndarray) -> np.ndarray:
        """Coordinates of ``a (x) b``."""
        av = a.vector() if isinstance(a, AlgebraElement) else np.asarray(a)
        bv = b.vector() if isinstance(b, AlgebraElement) else np.asarray(b)
        return self._coords3.reshape(self.dimension, -1) @ np.kron(av, bv)

    def tensor_map(self, left: np.ndarray) -> np.ndarray:
        """Matrix of ``x -> (L x)``-style maps from source coefficients into the space.

        ``left`` has shape ``(source.dim * target.dim, k)``: generator coefficients
        of ``k`` vectors.
        """
        return self.model.coords @ left
