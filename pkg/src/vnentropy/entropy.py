"""Divergences and entropies of bimodule maps.

Densities are ``AlgebraElement``s together with the ``TraceWeights`` of the
trace they are densities for.  Values are floats; ``math.inf`` marks a
support failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chan import (
    LinearMap,
    correspondence,
    fourier_multiplier,
    lam,
    majorizes,
)
from .inclusion import Inclusion
from .mmalg import (
    DEFAULT_TOL,
    AlgebraElement,
    MultiMatrixAlgebra,
    TraceWeights,
    _rng,
    fn_calculus,
    random_selfadjoint,
    random_unitary,
    trace,
)
from .tower import DownwardTower, Tower


# ---------------------------------------------------------------------------
# Divergences with respect to a trace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DivergenceResult:
    value: float
    support_ok: bool
    mass_rho: float = math.nan
    mass_sigma: float = math.nan
    rank_rho: int = 0
    rank_sigma: int = 0

    def __float__(self):
        return self.value


def _eig_blocks(x: AlgebraElement, tol: float):
    """Eigen-decompositions of a positive element with its relative cutoff."""
    out = []
    top = 0.0
    for b in x.blocks:
        h = (b + b.conj().T) / 2
        if np.max(np.abs(b - h), initial=0.0) > 1e-8 * max(1.0, np.max(np.abs(b), initial=0.0)):
            raise ValueError("argument is not self-adjoint")
        vals, vecs = np.linalg.eigh(h)
        out.append((vals, vecs))
        if vals.size:
            top = max(top, float(np.max(np.abs(vals))))
    for vals, _ in out:
        if vals.size and vals.min() < -max(tol, 1e-10) * max(top, 1e-300):
            raise ValueError(f"argument is not positive (eigenvalue {vals.min():.3e})")
    return out, tol * top


def _support_ok(rho_eigs, rho_cut, sigma_eigs, sigma_cut) -> bool:
    for (rv, rvec), (sv, svec) in zip(rho_eigs, sigma_eigs):
        r = rvec[:, rv > rho_cut]
        if r.shape[1] == 0:
            continue
        s = svec[:, sv > sigma_cut]
        leak = r - s @ (s.conj().T @ r)
        if np.max(np.abs(leak), initial=0.0) > 1e-6:
            return False
    return True


def _diag(w: TraceWeights, rho_eigs, rho_cut, sigma_eigs, sigma_cut):
    mass = lambda eigs: float(sum(wt * v.sum() for wt, (v, _) in zip(w.weights, eigs)))
    rank = lambda eigs, cut: int(sum(np.sum(v > cut) for v, _ in eigs))
    return dict(mass_rho=mass(rho_eigs), mass_sigma=mass(sigma_eigs),
                rank_rho=rank(rho_eigs, rho_cut), rank_sigma=rank(sigma_eigs, sigma_cut))


def umegaki(rho: AlgebraElement, sigma: AlgebraElement, weights: TraceWeights,
            tol: float = DEFAULT_TOL) -> DivergenceResult:
    """``tau(rho log rho - rho log sigma)``, ``+inf`` unless ``supp rho <= supp sigma``."""
    re, rc = _eig_blocks(rho, tol)
    se, sc = _eig_blocks(sigma, tol)
    info = _diag(weights, re, rc, se, sc)
    if not _support_ok(re, rc, se, sc):
        return DivergenceResult(math.inf, False, **info)
    total = 0.0
    for w, (rv, rvec), (sv, svec) in zip(weights.weights, re, se):
        keep = rv > rc
        if not keep.any():
            continue
        lam_r, vec_r = rv[keep], rvec[:, keep]
        ks = sv > sc
        # rho log sigma traced: sum_i lam_i <v_i, log(sigma) v_i>
        overlap = np.abs(svec[:, ks].conj().T @ vec_r) ** 2
        cross = float(np.log(sv[ks]) @ overlap @ lam_r)
        total += w * (float(lam_r @ np.log(lam_r)) - cross)
    return DivergenceResult(total, True, **info)


def _power_blocks(eigs, cut, power):
    out = []
    for vals, vecs in eigs:
        keep = vals > cut
        fv = np.zeros(vals.shape)
        fv[keep] = vals[keep] ** power
        out.append((vecs * fv) @ vecs.conj().T)
    return out


def renyi(rho: AlgebraElement, sigma: AlgebraElement, weights: TraceWeights, p: float,
          tol: float = DEFAULT_TOL) -> DivergenceResult:
    """Sandwiched Rényi divergence ``(p - 1)^-1 log tau((sigma^a rho sigma^a)^p)``, ``a = (1 - p) / 2p``."""
    p = float(p)
    if not (p >= 0.5):
        raise ValueError(f"Rényi order must lie in [1/2, inf], got {p}")
    if p == 1.0:
        return umegaki(rho, sigma, weights, tol)
    re, rc = _eig_blocks(rho, tol)
    se, sc = _eig_blocks(sigma, tol)
    info = _diag(weights, re, rc, se, sc)
    if p > 1 and not _support_ok(re, rc, se, sc):
        return DivergenceResult(math.inf, False, **info)
    if math.isinf(p):
        s = _power_blocks(se, sc, -0.5)
        top = -math.inf
        for sb, rb in zip(s, rho.blocks):
            y = sb @ rb @ sb
            top = max(top, float(np.linalg.eigvalsh((y + y.conj().T) / 2).max()))
        if top <= 0:
            return DivergenceResult(-math.inf, True, **info)
        return DivergenceResult(math.log(top), True, **info)
    a = (1 - p) / (2 * p)
    s = _power_blocks(se, sc, a)
    spectra = []
    for sb, rb in zip(s, rho.blocks):
        y = sb @ rb @ sb
        spectra.append(np.linalg.eigvalsh((y + y.conj().T) / 2))
    top = max((v.max() for v in spectra if v.size), default=0.0)
    q = 0.0
    for w, vals in zip(weights.weights, spectra):
        # rounding noise below the cutoff would be inflated by the power p < 1
        vals = vals[vals > tol * top]
        q += w * float(np.sum(vals ** p))
    if q <= 0:
        return DivergenceResult(math.inf, False, **info)
    return DivergenceResult(math.log(q) / (p - 1), True, **info)


def classical_renyi(a: Sequence[float], b: Sequence[float], p: float) -> float:
    """Rényi divergence of probability vectors, the commuting special case."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if p == 1:
        m = a > 0
        return float(np.sum(a[m] * np.log(a[m] / b[m])))
    if math.isinf(p):
        m = a > 0
        return float(np.log(np.max(a[m] / b[m])))
    m = (a > 0) & (b > 0)
    return float(np.log(np.sum(a[m] ** p * b[m] ** (1 - p))) / (p - 1))


# ---------------------------------------------------------------------------
# Multiplier entropies
# ---------------------------------------------------------------------------


def multiplier_densities(phi: LinearMap, psi: LinearMap, tower: Tower):
    """``Delta^{1/2} Phi^ Delta^{1/2}`` and the same for ``Psi`` in ``M' cap M_2`` blocks."""
    root = tower.delta_end_sqrt
    a = tower.to_end(fourier_multiplier(phi, tower))
    b = tower.to_end(fourier_multiplier(psi, tower))
    herm = lambda z: (z + z.adj()) * 0.5
    return herm(root @ a @ root), herm(root @ b @ root)


def s_tau(phi: LinearMap, psi: LinearMap, tower: Tower, tol: float = DEFAULT_TOL) -> DivergenceResult:
    """``delta D_{tau_M2}(Delta^{1/2} Phi^ Delta^{1/2} || Delta^{1/2} Psi^ Delta^{1/2})``."""
    rho, sigma = multiplier_densities(phi, psi, tower)
    res = umegaki(rho, sigma, tower.m2_weights, tol)
    if not res.support_ok:
        return res
    return DivergenceResult(tower.delta * res.value, True, res.mass_rho, res.mass_sigma,
                            res.rank_rho, res.rank_sigma)


@dataclass(frozen=True)
class RenyiValues:
    """Three readings of the multiplier Rényi entropy.

    ``raw`` is ``D_p(rho || sigma)``, ``prefixed`` is ``delta`` times that and
    ``normalized`` is ``D_p(delta rho || delta sigma)``, the divergence of the
    two states when both maps are unital.
    """

    p: float
    raw: DivergenceResult
    prefixed: float
    normalized: DivergenceResult

    @property
    def value(self) -> float:
        return self.normalized.value


def s_p(phi: LinearMap, psi: LinearMap, tower: Tower, p: float, tol: float = DEFAULT_TOL) -> RenyiValues:
    rho, sigma = multiplier_densities(phi, psi, tower)
    w = tower.m2_weights
    raw = renyi(rho, sigma, w, p, tol)
    d = tower.delta
    norm = renyi(rho * d, sigma * d, w, p, tol)
    return RenyiValues(float(p), raw, d * raw.value, norm)


def renyi_curve(phi: LinearMap, psi: LinearMap, tower: Tower, grid: Sequence[float],
                tol: float = DEFAULT_TOL) -> list[RenyiValues]:
    return [s_p(phi, psi, tower, p, tol) for p in grid]


def is_monotone(values: Sequence[float], slack: float = 1e-8) -> bool:
    return all(b >= a - slack for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# Closed forms for the pair (id, E_N)
# ---------------------------------------------------------------------------


def h_closed_form_subalgebra(inc: Inclusion) -> float:
    """``H(M|N)`` from the Bratteli data and the trace vectors."""
    m, n = inc.big.dims, inc.small.dims
    t, s = inc.trace_big.weights, inc.trace_small.weights
    a = inc.adjacency
    val = sum(m[l] * t[l] * math.log(m[l] / t[l]) for l in range(len(m)))
    val += sum(n[k] * s[k] * math.log(s[k] / n[k]) for k in range(len(n)))
    for k, l in inc.central_pairs():
        val += n[k] * a[k, l] * t[l] * math.log(min(n[k] / a[k, l], 1.0))
    return float(val)


def upper_bound_value(tower: Tower) -> float:
    """``2 log delta + tau_M(log Delta_0)``."""
    inc = tower.inc
    log_d0 = fn_calculus(tower.delta0_closed_form, np.log)
    return float(math.log(inc.index) + trace(inc.trace_big, log_d0).real)


def upper_bound_gap_formula(inc: Inclusion) -> float:
    """``sum n_k a_kl t_l log max(a_kl / n_k, 1)``."""
    n, t, a = inc.small.dims, inc.trace_big.weights, inc.adjacency
    return float(sum(n[k] * a[k, l] * t[l] * math.log(max(a[k, l] / n[k], 1.0))
                     for k, l in inc.central_pairs()))


def s_half_closed_form(tower: Tower) -> float:
    """``2 log delta - log tau_M(Delta_0^{-1})``."""
    inc = tower.inc
    inv = fn_calculus(tower.delta0_closed_form, lambda v: 1 / v)
    return float(math.log(inc.index) - math.log(trace(inc.trace_big, inv).real))


# ---------------------------------------------------------------------------
# Partition functional and its search
# ---------------------------------------------------------------------------
#
# Families of elements are handled as "stacks": one array of shape (K, n, n)
# per block, so that the functional over a whole partition is a handful of
# batched eigen-decompositions.


@dataclass(frozen=True)
class PartitionOfUnity:
    elements: tuple[AlgebraElement, ...]

    def __post_init__(self):
        if not self.elements:
            raise ValueError("a partition of unity needs at least one element")
        alg = self.elements[0].algebra
        total = alg.zero()
        for x in self.elements:
            if not x.is_selfadjoint(1e-9):
                raise ValueError("partition elements must be self-adjoint")
            for b in x.blocks:
                if b.size and np.linalg.eigvalsh((b + b.conj().T) / 2).min() < -1e-10:
                    raise ValueError("partition elements must be positive")
            total = total + x
        if not total.allclose(alg.identity(), atol=1e-10):
            raise ValueError("partition elements do not sum to 1")

    def __len__(self):
        return len(self.elements)


def _stack(xs: Sequence[AlgebraElement]) -> list[np.ndarray]:
    return [np.array([x.blocks[k] for x in xs]) for k in range(len(xs[0].blocks))]


def _unstack(stack: list[np.ndarray], algebra: MultiMatrixAlgebra) -> list[AlgebraElement]:
    return [AlgebraElement(algebra, [b[i] for b in stack]) for i in range(stack[0].shape[0])]


def _apply(phi: LinearMap, stack: list[np.ndarray]) -> list[np.ndarray]:
    count = stack[0].shape[0]
    vecs = np.concatenate([b.reshape(count, -1) for b in stack], axis=1) @ phi.matrix.T
    out = []
    for off, n in zip(phi.target.offsets, phi.target.dims):
        b = vecs[:, off:off + n * n].reshape(count, n, n)
        out.append((b + np.conj(np.swapaxes(b, 1, 2))) / 2)
    return out


def _batched_divergence(rho: list[np.ndarray], sigma: list[np.ndarray], weights: TraceWeights,
                        tol: float = DEFAULT_TOL) -> np.ndarray:
    """Umegaki divergence of every pair in two stacks; ``inf`` on support failure."""
    rho_e = [np.linalg.eigh(b) for b in rho]
    sig_e = [np.linalg.eigh(b) for b in sigma]
    top_r = np.max([np.abs(v).max(axis=1) for v, _ in rho_e], axis=0)
    top_s = np.max([np.abs(v).max(axis=1) for v, _ in sig_e], axis=0)
    total = np.zeros(rho[0].shape[0])
    bad = np.zeros(rho[0].shape[0], dtype=bool)
    for w, (rv, rvec), (sv, svec) in zip(weights.weights, rho_e, sig_e):
        keep_r = rv > (tol * top_r)[:, None]
        keep_s = sv > (tol * top_s)[:, None]
        overlap = np.abs(np.einsum("kij,kil->kjl", np.conj(svec), rvec)) ** 2  # [k, s, r]
        # rho's support must sit inside sigma's
        leak = np.einsum("kjl,kj->kl", overlap, ~keep_s)
        bad |= np.any(keep_r & (leak > 1e-12), axis=1)
        lr = np.where(keep_r, rv, 1.0)
        ls = np.where(keep_s, sv, 1.0)
        self_term = np.sum(np.where(keep_r, rv * np.log(lr), 0.0), axis=1)
        cross = np.einsum("kj,kjl,kl->k", np.log(ls), overlap, np.where(keep_r, rv, 0.0))
        total += w * (self_term - cross)
    total[bad] = math.inf
    return total


def partition_value(phi: LinearMap, psi: LinearMap, xs: Sequence[AlgebraElement],
                    weights: TraceWeights, tol: float = DEFAULT_TOL) -> float:
    """``sum_i D_tau(Phi(x_i) || Psi(x_i))``."""
    return _stack_value(phi, psi, _stack(xs), weights, tol)


def _stack_value(phi, psi, stack, weights, tol=DEFAULT_TOL) -> float:
    return float(np.sum(_batched_divergence(_apply(phi, stack), _apply(psi, stack), weights, tol)))


def _herm(x: AlgebraElement) -> AlgebraElement:
    return (x + x.adj()) * 0.5


def _close_partition(stack: list[np.ndarray]) -> list[np.ndarray] | None:
    """Scale a family so its sum is at most 1 and append the remainder's spectral pieces.

    The last piece absorbs rounding so the family sums to 1 exactly.
    """
    sums = [b.sum(axis=0) for b in stack]
    top = max(np.linalg.eigvalsh(s).max() for s in sums)
    if top <= 0:
        return None
    if top > 1:
        stack = [b / top for b in stack]
        sums = [s / top for s in sums]
    pieces = []
    for total in sums:
        vals, vecs = np.linalg.eigh(np.eye(total.shape[0]) - total)
        keep = vals > 1e-12
        pieces.append(np.einsum("aj,j,bj->jab", vecs[:, keep], vals[keep], np.conj(vecs[:, keep])))
    full = []
    for kk, b in enumerate(stack):
        parts = [b] + [pc if k == kk else np.zeros((pc.shape[0],) + b.shape[1:], complex)
                       for k, pc in enumerate(pieces)]
        blk = np.concatenate(parts, axis=0)
        blk[-1] = blk[-1] + (np.eye(b.shape[1]) - blk.sum(axis=0))
        blk[-1] = (blk[-1] + blk[-1].conj().T) / 2
        full.append(blk)
    return full


@dataclass
class SearchResult:
    best: float
    partition: list[AlgebraElement]
    trace: list[float] = field(default_factory=list)
    evaluations: int = 0
    by_strategy: dict[str, float] = field(default_factory=dict)


class _Search:
    def __init__(self, phi, psi, weights, algebra, budget):
        self.phi, self.psi, self.weights, self.algebra = phi, psi, weights, algebra
        self.budget = budget
        self.best_stack = None
        self.result = SearchResult(-math.inf, [])

    @property
    def left(self) -> int:
        return self.budget - self.result.evaluations

    def evaluate(self, stack, strategy: str) -> float:
        r = self.result
        if r.evaluations >= self.budget:
            raise StopIteration
        val = _stack_value(self.phi, self.psi, stack, self.weights)
        r.evaluations += 1
        if val > r.best:
            r.best = val
            self.best_stack = stack
        r.by_strategy[strategy] = max(r.by_strategy.get(strategy, -math.inf), val)
        r.trace.append(r.best)
        return val


def _haar(rng, count: int, n: int) -> np.ndarray:
    z = (rng.standard_normal((count, n, n)) + 1j * rng.standard_normal((count, n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=1, axis2=2)
    return q * (d / np.abs(d))[:, None, :]


def _jones_family(search: _Search, tower: Tower, e_minus1: AlgebraElement, count: int, rng):
    """``x_k = delta^2 / (n (1 + eps)) u_k Delta_0^{-1/2} e_-1 Delta_0^{-1/2} u_k^*`` plus a remainder."""
    inc = tower.inc
    root = fn_calculus(tower.delta0_closed_form, lambda v: v ** -0.5)
    base = _herm(root @ e_minus1 @ root)
    sizes = [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128]
    epss = [0.0, 0.01, 0.05, 0.1, 0.25]
    for i in range(count):
        n = sizes[i % len(sizes)]
        eps = epss[(i // len(sizes)) % len(epss)]
        scale = inc.index / (n * (1 + eps))
        small_u = [_haar(rng, n, d) for d in inc.small.dims]
        stack = []
        for l, m in enumerate(inc.big.dims):
            u = np.zeros((n, m, m), complex)
            for k, _, off in inc.slots[l]:
                d = inc.small.dims[k]
                u[:, off:off + d, off:off + d] = small_u[k]
            stack.append(scale * u @ base.blocks[l] @ np.conj(np.swapaxes(u, 1, 2)))
        closed = _close_partition(stack)
        if closed is not None:
            search.evaluate(closed, "jones")


def _spectral_family(search: _Search, algebra: MultiMatrixAlgebra, count: int, rng):
    """Eigenprojections of random self-adjoint elements, regrouped with simplex weights."""
    for _ in range(count):
        h = random_selfadjoint(rng, algebra)
        vecs = [np.linalg.eigh(b)[1] for b in h.blocks]
        total = algebra.size
        parts = int(rng.integers(1, total + 1))
        if rng.random() < 0.5:
            weights = np.eye(total)
        else:
            weights = rng.dirichlet(np.ones(parts), size=total).T  # each projection spread over the parts
        stack, pos = [], 0
        for v, n in zip(vecs, algebra.dims):
            wk = weights[:, pos:pos + n]
            stack.append(np.einsum("pj,aj,bj->pab", wk, v, np.conj(v)))
            pos += n
        search.evaluate(stack, "spectral")


def _hill_climb(search: _Search, algebra: MultiMatrixAlgebra, count: int, rng):
    """Conjugate the best partition by unitaries near 1, keeping improvements."""
    step = 0.3
    for _ in range(count):
        current = search.best_stack
        if current is None:
            return
        h = random_selfadjoint(rng, algebra)
        us = [_expi(step * b) for b in h.blocks]
        before = search.result.best
        search.evaluate([u @ b @ u.conj().T for u, b in zip(us, current)], "climb")
        step = min(step * 1.5, 1.0) if search.result.best > before else max(step * 0.7, 1e-3)


def _expi(h: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((h + h.conj().T) / 2)
    return (vecs * np.exp(1j * vals)) @ vecs.conj().T


def h_partition_search(phi: LinearMap, psi: LinearMap, tower: Tower, budget: int = 10_000, seed=0,
                       e_minus1: AlgebraElement | None = None,
                       strategies: Sequence[str] = ("jones", "spectral", "climb")) -> SearchResult:
    """Lower bound for ``H(Phi|Psi)`` by maximizing the partition functional.

    One unit of ``budget`` is one evaluation of the functional.  The trivial
    partition ``{1}`` is always evaluated first.  ``trace`` records the best
    value after every evaluation.
    """
    for s in strategies:
        if s not in ("jones", "spectral", "climb"):
            raise ValueError(f"unknown search strategy {s!r}")
    rng = _rng(seed)
    big = tower.inc.big
    search = _Search(phi, psi, tower.inc.trace_big, big, budget)
    active = [s for s in strategies if s != "jones" or e_minus1 is not None]
    shares = {"jones": 5, "spectral": 3, "climb": 2}
    try:
        search.evaluate(_stack([big.identity()]), "trivial")
        total = sum(shares[s] for s in active) or 1
        plan = {s: (search.left * shares[s]) // total for s in active}
        for s in active:
            if s == "jones":
                _jones_family(search, tower, e_minus1, plan[s], rng)
            elif s == "spectral":
                _spectral_family(search, big, plan[s], rng)
            else:
                _hill_climb(search, big, plan[s], rng)
    except StopIteration:
        pass
    if search.best_stack is not None:
        search.result.partition = _unstack(search.best_stack, big)
    return search.result


# ---------------------------------------------------------------------------
# Downward formula
# ---------------------------------------------------------------------------


def h_downward(phi: LinearMap, psi: LinearMap, down: DownwardTower, tol: float = DEFAULT_TOL) -> DivergenceResult:
    """``delta^2 D_tau(Phi(x) || Psi(x))`` with ``x = Delta_0^{-1/2} e_-1 Delta_0^{-1/2}``."""
    t = down.tower
    root = fn_calculus(t.delta0_closed_form, lambda v: v ** -0.5)
    x = _herm(root @ down.e_minus1 @ root)
    res = umegaki(_herm(phi(x)), _herm(psi(x)), down.inc.trace_big, tol)
    if not res.support_ok:
        return res
    return DivergenceResult(t.index * res.value, True, res.mass_rho, res.mass_sigma,
                            res.rank_rho, res.rank_sigma)


# ---------------------------------------------------------------------------
# Data-processing witness
# ---------------------------------------------------------------------------


def dp_witness(tower: Tower, xs: Sequence[AlgebraElement], a: AlgebraElement) -> list[AlgebraElement]:
    """``T(A)_j = v_N^* (x_j (x) 1) Delta^{-1/2} A Delta^{-1/2} v_N`` for ``A`` in ``M' cap M_2``."""
    rts, sf = tower.rts, tower.sf
    c = tower.m_prime_m1
    inv_root = rts.lift(c.embed(fn_calculus(tower.delta_element, lambda v: v ** -0.5)))
    core = inv_root @ tower.from_end(a) @ inv_root
    vn = rts.v_n
    return [sf.element_of_left(vn.conj().T @ rts.left(x) @ core @ vn) for x in xs]


# ---------------------------------------------------------------------------
# Araki relative entropy of CP maps
# ---------------------------------------------------------------------------


def _end_density(corr, vec: np.ndarray) -> AlgebraElement:
    """Density of ``x -> <x vec, vec>`` on ``End`` for the ambient matrix trace."""
    end = corr.end
    blocks = []
    for b, frame in enumerate(end.frames):
        r, mu = frame.shape[1], frame.shape[2]
        blk = np.zeros((mu, mu), complex)
        for i in range(r):
            f = frame[:, i, :]
            w = f.conj().T @ vec
            blk += np.outer(w, w.conj())
        blocks.append(blk / r)
    return AlgebraElement(end.algebra, blocks)


def araki(phi: LinearMap, psi: LinearMap, weights: TraceWeights, density: AlgebraElement | None = None,
          reference: LinearMap | None = None, tol: float = DEFAULT_TOL) -> DivergenceResult:
    """``S_phi(Phi, Psi)`` through the correspondence of ``reference`` (default ``Psi``).

    ``density`` is the density of the state on the target for ``weights``.
    """
    ref = psi if reference is None else reference
    corr = correspondence(ref, weights, density)
    try:
        h_phi = corr.derivative(phi)
        h_psi = corr.derivative(psi)
    except ValueError:
        return DivergenceResult(math.inf, False)
    # In the standard form of End, omega(Phi) has density D^{1/2} h_Phi D^{1/2},
    # where D is the density of the vector state of Omega.
    end = corr.end
    root = fn_calculus(_herm(_end_density(corr, corr.omega)), np.sqrt)
    nu_phi = root @ end.compress(h_phi) @ root
    nu_psi = root @ end.compress(h_psi) @ root
    return umegaki(_herm(nu_phi), _herm(nu_psi), end.ambient_trace_weights(), tol)


def state_density_of(psi: LinearMap, weights: TraceWeights) -> AlgebraElement:
    """Density of ``tau o Psi`` with respect to ``tau``: ``D_ji = tau(Psi(e_ij)) / w_k``."""
    a = psi.source
    blocks = [np.zeros((n, n), complex) for n in a.dims]
    for (k, i, j), u in zip(a.unit_labels(), a.basis()):
        blocks[k][j, i] = trace(weights, psi(u)) / weights.weights[k]
    return AlgebraElement(a, blocks)
