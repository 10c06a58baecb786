"""Shared instances.  Towers are expensive enough to build once per session."""

import math
from functools import lru_cache

import numpy as np
import pytest

from vnentropy.inclusion import build_inclusion
from vnentropy.tower import Tower, extend_upward

LOG2 = math.log(2)

# name -> (dims_small, adjacency, trace)
INSTANCES = {
    "C_in_M2": ([1], [[2]], [0.5]),
    "C2_in_M2": ([1, 1], [[1], [1]], [0.5]),
    "C_in_C2": ([1], [[1, 1]], [1 / 3, 2 / 3]),
    "mixed": ([1, 2], [[1, 0], [1, 1]], [0.25, 0.25]),
}

# lower inclusions fed to extend_upward; all carry the Markov trace
LOWER = {
    "up_C_in_C2": ([1], [[1, 1]]),
    "up_C_in_C3": ([1], [[1, 1, 1]]),
    "up_C2_in_M2": ([1, 1], [[1], [1]]),
}


@lru_cache(maxsize=None)
def inclusion(name):
    dims, adj, tr = INSTANCES[name]
    return build_inclusion(dims, adj, tr, normalize=True)


@lru_cache(maxsize=None)
def tower(name):
    return Tower(inclusion(name))


@lru_cache(maxsize=None)
def downward(name):
    dims, adj = LOWER[name]
    return extend_upward(build_inclusion(dims, adj, "markov"))


@pytest.fixture(params=sorted(INSTANCES))
def any_tower(request):
    return tower(request.param)


@pytest.fixture(params=sorted(LOWER))
def any_down(request):
    return downward(request.param)


def max_abs(a) -> float:
    return float(np.max(np.abs(np.asarray(a)), initial=0.0))


def factor_inclusions(max_size: int = 4):
    """All ``N`` inside ``M_m`` (``m <= max_size``) up to reordering of summands.

    Yields ``(dims_small, adjacency)`` with a single column.
    """
    pieces = [(n, a) for n in range(1, max_size + 1) for a in range(1, max_size + 1) if n * a <= max_size]

    def grow(start, room):
        if room == 0:
            yield []
            return
        for i in range(start, len(pieces)):
            n, a = pieces[i]
            if n * a <= room:
                for rest in grow(i, room - n * a):
                    yield [(n, a)] + rest

    for m in range(1, max_size + 1):
        for combo in grow(0, m):
            yield [n for n, _ in combo], [[a] for _, a in combo]
