"""Relative entropy and Rényi entropies of bimodule maps on finite inclusions of multi-matrix algebras."""

from .inclusion import Inclusion, build_inclusion, markov_trace
from .mmalg import AlgebraElement, MultiMatrixAlgebra, TraceWeights
from .tower import Tower, build_tower

__all__ = [
    "AlgebraElement",
    "Inclusion",
    "MultiMatrixAlgebra",
    "Tower",
    "TraceWeights",
    "build_inclusion",
    "build_tower",
    "markov_trace",
]
