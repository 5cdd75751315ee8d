"""Tensor robust PCA via tensor pseudoskeleton (CUR) decomposition."""
from .cur import IndexSets, CurDecomposition, build_cur, reconstruct, sample_indices, verify_exactness
from .solver import SolverConfig, SolverResult, solve
from .synth import planted_instance, random_tucker

__version__ = "0.1.0"
