"""Tensor pseudoskeleton (CUR) decomposition.

For sampled row sets ``I_i`` and fiber sets ``J_i`` the decomposition keeps

* the core subtensor ``R = T[I_0, ..., I_{n-1}]``,
* the fiber matrices ``C_i = unfold(T, i)[:, J_i]``,
* the intersections ``U_i = C_i[I_i, :]``,

and reconstructs ``T ~ R x_0 (C_0 pinv(U_0)) x_1 ... x_{n-1} (C_{n-1} pinv(U_{n-1}))``.
The reconstruction is exact iff ``rank(U_i)`` equals the i-th Tucker rank of
``T`` for every mode.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import economy_qr, numerical_rank, truncated_projection_factor
from .tensor import frobenius_norm, multi_mode_product, subtensor, unfold

__all__ = [
    "IndexSets",
    "CurDecomposition",
    "ExactnessReport",
    "derived_columns",
    "sample_indices",
    "build_cur",
    "skeleton_factor",
    "reconstruct",
    "verify_exactness",
    "tucker_rank",
]

DERIVED = "derived"
INDEPENDENT = "independent"


@dataclass(frozen=True)
class IndexSets:
    """Per-mode row sets and fiber-column sets (0-based)."""

    row_sets: tuple[np.ndarray, ...]
    col_sets: tuple[np.ndarray, ...]
    derived: bool = True
    seed: int | None = None

    @property
    def row_cards(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.row_sets)

    @property
    def col_cards(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.col_sets)

    def validate(self, shape: Sequence[int]) -> None:
        if len(self.row_sets) != len(shape) or len(self.col_sets) != len(shape):
            raise ValueError("index sets do not match the number of modes")
        for i, d in enumerate(shape):
            ncols = int(np.prod([e for j, e in enumerate(shape) if j != i], dtype=np.int64))
            for name, s, size in (("row", self.row_sets[i], d), ("column", self.col_sets[i], ncols)):
                if len(s) == 0:
                    raise ValueError(f"empty {name} set for mode {i}")
                if s.min() < 0 or s.max() >= size:
                    raise ValueError(f"{name} index out of range for mode {i}")
                if np.unique(s).size != s.size:
                    raise ValueError(f"duplicate {name} index for mode {i}")
        if self.derived:
            for i in range(len(shape)):
                expect = derived_columns(shape, self.row_sets, i)
                if not np.array_equal(expect, self.col_sets[i]):
                    raise ValueError(f"column set for mode {i} is not the derived product set")

    def to_json(self) -> str:
        return json.dumps(
            {
                "row_sets": [s.tolist() for s in self.row_sets],
                "col_sets": [s.tolist() for s in self.col_sets],
                "derived": self.derived,
                "seed": self.seed,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "IndexSets":
        doc = json.loads(text)
        return cls(
            row_sets=tuple(np.asarray(s, dtype=np.int64) for s in doc["row_sets"]),
            col_sets=tuple(np.asarray(s, dtype=np.int64) for s in doc["col_sets"]),
            derived=bool(doc["derived"]),
            seed=doc.get("seed"),
        )


def derived_columns(shape: Sequence[int], row_sets: Sequence[np.ndarray], mode: int) -> np.ndarray:
    """Unfolding columns of the product set of the other modes' row sets.

    Tuples are enumerated in row-major order over the remaining modes, which
    is the column order of ``unfold(core, mode)``.
    """
    others = [j for j in range(len(shape)) if j != mode]
    if not others:
        return np.zeros(1, dtype=np.int64)
    grids = np.meshgrid(*[np.asarray(row_sets[j]) for j in others], indexing="ij")
    cols = np.ravel_multi_index(tuple(g.ravel() for g in grids), [shape[j] for j in others])
    return cols.astype(np.int64)


def sample_indices(
    shape: Sequence[int],
    row_cards: Sequence[int],
    col_mode: str = DERIVED,
    col_cards: Sequence[int] | None = None,
    seed: int = 0,
) -> IndexSets:
    """Uniformly sample row sets (and fiber sets) without replacement.

    Row sets are returned sorted. In ``"derived"`` mode each ``J_i`` is the
    product of the other modes' row sets and ``col_cards`` is ignored; in
    ``"independent"`` mode ``J_i`` is a uniform sample of ``col_cards[i]``
    unfolding columns.
    """
    shape = tuple(int(d) for d in shape)
    if len(row_cards) != len(shape):
        raise ValueError("row_cards must have one entry per mode")
    if col_mode not in (DERIVED, INDEPENDENT):
        raise ValueError(f"unknown column mode {col_mode!r}")
    rng = np.random.default_rng(seed)
    rows = []
    for i, (d, c) in enumerate(zip(shape, row_cards)):
        if not 1 <= c <= d:
            raise ValueError(f"row cardinality {c} for mode {i} outside [1, {d}]")
        rows.append(np.sort(rng.choice(d, size=int(c), replace=False)).astype(np.int64))
    if col_mode == DERIVED:
        cols = [derived_columns(shape, rows, i) for i in range(len(shape))]
    else:
        if col_cards is None or len(col_cards) != len(shape):
            raise ValueError("independent column sampling needs one col_card per mode")
        cols = []
        for i, c in enumerate(col_cards):
            ncols = int(np.prod([e for j, e in enumerate(shape) if j != i], dtype=np.int64))
            if not 1 <= c <= ncols:
                raise ValueError(f"column cardinality {c} for mode {i} outside [1, {ncols}]")
            cols.append(np.sort(rng.choice(ncols, size=int(c), replace=False)).astype(np.int64))
    return IndexSets(tuple(rows), tuple(cols), derived=col_mode == DERIVED, seed=seed)


def check_ranks(sets: IndexSets, shape: Sequence[int], ranks: Sequence[int]) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(shape):
        raise ValueError("ranks must have one entry per mode")
    for i, r in enumerate(ranks):
        bound = min(sets.row_cards[i], sets.col_cards[i], shape[i])
        if not 1 <= r <= bound:
            raise ValueError(
                f"rank {r} for mode {i} infeasible: need 1 <= r <= "
                f"min(|I|={sets.row_cards[i]}, |J|={sets.col_cards[i]}, d={shape[i]})"
            )
    return ranks


@dataclass(frozen=True)
class CurDecomposition:
    core: np.ndarray
    fibers: tuple[np.ndarray, ...]
    intersections: tuple[np.ndarray, ...]
    ranks: tuple[int, ...]
    sets: IndexSets = field(repr=False)


def build_cur(t: np.ndarray, sets: IndexSets, ranks: Sequence[int]) -> CurDecomposition:
    """Extract core, fibers and intersections from ``t``. Pure copying."""
    sets.validate(t.shape)
    ranks = check_ranks(sets, t.shape, ranks)
    core = subtensor(t, sets.row_sets)
    fibers = tuple(unfold(t, i)[:, sets.col_sets[i]] for i in range(t.ndim))
    inters = tuple(c[sets.row_sets[i], :] for i, c in enumerate(fibers))
    return CurDecomposition(core, fibers, inters, ranks, sets)


def skeleton_factor(fiber: np.ndarray, intersection: np.ndarray, rank: int) -> np.ndarray:
    """``C_i pinv(U_i)`` with ``pinv(U_i)`` truncated to ``rank`` via pivoted QR of ``U_i.T``."""
    qr = economy_qr(intersection.T, pivot=True)
    return fiber @ truncated_projection_factor(qr, rank)


def reconstruct(c: CurDecomposition, order: Sequence[int] | None = None) -> np.ndarray:
    factors = [
        skeleton_factor(c.fibers[i], c.intersections[i], c.ranks[i])
        for i in range(c.core.ndim)
    ]
    return multi_mode_product(c.core, factors, order)


def tucker_rank(t: np.ndarray, tol: float | None = None) -> tuple[int, ...]:
    """Numerical multilinear rank: the rank of every unfolding."""
    return tuple(numerical_rank(unfold(t, i), tol) for i in range(t.ndim))


@dataclass(frozen=True)
class ExactnessReport:
    intersection_ranks: tuple[int, ...]
    fiber_ranks: tuple[int, ...]
    tucker_ranks: tuple[int, ...]
    rel_error: float
    exact: bool


def verify_exactness(c: CurDecomposition, t: np.ndarray, tol: float | None = None) -> ExactnessReport:
    """Check the rank condition for exact pseudoskeleton reconstruction.

    ``exact`` is set when every intersection ``U_i`` has the same numerical
    rank as the mode-i unfolding of ``t``; ``rel_error`` is measured
    independently so the two can be compared. ``tol`` is a relative
    singular-value cutoff (default ``1e-10 * max(rows, cols)`` per matrix).
    """
    u_ranks = tuple(numerical_rank(u, tol) for u in c.intersections)
    c_ranks = tuple(numerical_rank(f, tol) for f in c.fibers)
    t_ranks = tucker_rank(t, tol)
    norm = frobenius_norm(t)
    diff = frobenius_norm(t - reconstruct(c))
    rel = diff / norm if norm > 0 else diff
    return ExactnessReport(u_ranks, c_ranks, t_ranks, rel, u_ranks == t_ranks)
