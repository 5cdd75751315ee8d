"""Robust tensor PCA by alternating hard thresholding and pseudoskeleton projection.

Each iteration

1. shrinks the threshold ``zeta <- gamma * zeta`` and sets
   ``S = HT_zeta(T - L)``;
2. rebuilds ``L`` from ``T - S``: starting from the sampled core, every mode
   ``i`` (ascending) is expanded by ``C_i Q[:, :r_i] pinv(R[:r_i, :].T)``,
   where ``C_i`` holds the sampled mode-i fibers and ``Q R`` is the pivoted
   QR of the transposed intersection ``C_i[I_i, :].T``.

Index sets are drawn once, before the first iteration. Iteration stops when
the relative residual ``||T - L - S||_F / ||T||_F`` drops to ``epsilon``, the
budget runs out, or the residual grows for ten iterations in a row.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from ._io import atomic_writer
from .cur import DERIVED, INDEPENDENT, IndexSets, check_ranks, sample_indices, skeleton_factor
from .tensor import as_tensor, frobenius_norm, inf_norm, mode_product, unfold

__all__ = [
    "ConfigError",
    "SolverConfig",
    "IterationRecord",
    "SolverResult",
    "hard_threshold",
    "update_sparse",
    "fiber_matrix",
    "update_lowrank",
    "residual",
    "solve",
]

log = logging.getLogger(__name__)

DIVERGENCE_PATIENCE = 10


class ConfigError(ValueError):
    """Invalid solver configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SolverConfig:
    ranks: tuple[int, ...]
    row_cards: tuple[int, ...]
    epsilon: float = 1e-7
    zeta0: float | str = "auto"
    gamma: float = 0.7
    col_mode: str = DERIVED
    col_cards: tuple[int, ...] | None = None
    max_iters: int = 150
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        object.__setattr__(self, "row_cards", tuple(int(c) for c in self.row_cards))
        if self.col_cards is not None:
            object.__setattr__(self, "col_cards", tuple(int(c) for c in self.col_cards))
        self._check_scalars()

    def _check_scalars(self) -> None:
        if not (isinstance(self.gamma, (int, float)) and 0 < self.gamma < 1):
            raise ConfigError("gamma", f"must lie in (0, 1), got {self.gamma!r}")
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0):
            raise ConfigError("epsilon", f"must be positive, got {self.epsilon!r}")
        if self.zeta0 != "auto" and not (
            isinstance(self.zeta0, (int, float)) and self.zeta0 > 0 and math.isfinite(self.zeta0)
        ):
            raise ConfigError("zeta0", f"must be 'auto' or a positive number, got {self.zeta0!r}")
        if not (isinstance(self.max_iters, int) and self.max_iters >= 1):
            raise ConfigError("max_iters", f"must be a positive integer, got {self.max_iters!r}")
        if self.col_mode not in (DERIVED, INDEPENDENT):
            raise ConfigError("col_mode", f"must be 'derived' or 'independent', got {self.col_mode!r}")
        if self.col_mode == INDEPENDENT and self.col_cards is None:
            raise ConfigError("col_cards", "required when col_mode is 'independent'")
        if len(self.ranks) != len(self.row_cards):
            raise ConfigError("row_cards", "must have one entry per mode, like ranks")

    def validate(self, shape: Sequence[int]) -> None:
        """Check the configuration against a tensor shape."""
        n = len(shape)
        if len(self.ranks) != n:
            raise ConfigError("ranks", f"expected {n} entries, got {len(self.ranks)}")
        if self.col_cards is not None and len(self.col_cards) != n:
            raise ConfigError("col_cards", f"expected {n} entries, got {len(self.col_cards)}")
        for i, (r, c, d) in enumerate(zip(self.ranks, self.row_cards, shape)):
            if not 1 <= c <= d:
                raise ConfigError("row_cards", f"mode {i}: {c} outside [1, {d}]")
            if not 1 <= r <= c:
                raise ConfigError("ranks", f"mode {i}: rank {r} outside [1, row_cards={c}]")

    @classmethod
    def from_dict(cls, doc: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        for name in ("ranks", "row_cards"):
            if name not in doc:
                raise ConfigError(name, "missing required key")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "SolverConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<file>", f"not valid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("ranks", "row_cards", "col_cards"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    zeta: float
    residual: float
    sparse_support: int
    sparse_max: float
    wall_ms: float
    mode_ms: tuple[float, ...] = ()


TRACE_COLUMNS = ("iter", "zeta", "residual", "sparse_support", "wall_ms")


@dataclass(frozen=True)
class SolverResult:
    low_rank: np.ndarray
    sparse: np.ndarray
    trace: tuple[IterationRecord, ...]
    converged: bool
    index_sets: IndexSets
    stop_reason: str = "converged"
    zeta0: float = field(default=0.0)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.trace])

    def write_trace(self, path) -> None:
        with atomic_writer(path, newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.trace:
                w.writerow([r.iter, repr(r.zeta), repr(r.residual), r.sparse_support, f"{r.wall_ms:.3f}"])


def hard_threshold(t: np.ndarray, zeta: float) -> np.ndarray:
    """Keep entries with ``|t| > zeta`` (strictly), zero the rest."""
    if zeta < 0:
        raise ValueError(f"threshold must be nonnegative, got {zeta}")
    t = np.asarray(t, dtype=np.float64)
    return np.where(np.abs(t) > zeta, t, 0.0)


def update_sparse(t, l, zeta_prev: float, gamma: float):
    """Sparse step: returns ``(HT_{gamma*zeta_prev}(t - l), gamma*zeta_prev)``."""
    if np.shape(t) != np.shape(l):
        raise ValueError(f"shape mismatch: {np.shape(t)} vs {np.shape(l)}")
    zeta = gamma * zeta_prev
    return hard_threshold(np.subtract(t, l), zeta), zeta


def fiber_matrix(d: np.ndarray, mode: int, sets: IndexSets) -> np.ndarray:
    """``unfold(d, mode)[:, J_mode]`` without unfolding all of ``d`` when possible."""
    if sets.derived:
        idx = [s if j != mode else np.arange(d.shape[mode]) for j, s in enumerate(sets.row_sets)]
        return unfold(d[np.ix_(*idx)], mode)
    return unfold(d, mode)[:, sets.col_sets[mode]]


def update_lowrank(t, s, sets: IndexSets, ranks: Sequence[int], mode_ms: list | None = None) -> np.ndarray:
    """Low-rank step: pseudoskeleton reconstruction of ``t - s`` at ``ranks``."""
    d = np.subtract(t, s)
    ranks = check_ranks(sets, d.shape, ranks)
    low = d[np.ix_(*sets.row_sets)]
    for i in range(d.ndim):
        tic = time.perf_counter()
        c = fiber_matrix(d, i, sets)
        low = mode_product(low, skeleton_factor(c, c[sets.row_sets[i], :], ranks[i]), i)
        if mode_ms is not None:
            mode_ms.append(1e3 * (time.perf_counter() - tic))
    return low


def residual(t, l, s) -> float:
    """``||t - l - s||_F / ||t||_F`` (denominator floored at the smallest normal float)."""
    if not (np.shape(t) == np.shape(l) == np.shape(s)):
        raise ValueError("shape mismatch between t, l and s")
    num = frobenius_norm(np.asarray(t) - l - s)
    return float(num / max(frobenius_norm(t), np.finfo(np.float64).tiny))


def solve(t, config: SolverConfig, sets: IndexSets | None = None) -> SolverResult:
    """Split ``t`` into a low-Tucker-rank part and a sparse part.

    ``sets`` overrides the sampled index sets (they are otherwise drawn from
    ``config.seed``).
    """
    t = as_tensor(t)
    config.validate(t.shape)
    if sets is None:
        sets = sample_indices(t.shape, config.row_cards, config.col_mode, config.col_cards, config.seed)
    sets.validate(t.shape)
    check_ranks(sets, t.shape, config.ranks)

    zeta = inf_norm(t) if config.zeta0 == "auto" else float(config.zeta0)
    zeta0 = zeta
    low = np.zeros_like(t)
    sparse = np.zeros_like(t)
    trace = []
    err = math.inf
    rising = 0
    stop = "max_iters"
    k = 0
    while err > config.epsilon and k < config.max_iters:
        tic = time.perf_counter()
        sparse, zeta = update_sparse(t, low, zeta, config.gamma)
        mode_ms: list[float] = []
        low = update_lowrank(t, sparse, sets, config.ranks, mode_ms)
        prev, err = err, residual(t, low, sparse)
        k += 1
        rec = IterationRecord(
            iter=k,
            zeta=zeta,
            residual=err,
            sparse_support=int(np.count_nonzero(sparse)),
            sparse_max=inf_norm(sparse),
            wall_ms=1e3 * (time.perf_counter() - tic),
            mode_ms=tuple(mode_ms),
        )
        trace.append(rec)
        log.debug("iter %d zeta=%.3e residual=%.3e support=%d", k, zeta, err, rec.sparse_support)
        rising = rising + 1 if err > prev else 0
        if rising >= DIVERGENCE_PATIENCE:
            stop = "diverged"
            break
    converged = bool(err <= config.epsilon)
    if converged:
        stop = "converged"
    return SolverResult(low, sparse, tuple(trace), converged, sets, stop, zeta0)
