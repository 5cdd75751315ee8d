"""Planted low-Tucker-rank plus sparse instances and recovery metrics."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._io import atomic_writer
from .tensor import frobenius_norm, inf_norm, multi_mode_product, read_dtf, write_dtf

__all__ = [
    "random_tucker",
    "random_factor",
    "measure_incoherence",
    "random_sparse",
    "PlantedInstance",
    "planted_instance",
    "sparse_magnitude_bound",
    "RecoveryMetrics",
    "recovery_metrics",
    "fit_geometric_decay",
]


def random_factor(d: int, r: int, rng: np.random.Generator, spiked: bool = False) -> np.ndarray:
    """Orthonormal ``d x r`` factor from the QR of a Gaussian matrix.

    With ``spiked`` the first column is the unit vector ``e_0``, which makes
    row 0 maximally coherent.
    """
    g = rng.standard_normal((d, r))
    if spiked:
        g[:, 0] = 0.0
        g[0, 0] = 1.0
    q, _ = np.linalg.qr(g)
    return q


def random_tucker(dims: Sequence[int], ranks: Sequence[int], seed=0, spiked: bool = False):
    """Exact Tucker tensor ``core x_i A_i`` with Gaussian core and orthonormal factors.

    Returns ``(tensor, factors, core)``.
    """
    dims = tuple(int(d) for d in dims)
    ranks = tuple(int(r) for r in ranks)
    if len(dims) != len(ranks):
        raise ValueError("dims and ranks differ in length")
    for i, (d, r) in enumerate(zip(dims, ranks)):
        if not 1 <= r <= d:
            raise ValueError(f"rank {r} for mode {i} outside [1, {d}]")
    rng = np.random.default_rng(seed)
    core = rng.standard_normal(ranks)
    factors = [random_factor(d, r, rng, spiked) for d, r in zip(dims, ranks)]
    return multi_mode_product(core, factors), factors, core


def measure_incoherence(factors: Sequence[np.ndarray], atol: float = 1e-8) -> tuple[float, ...]:
    """Per-mode ``mu_i = (d_i / r_i) * max_j ||A_i[j, :]||^2``."""
    mus = []
    for i, a in enumerate(factors):
        d, r = a.shape
        if np.abs(a.T @ a - np.eye(r)).max() > atol:
            raise ValueError(f"factor {i} does not have orthonormal columns")
        mus.append(float(d / r * np.max(np.sum(a * a, axis=1))))
    return tuple(mus)


def random_sparse(dims: Sequence[int], density: float, magnitude: float, seed=0) -> np.ndarray:
    """Uniform support of size ``round(density * N)``; values in +-[magnitude/2, magnitude]."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density {density} outside [0, 1]")
    if not magnitude > 0:
        raise ValueError("magnitude must be positive")
    dims = tuple(int(d) for d in dims)
    n = int(np.prod(dims, dtype=np.int64))
    count = int(round(density * n))
    rng = np.random.default_rng(seed)
    out = np.zeros(n)
    support = rng.choice(n, size=count, replace=False)
    signs = rng.choice(np.array([-1.0, 1.0]), size=count)
    out[support] = signs * rng.uniform(magnitude / 2, magnitude, size=count)
    return out.reshape(dims)


def sparse_magnitude_bound(zeta0: float, dims: Sequence[int]) -> float:
    """Largest outlier size allowed by ``||S*||_inf <= zeta0 / (2 sqrt(log d_max))``."""
    return zeta0 / (2.0 * math.sqrt(math.log(max(dims))))


@dataclass(frozen=True)
class PlantedInstance:
    observed: np.ndarray
    low_rank_truth: np.ndarray
    sparse_truth: np.ndarray
    ranks: tuple[int, ...]
    incoherence: tuple[float, ...]
    sparse_density: float
    magnitude: float
    seed: int

    @property
    def dims(self) -> tuple[int, ...]:
        return self.observed.shape

    def save(self, directory) -> None:
        """Write ``observed.dtf``, ``low_rank.dtf``, ``sparse.dtf`` and ``manifest.json``."""
        os.makedirs(directory, exist_ok=True)
        write_dtf(os.path.join(directory, "observed.dtf"), self.observed)
        write_dtf(os.path.join(directory, "low_rank.dtf"), self.low_rank_truth)
        write_dtf(os.path.join(directory, "sparse.dtf"), self.sparse_truth)
        manifest = {
            "dims": list(self.dims),
            "ranks": list(self.ranks),
            "density": self.sparse_density,
            "magnitude": self.magnitude,
            "seed": self.seed,
            "incoherence": list(self.incoherence),
        }
        with atomic_writer(os.path.join(directory, "manifest.json")) as fh:
            json.dump(manifest, fh, indent=2)

    @classmethod
    def load(cls, directory) -> "PlantedInstance":
        with open(os.path.join(directory, "manifest.json")) as fh:
            m = json.load(fh)
        return cls(
            observed=read_dtf(os.path.join(directory, "observed.dtf")),
            low_rank_truth=read_dtf(os.path.join(directory, "low_rank.dtf")),
            sparse_truth=read_dtf(os.path.join(directory, "sparse.dtf")),
            ranks=tuple(m["ranks"]),
            incoherence=tuple(m["incoherence"]),
            sparse_density=m["density"],
            magnitude=m["magnitude"],
            seed=m["seed"],
        )


def planted_instance(
    dims: Sequence[int],
    ranks: Sequence[int],
    density: float,
    magnitude: float | None = None,
    seed: int = 0,
    spiked: bool = False,
) -> PlantedInstance:
    """Draw ``T = L* + S*``.

    Without an explicit ``magnitude`` the outliers are sized at the bound
    :func:`sparse_magnitude_bound` evaluated at ``||L*||_inf``.
    """
    lr_seed, sp_seed = np.random.SeedSequence(seed).spawn(2)
    low, factors, _ = random_tucker(dims, ranks, lr_seed, spiked)
    if magnitude is None:
        magnitude = sparse_magnitude_bound(inf_norm(low), dims)
    sparse = random_sparse(dims, density, magnitude, sp_seed)
    return PlantedInstance(
        observed=low + sparse,
        low_rank_truth=low,
        sparse_truth=sparse,
        ranks=tuple(int(r) for r in ranks),
        incoherence=measure_incoherence(factors),
        sparse_density=float(density),
        magnitude=float(magnitude),
        seed=seed,
    )


def fit_geometric_decay(values, floor: float | None = None, skip: int = 0):
    """Least-squares fit of ``log(values[k]) ~ a + k log(rho)``.

    Values after the first one at or below ``floor`` are dropped, as are the
    first ``skip`` values. Returns ``(rho, r_squared)``; ``(nan, nan)`` with
    fewer than three usable points.
    """
    v = np.asarray(values, dtype=np.float64)[skip:]
    if floor is not None:
        hit = np.flatnonzero(v <= floor)
        if hit.size:
            v = v[: hit[0] + 1]
    k = np.arange(v.size, dtype=np.float64)
    ok = np.isfinite(v) & (v > 0)
    k, y = k[ok], np.log(v[ok])
    if k.size < 3:
        return math.nan, math.nan
    slope, intercept = np.polyfit(k, y, 1)
    fitted = intercept + slope * k
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(math.exp(slope)), r2


@dataclass(frozen=True)
class RecoveryMetrics:
    low_rank_error: float
    sparse_error: float
    precision: float
    recall: float
    decay_ratio: float
    decay_r2: float


def _relative(diff: np.ndarray, ref: np.ndarray) -> float:
    den = frobenius_norm(ref)
    num = frobenius_norm(diff)
    return num / den if den > 0 else num


def support_scores(estimate: np.ndarray, truth: np.ndarray, min_truth: float = 0.0):
    """Support precision, and recall restricted to entries with ``|truth| > min_truth``."""
    est = estimate != 0
    n_est = np.count_nonzero(est)
    precision = np.count_nonzero(est & (truth != 0)) / n_est if n_est else 1.0
    strong = np.abs(truth) > min_truth
    n_strong = np.count_nonzero(strong)
    recall = np.count_nonzero(est & strong) / n_strong if n_strong else 1.0
    return float(precision), float(recall)


def recovery_metrics(result, instance: PlantedInstance, floor: float | None = None) -> RecoveryMetrics:
    """Compare a solver result to the planted truth."""
    if result.low_rank.shape != instance.dims:
        raise ValueError("result and instance shapes differ")
    precision, recall = support_scores(result.sparse, instance.sparse_truth)
    rho, r2 = fit_geometric_decay(result.residuals, floor=floor)
    return RecoveryMetrics(
        low_rank_error=_relative(result.low_rank - instance.low_rank_truth, instance.low_rank_truth),
        sparse_error=_relative(result.sparse - instance.sparse_truth, instance.sparse_truth),
        precision=precision,
        recall=recall,
        decay_ratio=rho,
        decay_r2=r2,
    )
