"""Small dense-matrix kernel: economy QR, truncated skeleton pseudoinverse,
extremal singular values.

LAPACK (through scipy) does the factorizations; the rank-truncated
pseudoinverse used by the low-rank update is assembled here from the QR
factors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "QrFactors",
    "economy_qr",
    "truncated_projection_factor",
    "pseudoinverse",
    "extremal_singular_values",
    "numerical_rank",
    "default_rank_tol",
]


@dataclass(frozen=True)
class QrFactors:
    """``a[:, perm] == q @ r`` with ``q`` orthonormal and ``r`` upper trapezoidal.

    ``q`` is ``m x k`` and ``r`` is ``k x n`` with ``k = min(m, n)``.
    """

    q: np.ndarray
    r: np.ndarray
    perm: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.q.shape[0], self.r.shape[1]


def economy_qr(a: np.ndarray, pivot: bool = True) -> QrFactors:
    """Householder QR in economy form, column-pivoted by default.

    With pivoting, ``|r[i, i]|`` is non-increasing, so the leading ``r x r``
    block is well conditioned whenever ``a`` has rank at least ``r``.
    Rank deficiency shows up as small trailing diagonal entries.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or 0 in a.shape:
        raise ValueError(f"expected a nonempty matrix, got shape {a.shape}")
    if pivot:
        q, r, perm = sla.qr(a, mode="economic", pivoting=True)
    else:
        q, r = sla.qr(a, mode="economic")
        perm = np.arange(a.shape[1])
    return QrFactors(q=q, r=r, perm=np.asarray(perm, dtype=np.int64))


def truncated_projection_factor(f: QrFactors, rank: int) -> np.ndarray:
    """Pseudoinverse of the rank-``rank`` truncation of ``a.T`` from ``a``'s QR.

    If ``a[:, perm] = Q R``, the truncation ``a_r = Q[:, :rank] R[:rank, :] P^T``
    gives ``pinv(a_r.T) = Q[:, :rank] pinv(R[:rank, :].T) P^T``, an
    ``m x n`` matrix. In the low-rank update ``a`` is the transposed
    intersection block ``U_i.T``, so the result is ``pinv(U_i)`` restricted to
    the leading ``rank`` pivoted directions and ``C_i @ result`` is the mode-i
    skeleton factor.

    The ``n x rank`` trapezoid ``R[:rank, :].T`` is inverted through its own
    thin QR followed by triangular back-substitution, never through an SVD.
    """
    m, n = f.shape
    k = f.r.shape[0]
    if not 1 <= rank <= k:
        raise ValueError(f"truncation rank {rank} outside [1, {k}]")
    qr_ = f.q[:, :rank]
    rt = f.r[:rank, :].T
    q2, r2 = sla.qr(rt, mode="economic")
    # pinv(rt) = r2^{-1} q2^T, requires rt to have full column rank
    diag = np.abs(np.diag(r2))
    if diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0) * max(rt.shape):
        pinv_rt = np.linalg.pinv(rt)
    else:
        pinv_rt = sla.solve_triangular(r2, q2.T, lower=False)
    core = np.empty_like(pinv_rt)
    core[:, f.perm] = pinv_rt
    return qr_ @ core


def pseudoinverse(a: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse."""
    return np.linalg.pinv(np.asarray(a, dtype=np.float64))


def extremal_singular_values(a: np.ndarray) -> tuple[float, float]:
    """Return ``(sigma_min, sigma_max)``, with ``sigma_min`` over ``min(m, n)`` values."""
    s = sla.svdvals(np.asarray(a, dtype=np.float64))
    return float(s[-1]), float(s[0])


def default_rank_tol(shape) -> float:
    """Relative rank tolerance ``1e-10 * max(shape)``."""
    return 1e-10 * max(shape)


def numerical_rank(a: np.ndarray, tol: float | None = None) -> int:
    """Count singular values above ``tol * sigma_max``.

    ``tol`` is relative; ``None`` selects :func:`default_rank_tol`.
    A zero matrix has rank 0.
    """
    a = np.asarray(a, dtype=np.float64)
    s = sla.svdvals(a)
    if s.size == 0 or s[0] == 0.0:
        return 0
    if tol is None:
        tol = default_rank_tol(a.shape)
    return int(np.count_nonzero(s > tol * s[0]))
