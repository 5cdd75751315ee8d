"""Dense n-mode tensors and the mode-wise algebra built on them.

Tensors are plain C-ordered ``numpy.ndarray`` objects of dtype float64, so the
flat buffer is row-major with the last index varying fastest. Modes and
indices are 0-based throughout.

Unfolding convention
--------------------
The mode-``k`` unfolding places entry ``(i_0, ..., i_{n-1})`` at row ``i_k``
and column

    sum_{j != k} i_j * prod_{l != k, l > j} d_l

i.e. the remaining modes are flattened in row-major order. Every CUR index
computation in this package relies on this formula.
"""
from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from ._io import atomic_writer

__all__ = [
    "as_tensor",
    "unfold",
    "fold",
    "mode_product",
    "multi_mode_product",
    "subtensor",
    "frobenius_norm",
    "inf_norm",
    "axpy",
    "unfolding_column",
    "write_dtf",
    "read_dtf",
    "DTFError",
]

DTF_MAGIC = b"DTF1"


class DTFError(ValueError):
    """Raised for malformed DTF1 tensor files."""


def as_tensor(data, copy: bool = False) -> np.ndarray:
    """Coerce ``data`` to a finite float64 C-contiguous array with n >= 1."""
    if copy:
        t = np.array(data, dtype=np.float64, order="C")
    else:
        t = np.asarray(data, dtype=np.float64, order="C")
    if t.ndim < 1:
        raise ValueError("a tensor needs at least one mode")
    if any(d < 1 for d in t.shape):
        raise ValueError(f"every dimension must be positive, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains NaN or Inf")
    return t


def _check_mode(ndim: int, mode: int) -> None:
    if not 0 <= mode < ndim:
        raise ValueError(f"mode {mode} out of range for a {ndim}-mode tensor")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization, shape ``(d_mode, prod_{j != mode} d_j)``."""
    _check_mode(t.ndim, mode)
    return np.ascontiguousarray(np.moveaxis(t, mode, 0)).reshape(t.shape[mode], -1)


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(int(d) for d in shape)
    _check_mode(len(shape), mode)
    rest = [d for j, d in enumerate(shape) if j != mode]
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(
            f"matrix of shape {m.shape} cannot fold into {shape} along mode {mode}"
        )
    t = m.reshape([shape[mode]] + rest)
    return np.ascontiguousarray(np.moveaxis(t, 0, mode))


def mode_product(t: np.ndarray, a: np.ndarray, mode: int) -> np.ndarray:
    """Compute ``t x_mode a``; ``unfold(result, mode) == a @ unfold(t, mode)``."""
    _check_mode(t.ndim, mode)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != t.shape[mode]:
        raise ValueError(
            f"matrix with shape {a.shape} does not act on mode {mode} "
            f"of size {t.shape[mode]}"
        )
    shape = list(t.shape)
    shape[mode] = a.shape[0]
    return fold(a @ unfold(t, mode), mode, shape)


def multi_mode_product(t: np.ndarray, mats: Sequence[np.ndarray], order=None) -> np.ndarray:
    """Apply ``mats[i]`` along mode ``i`` for every mode, in ``order`` (default ascending)."""
    if len(mats) != t.ndim:
        raise ValueError(f"need {t.ndim} matrices, got {len(mats)}")
    for i in order if order is not None else range(t.ndim):
        t = mode_product(t, mats[i], i)
    return t


def _check_index_list(idx, size: int, mode: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError(f"index list for mode {mode} is empty")
    if idx.min() < 0 or idx.max() >= size:
        raise ValueError(f"index out of range for mode {mode} (size {size})")
    if np.unique(idx).size != idx.size:
        raise ValueError(f"duplicate index in mode {mode}")
    return idx


def subtensor(t: np.ndarray, sets: Sequence[Sequence[int]]) -> np.ndarray:
    """Extract ``t[I_0, ..., I_{n-1}]`` preserving the order of each index list."""
    if len(sets) != t.ndim:
        raise ValueError(f"need {t.ndim} index lists, got {len(sets)}")
    idx = [_check_index_list(s, d, k) for k, (s, d) in enumerate(zip(sets, t.shape))]
    return np.ascontiguousarray(t[np.ix_(*idx)])


def frobenius_norm(t: np.ndarray) -> float:
    return float(np.linalg.norm(np.ravel(t)))


def inf_norm(t: np.ndarray) -> float:
    t = np.asarray(t)
    return float(np.abs(t).max()) if t.size else 0.0


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``alpha * x + y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return alpha * x + y


def unfolding_column(shape: Sequence[int], mode: int, index: Sequence[int]) -> int:
    """Column of the mode-``mode`` unfolding that holds the entry at ``index``."""
    col = 0
    for j, d in enumerate(shape):
        if j == mode:
            continue
        col = col * d + int(index[j])
    return col


def write_dtf(path, t: np.ndarray) -> None:
    """Write ``t`` in the DTF1 binary format, atomically (temp file + rename)."""
    t = as_tensor(t)
    header = DTF_MAGIC + struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape)
    with atomic_writer(path, "wb") as fh:
        fh.write(header)
        fh.write(t.astype("<f8", copy=False).tobytes(order="C"))


def read_dtf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DTF_MAGIC:
        raise DTFError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise DTFError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<I", raw, 4)
    if n < 1:
        raise DTFError(f"{path}: mode count must be positive")
    end = 8 + 4 * n
    if len(raw) < end:
        raise DTFError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{n}I", raw, 8)
    if any(d == 0 for d in dims):
        raise DTFError(f"{path}: zero dimension in {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) != end + 8 * count:
        raise DTFError(
            f"{path}: payload has {len(raw) - end} bytes, expected {8 * count}"
        )
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=end)
    return data.astype(np.float64).reshape(dims)
