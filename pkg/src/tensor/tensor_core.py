# ============================================
# LLTEBD: Dense Tensor Primitives
# ============================================
"""
Dense complex tensors are plain numpy arrays of dtype complex128 stored in
C order (row-major, last index fastest). Every reshape in the code base
relies on that linearization, so it is declared once here.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import scipy.linalg

from src.utils.errors import NumericalAbort

logger = logging.getLogger(__name__)

LINEARIZATION = "C"
DTYPE = np.complex128


def as_dense(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def as_matrix(t: np.ndarray, n_left: int) -> np.ndarray:
    """Group the first `n_left` indices into rows, the rest into columns."""
    shape = t.shape
    rows = int(np.prod(shape[:n_left], dtype=np.int64))
    return np.reshape(t, (rows, -1), order=LINEARIZATION)


@dataclass(frozen=True)
class TruncatedSVD:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    discarded_weight: float

    @property
    def rank(self) -> int:
        return len(self.S)


def contract(a: np.ndarray, b: np.ndarray, pairs: Sequence[Tuple[int, int]]) -> np.ndarray:
    """
    Sum over the paired indices of `a` and `b`.

    The result carries the unpaired indices of `a` followed by the
    unpaired indices of `b`, each in their original order.
    """
    axes_a = [p[0] for p in pairs]
    axes_b = [p[1] for p in pairs]
    for ia, ib in zip(axes_a, axes_b):
        if a.shape[ia] != b.shape[ib]:
            raise ValueError(
                f"dimension mismatch on pair ({ia}, {ib}): {a.shape[ia]} != {b.shape[ib]}"
            )
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def _svd_robust(m: np.ndarray):
    try:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesdd")
    except (np.linalg.LinAlgError, ValueError):
        logger.warning("gesdd did not converge on %s matrix, retrying with gesvd", m.shape)
    try:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalAbort(f"SVD failed on {m.shape} matrix: {e}")


def svd_truncate(m: np.ndarray, chi_max: int, eps_cut: float = 0.0) -> TruncatedSVD:
    """
    Truncated SVD of a matrix.

    Keeps at most `chi_max` singular values, then drops trailing values
    whose cumulative relative squared weight stays <= `eps_cut`. Exact
    zeros are never kept unless the whole matrix vanishes, in which case a
    single zero value is kept so the bond stays well formed.
    """
    if chi_max < 1:
        raise ValueError("chi_max must be a positive integer")
    if eps_cut < 0:
        raise ValueError("eps_cut must be >= 0")
    if m.ndim != 2:
        raise ValueError(f"svd_truncate expects a matrix, got rank {m.ndim}")

    u, s, vh = _svd_robust(m)
    if not np.all(np.isfinite(s)):
        raise NumericalAbort("non-finite singular values")

    w = s ** 2
    total = float(np.sum(w))
    if total == 0.0:
        return TruncatedSVD(u[:, :1], s[:1], vh[:1, :], 0.0)

    keep = min(chi_max, int(np.count_nonzero(s)))
    if eps_cut > 0.0:
        # tail[k] = relative weight of values k, k+1, ...
        tail = np.cumsum(w[::-1])[::-1] / total
        while keep > 1 and tail[keep - 1] <= eps_cut:
            keep -= 1

    discarded = float(np.sum(w[keep:])) / total
    discarded = min(max(discarded, 0.0), 1.0)
    return TruncatedSVD(
        as_dense(u[:, :keep]),
        np.ascontiguousarray(s[:keep]),
        as_dense(vh[:keep, :]),
        discarded,
    )


def isometry_error(u: np.ndarray, left: bool = True) -> float:
    """Deviation of U†U (left) or V V† (right) from the identity."""
    g = u.conj().T @ u if left else u @ u.conj().T
    return float(np.max(np.abs(g - np.eye(g.shape[0]))))


def kron_all(factors: List[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=DTYPE)
    for f in factors:
        out = np.kron(out, f)
    return out
