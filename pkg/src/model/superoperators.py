# src/model/superoperators.py
"""
Vectorization conventions.

A density matrix rho on a Hilbert space of dimension D is flattened
row-major, vec(rho)[i*D + j] = rho[i, j]. With that choice the map
rho -> A rho B is the matrix kron(A, B^T) acting on vec(rho).

On n sites of local dimension d the row-major vector carries the indices
(i_1..i_n, j_1..j_n). Matrix-product superkets use the site-major order
(i_1 j_1, i_2 j_2, ...), so every site owns one index of dimension d^2.
"""
from typing import Iterable, List, Tuple

import numpy as np

from src.tensor.tensor_core import DTYPE, as_dense

# (coefficient, A, B) stands for coefficient * A rho B; None means identity.
Term = Tuple[complex, np.ndarray, np.ndarray]


def left(a: np.ndarray) -> np.ndarray:
    return np.kron(a, np.eye(a.shape[0], dtype=DTYPE))


def right(b: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(b.shape[0], dtype=DTYPE), b.T)


def sandwich(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(a, b.T)


def commutator(h: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    """-(i/hbar)[H, .]"""
    return (-1j / hbar) * (left(h) - right(h))


def dissipator(x: np.ndarray) -> np.ndarray:
    """X†X rho + rho X†X - 2 X rho X†, the sign convention of the master equation."""
    xdx = x.conj().T @ x
    return left(xdx) + right(xdx) - 2.0 * sandwich(x, x.conj().T)


def superoperator(terms: Iterable[Term], dim: int) -> np.ndarray:
    """
    Sum of coefficient * A rho B terms as a dim^2 x dim^2 matrix.

    Terms with an identity factor are collected before the Kronecker
    products so large generators only allocate a handful of dense blocks.
    """
    left_sum = np.zeros((dim, dim), dtype=DTYPE)
    right_sum = np.zeros((dim, dim), dtype=DTYPE)
    sandwiches: List[Term] = []
    for coeff, a, b in terms:
        if b is None:
            left_sum += coeff * a
        elif a is None:
            right_sum += coeff * b
        else:
            sandwiches.append((coeff, a, b))

    eye = np.eye(dim, dtype=DTYPE)
    out = np.kron(left_sum, eye)
    out += np.kron(eye, right_sum.T)
    view = out.reshape(dim, dim, dim, dim)  # (a, c, b, d) for kron(A, B^T)[(a,c),(b,d)]
    for coeff, a, b in sandwiches:
        view += coeff * np.einsum("ab,cd->acbd", a, b.T)
    return out


def _site_major_axes(n_sites: int) -> List[int]:
    axes = []
    for s in range(n_sites):
        axes += [s, n_sites + s]
    return axes


def _row_major_axes(n_sites: int) -> List[int]:
    return [2 * s for s in range(n_sites)] + [2 * s + 1 for s in range(n_sites)]


def vec_to_site_major(v: np.ndarray, n_sites: int, d: int) -> np.ndarray:
    t = np.reshape(v, (d,) * (2 * n_sites))
    return as_dense(np.transpose(t, _site_major_axes(n_sites)).reshape(-1))


def vec_to_row_major(v: np.ndarray, n_sites: int, d: int) -> np.ndarray:
    t = np.reshape(v, (d,) * (2 * n_sites))
    return as_dense(np.transpose(t, _row_major_axes(n_sites)).reshape(-1))


def superop_to_site_major(s: np.ndarray, n_sites: int, d: int) -> np.ndarray:
    """Re-index a row-major superoperator so it acts on site-major superkets."""
    axes = _site_major_axes(n_sites)
    m = 2 * n_sites
    t = np.reshape(s, (d,) * (2 * m))
    t = np.transpose(t, axes + [m + a for a in axes])
    return as_dense(t.reshape(s.shape))


def superop_to_row_major(s: np.ndarray, n_sites: int, d: int) -> np.ndarray:
    axes = _row_major_axes(n_sites)
    m = 2 * n_sites
    t = np.reshape(s, (d,) * (2 * m))
    t = np.transpose(t, axes + [m + a for a in axes])
    return as_dense(t.reshape(s.shape))


def local_functional(op: np.ndarray) -> np.ndarray:
    """Row vector f with f . vec(rho) = Tr(rho O) for a single site."""
    return as_dense(op.T.reshape(-1))


def trace_vector(d: int) -> np.ndarray:
    """vec of the d x d identity: contracting it with vec(M) gives Tr M."""
    return local_functional(np.eye(d, dtype=DTYPE))
