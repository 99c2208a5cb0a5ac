# src/oracle/dense.py
"""
Brute-force reference for tiny chains: the full Liouvillian assembled
term by term from the lattice master equation (no bond splitting) and
propagated exactly.
"""
import logging
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.sparse.linalg import expm_multiply

from src.model.lattice import LatticeModel, build_local_ops
from src.model.superoperators import Term, superop_to_row_major, superop_to_site_major, superoperator
from src.tensor.tensor_core import DTYPE, as_dense, kron_all
from src.utils.errors import ConfigError, NumericalAbort

logger = logging.getLogger(__name__)

# superoperator dimension d^(2 N): 3 sites at d = 4 or 4 sites at d = 3
MAX_DENSE_DIMENSION = 6561
PROPAGATION_TOLERANCE = 1e-10


@dataclass(frozen=True)
class DenseLiouvillian:
    dimension: int
    matrix: np.ndarray
    n_sites: int
    local_dim: int

    @property
    def hilbert_dim(self) -> int:
        return self.local_dim ** self.n_sites


def site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    eye = np.eye(op.shape[0], dtype=DTYPE)
    return kron_all([op if s == site else eye for s in range(n_sites)])


def liouvillian_terms(model: LatticeModel) -> List[Term]:
    """
    -(i/hbar)[H1 + H2, rho] + L1 rho + L2 rho, written out as the lattice
    sums: H1 = 2J sum n_l - J sum (a_l a†_{l+1} + a_{l+1} a†_l),
    H2 = U/2 sum a†²a², L1 with its on-site and two nearest-neighbour
    lines, L2 the two-particle loss.
    """
    n, hbar = model.n_sites, model.hbar
    ops = build_local_ops(model.fock_cutoff)
    a = [site_operator(ops.annihilate, l, n) for l in range(n)]
    ad = [x.conj().T for x in a]

    h = sum(2.0 * model.J * ad[l] @ a[l] + 0.5 * model.U * ad[l] @ ad[l] @ a[l] @ a[l]
            for l in range(n))
    h = h - model.J * sum(a[l] @ ad[l + 1] + a[l + 1] @ ad[l] for l in range(n - 1))
    terms: List[Term] = [(-1j / hbar, h, None), (1j / hbar, None, h)]

    g1, g2 = model.gamma1, model.gamma2
    for l in range(n):
        nl = ad[l] @ a[l]
        pd = ad[l] @ ad[l] @ a[l] @ a[l]
        terms += [(-g1, nl, None), (-g1, None, nl), (2.0 * g1, a[l], ad[l])]
        terms += [(-0.5 * g2, pd, None), (-0.5 * g2, None, pd), (g2, a[l] @ a[l], ad[l] @ ad[l])]
    for l in range(n - 1):
        x = ad[l] @ a[l + 1]
        terms += [(0.5 * g1, x, None), (0.5 * g1, None, x), (-g1, a[l + 1], ad[l])]
        y = a[l] @ ad[l + 1]
        terms += [(0.5 * g1, y, None), (0.5 * g1, None, y), (-g1, a[l], ad[l + 1])]
    return terms


def assemble_dense(model: LatticeModel) -> DenseLiouvillian:
    d = model.local_dim
    dimension = d ** (2 * model.n_sites)
    if dimension > MAX_DENSE_DIMENSION:
        raise ConfigError(
            f"dense Liouvillian of dimension {dimension} exceeds {MAX_DENSE_DIMENSION}"
        )
    matrix = superoperator(liouvillian_terms(model), d ** model.n_sites)
    return DenseLiouvillian(dimension, matrix, model.n_sites, d)


def propagate_dense(L: DenseLiouvillian, rho0: np.ndarray, t: float) -> np.ndarray:
    """exp(L t) vec(rho0), reshaped back to a density matrix."""
    if t < 0:
        raise ValueError("t must be >= 0")
    dim = L.hilbert_dim
    if rho0.shape != (dim, dim):
        raise ValueError(f"rho0 shape {rho0.shape} does not match ({dim}, {dim})")
    vec = as_dense(rho0).reshape(-1)
    if t > 0:
        vec = expm_multiply(L.matrix * t, vec)
    rho = vec.reshape(dim, dim)
    drift = abs(np.trace(rho) - np.trace(rho0))
    if drift > PROPAGATION_TOLERANCE * max(1.0, abs(np.trace(rho0))):
        raise NumericalAbort(f"dense propagation lost trace by {drift:.2e}")
    return rho


def embed_bond(generator: np.ndarray, bond: int, n_sites: int, d: int) -> np.ndarray:
    """
    Row-major bond generator embedded on the full chain (identity on
    every other site), in row-major full-chain ordering.
    """
    g_site = superop_to_site_major(generator, 2, d)
    eye = np.eye(d * d, dtype=DTYPE)
    factors = [eye] * bond + [g_site] + [eye] * (n_sites - bond - 2)
    return superop_to_row_major(kron_all(factors), n_sites, d)


def expectation(rho: np.ndarray, op: np.ndarray) -> complex:
    return complex(np.trace(rho @ op) / np.trace(rho))


def g2_dense(rho: np.ndarray, site_a: int, site_b: int, n_sites: int, fock_cutoff: int) -> float:
    ops = build_local_ops(fock_cutoff)
    n_a = expectation(rho, site_operator(ops.number, site_a, n_sites)).real
    n_b = expectation(rho, site_operator(ops.number, site_b, n_sites)).real
    if site_a == site_b:
        num = expectation(rho, site_operator(ops.pair_density, site_a, n_sites)).real
    else:
        num = expectation(rho, site_operator(ops.number, site_a, n_sites)
                          @ site_operator(ops.number, site_b, n_sites)).real
    return num / (n_a * n_b)
