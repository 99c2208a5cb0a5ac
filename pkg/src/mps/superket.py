# ============================================
# LLTEBD: Matrix-Product Superket
# ============================================

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.stats import poisson

from src.model.lattice import LatticeModel
from src.model.superoperators import local_functional, trace_vector, vec_to_row_major
from src.tensor.tensor_core import DTYPE, as_dense, as_matrix, contract, svd_truncate
from src.utils.errors import ConfigError, NumericalAbort

logger = logging.getLogger(__name__)

# Truncated coherent states losing more than this to the Fock cutoff are rejected
MAX_CUTOFF_LOSS = 1e-3
GAUGE_TOLERANCE = 1e-8
ZERO_TRACE = 1e-300


class SuperketMPS:
    """
    Vectorized density operator as a matrix product of rank-3 tensors
    (left bond, d^2, right bond), site-major physical index (i_l j_l).

    The state is the plain product tensors[0] ... tensors[N-1]. weights[i]
    holds the normalized Schmidt weights of the bond left of site i
    (weights[0] = weights[N] = [1]); they steer truncation but never enter
    an expectation value, so observables are gauge invariant.
    """

    def __init__(self, tensors: List[np.ndarray], weights: List[np.ndarray],
                 local_dim: int, chi_max: int, eps_cut: float = 1e-12):
        if len(weights) != len(tensors) + 1:
            raise ValueError("need one weight vector per bond including both boundaries")
        if tensors[0].shape[0] != 1 or tensors[-1].shape[2] != 1:
            raise ValueError("boundary bonds must have dimension 1")
        for t in tensors:
            if t.ndim != 3 or t.shape[1] != local_dim ** 2:
                raise ValueError(f"site tensor shape {t.shape} does not carry d^2 = {local_dim ** 2}")
        if chi_max < 1:
            raise ValueError("chi_max must be >= 1")
        self.tensors = [as_dense(t) for t in tensors]
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.local_dim = local_dim
        self.chi_max = chi_max
        self.eps_cut = eps_cut
        self.cumulative_discard = 0.0
        self.cutoff_deficit = 0.0
        self.last_trace = 1.0 + 0.0j
        self._trace_vec = trace_vector(local_dim)

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> List[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    def copy(self) -> "SuperketMPS":
        return copy.deepcopy(self)

    # -------------------------------------------------
    # CONSTRUCTION
    # -------------------------------------------------
    @classmethod
    def product_state(cls, local_rhos: Sequence[np.ndarray], chi_max: int,
                      eps_cut: float = 1e-12) -> "SuperketMPS":
        """Product of arbitrary local density matrices, all bonds of dimension 1."""
        d = local_rhos[0].shape[0]
        tensors = [as_dense(r).reshape(1, d * d, 1) for r in local_rhos]
        weights = [np.ones(1) for _ in range(len(tensors) + 1)]
        return cls(tensors, weights, d, chi_max, eps_cut)

    def to_dense(self) -> np.ndarray:
        """Full density matrix (row-major indices). Small chains only."""
        psi = self.tensors[0]
        for t in self.tensors[1:]:
            psi = contract(psi, t, [(psi.ndim - 1, 0)])
        vec = vec_to_row_major(psi.reshape(-1), self.n_sites, self.local_dim)
        dim = self.local_dim ** self.n_sites
        return vec.reshape(dim, dim)

    # -------------------------------------------------
    # TRACE ENVIRONMENTS
    # -------------------------------------------------
    def _site_transfer(self, site: int, functional: np.ndarray) -> np.ndarray:
        """(left, right) matrix of a site tensor contracted with a local functional."""
        return contract(self.tensors[site], functional, [(1, 0)])

    def _left_envs(self) -> List[np.ndarray]:
        """envs[i] = trace of sites < i, a row vector over the bond left of i."""
        envs = [np.ones(1, dtype=DTYPE)]
        for i in range(self.n_sites):
            envs.append(envs[-1] @ self._site_transfer(i, self._trace_vec))
        return envs

    def _right_envs(self) -> List[np.ndarray]:
        """envs[i] = trace of sites >= i, a column vector over the bond left of i."""
        envs = [np.ones(1, dtype=DTYPE)]
        for i in reversed(range(self.n_sites)):
            envs.append(self._site_transfer(i, self._trace_vec) @ envs[-1])
        return envs[::-1]

    def trace(self) -> complex:
        env = np.ones(1, dtype=DTYPE)
        for i in range(self.n_sites):
            env = env @ self._site_transfer(i, self._trace_vec)
        return complex(env[0])

    def _checked_trace(self) -> complex:
        tr = self.trace()
        if abs(tr) < ZERO_TRACE:
            raise NumericalAbort("trace of the density operator vanished")
        return tr

    # -------------------------------------------------
    # EXPECTATION VALUES
    # -------------------------------------------------
    def local_expectation(self, site: int, op: np.ndarray) -> complex:
        """Tr(rho O_site) / Tr(rho)."""
        self._check_site(site)
        tr = self._checked_trace()
        left, right = self._left_envs(), self._right_envs()
        val = left[site] @ self._site_transfer(site, local_functional(op)) @ right[site + 1]
        return complex(val) / tr

    def expectation_profile(self, op: np.ndarray) -> np.ndarray:
        """Tr(rho O_l) / Tr(rho) for every site l in one pair of sweeps."""
        left, right = self._left_envs(), self._right_envs()
        tr = left[-1][0]
        if abs(tr) < ZERO_TRACE:
            raise NumericalAbort("trace of the density operator vanished")
        f = local_functional(op)
        vals = [left[i] @ self._site_transfer(i, f) @ right[i + 1] for i in range(self.n_sites)]
        return np.array(vals, dtype=DTYPE) / tr

    def two_site_expectation(self, site_a: int, op_a: np.ndarray,
                             site_b: int, op_b: np.ndarray) -> complex:
        """Tr(rho O_A O_B) / Tr(rho) for distinct sites."""
        self._check_site(site_a)
        self._check_site(site_b)
        if site_a == site_b:
            raise ValueError("two_site_expectation needs distinct sites")
        if site_a > site_b:
            site_a, op_a, site_b, op_b = site_b, op_b, site_a, op_a
        tr = self._checked_trace()
        left, right = self._left_envs(), self._right_envs()
        env = left[site_a] @ self._site_transfer(site_a, local_functional(op_a))
        for i in range(site_a + 1, site_b):
            env = env @ self._site_transfer(i, self._trace_vec)
        env = env @ self._site_transfer(site_b, local_functional(op_b))
        return complex(env @ right[site_b + 1]) / tr

    def correlation_row(self, ref: int, op_ref: np.ndarray, op: np.ndarray) -> np.ndarray:
        """
        Tr(rho O_ref O'_m) / Tr(rho) for all m != ref in O(N) transfers.
        The entry at m = ref is left as nan.
        """
        self._check_site(ref)
        left, right = self._left_envs(), self._right_envs()
        tr = left[-1][0]
        if abs(tr) < ZERO_TRACE:
            raise NumericalAbort("trace of the density operator vanished")
        f_ref, f = local_functional(op_ref), local_functional(op)
        out = np.full(self.n_sites, np.nan, dtype=DTYPE)

        # sites right of ref
        env = left[ref] @ self._site_transfer(ref, f_ref)
        for m in range(ref + 1, self.n_sites):
            out[m] = env @ self._site_transfer(m, f) @ right[m + 1]
            env = env @ self._site_transfer(m, self._trace_vec)

        # sites left of ref
        env = self._site_transfer(ref, f_ref) @ right[ref + 1]
        for m in range(ref - 1, -1, -1):
            out[m] = left[m] @ self._site_transfer(m, f) @ env
            env = self._site_transfer(m, self._trace_vec) @ env
        return out / tr

    def norm_squared(self) -> float:
        """<<rho|rho>> = Tr(rho† rho) by doubled contraction."""
        env = np.ones((1, 1), dtype=DTYPE)
        for t in self.tensors:
            # env[a, a'] t[a, p, b] conj(t)[a', p, b']
            tmp = contract(env, t, [(0, 0)])
            env = contract(tmp, t.conj(), [(0, 0), (1, 1)])
        return float(env[0, 0].real)

    def purity(self) -> float:
        tr = self._checked_trace()
        return self.norm_squared() / abs(tr) ** 2

    def _check_site(self, site: int):
        if not 0 <= site < self.n_sites:
            raise IndexError(f"site {site} outside [0, {self.n_sites})")

    # -------------------------------------------------
    # GATES AND TRUNCATION
    # -------------------------------------------------
    def bond_update(self, bond: int, gate: np.ndarray):
        """
        Gate applied to the two-site tensor of `bond`, re-split by truncated
        SVD. Pure: returns (left tensor, right tensor, weights, discarded
        weight) without touching the state.
        """
        i, j = bond, bond + 1
        d2 = self.local_dim ** 2
        b_i, b_j = self.tensors[i], self.tensors[j]
        c = contract(b_i, b_j, [(2, 0)])                                # (l, p, q, r)
        g = gate.reshape(d2, d2, d2, d2)                                # (p', q', p, q)
        c = np.transpose(contract(g, c, [(2, 1), (3, 2)]), (2, 0, 1, 3))  # (l, p', q', r)
        theta = self.weights[i][:, None, None, None] * c
        chi_l, chi_r = c.shape[0], c.shape[3]

        svd = svd_truncate(as_matrix(theta, 2), self.chi_max, self.eps_cut)
        z = svd.V.reshape(svd.rank, d2, chi_r)
        new_i = contract(c, z.conj(), [(2, 1), (3, 2)])                 # (l, p', k)
        norm = np.linalg.norm(svd.S)
        s = svd.S / norm if norm > 0 else svd.S
        return as_dense(new_i.reshape(chi_l, d2, svd.rank)), as_dense(z), s, svd.discarded_weight

    def _commit(self, bond: int, update) -> float:
        new_i, new_j, s, discarded = update
        self.tensors[bond], self.tensors[bond + 1] = new_i, new_j
        self.weights[bond + 1] = s
        self.cumulative_discard += discarded
        return discarded

    def apply_bond_gate(self, bond: int, gate: np.ndarray) -> float:
        if not 0 <= bond <= self.n_sites - 2:
            raise IndexError(f"bond {bond} outside [0, {self.n_sites - 2}]")
        d4 = self.local_dim ** 4
        if gate.shape != (d4, d4):
            raise ValueError(f"gate shape {gate.shape} does not match ({d4}, {d4})")
        return self._commit(bond, self.bond_update(bond, gate))

    def apply_layer(self, gates: dict, threads: int = 1) -> float:
        """
        Gates on disjoint bonds (one sublattice). With threads > 1 the
        updates run concurrently and are committed in bond order, which
        gives the same floating-point result as the sequential sweep.
        """
        bonds = sorted(gates)
        if threads > 1 and len(bonds) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                updates = list(pool.map(lambda b: self.bond_update(b, gates[b]), bonds))
        else:
            updates = [self.bond_update(b, gates[b]) for b in bonds]
        return sum(self._commit(b, u) for b, u in zip(bonds, updates))

    def canonicalize(self, truncate: bool = True) -> float:
        """
        QR sweep left to right, SVD sweep right to left: right-canonical
        tensors, superket Schmidt weights on every bond, norm carried by the
        first tensor. Returns the discarded weight of the SVD sweep.
        """
        n = self.n_sites
        d2 = self.local_dim ** 2
        for i in range(n - 1):
            t = self.tensors[i]
            q, r = scipy.linalg.qr(as_matrix(t, 2), mode="economic")
            self.tensors[i] = as_dense(q.reshape(t.shape[0], d2, q.shape[1]))
            self.tensors[i + 1] = as_dense(contract(r, self.tensors[i + 1], [(1, 0)]))

        chi = self.chi_max if truncate else 10 ** 9
        eps = self.eps_cut if truncate else 0.0
        discarded = 0.0
        for i in range(n - 1, 0, -1):
            t = self.tensors[i]
            svd = svd_truncate(as_matrix(t, 1), chi, eps)
            discarded += svd.discarded_weight
            self.tensors[i] = as_dense(svd.V.reshape(svd.rank, d2, t.shape[2]))
            us = svd.U * svd.S[None, :]
            self.tensors[i - 1] = as_dense(contract(self.tensors[i - 1], us, [(2, 0)]))
            norm = np.linalg.norm(svd.S)
            self.weights[i] = svd.S / norm if norm > 0 else svd.S
        self.cumulative_discard += discarded
        return discarded

    def gauge_error(self) -> float:
        """
        Consistency of tensors and weights after canonicalize(): right
        isometries, and S_i B_i reproducing S_{i+1}^2 on the next bond.
        """
        err = 0.0
        norm2 = self.norm_squared()
        for i, t in enumerate(self.tensors):
            if i > 0:
                m = as_matrix(t, 1)
                err = max(err, float(np.max(np.abs(m @ m.conj().T - np.eye(m.shape[0])))))
            st = self.weights[i][:, None, None] * t
            if i == 0:
                st = st / np.sqrt(norm2) if norm2 > 0 else st
            m = as_matrix(st, 2)
            rho_r = m.T @ m.conj()
            target = np.diag(self.weights[i + 1] ** 2)
            err = max(err, float(np.max(np.abs(rho_r - target))))
        return err

    def scale(self, factor: complex):
        self.tensors[0] = self.tensors[0] * factor

    def renormalize(self) -> complex:
        """Scale to unit trace; returns the factor applied."""
        tr = self.trace()
        if abs(tr) < ZERO_TRACE:
            raise NumericalAbort("cannot renormalize: trace collapsed to zero")
        factor = 1.0 / tr
        self.scale(factor)
        if abs(factor - 1.0) > 1e-3:
            logger.warning("large renormalization factor %s", factor)
        else:
            logger.debug("renormalization factor %s", factor)
        return factor


# -------------------------------------------------
# INITIAL STATES
# -------------------------------------------------
def truncated_coherent(c: complex, fock_cutoff: int) -> Tuple[np.ndarray, float]:
    """
    Coherent amplitudes exp(-|c|^2/2) c^k / sqrt(k!) for k <= cutoff,
    renormalized; also returns the weight lost beyond the cutoff.
    """
    x = abs(c) ** 2
    if x == 0.0:
        psi = np.zeros(fock_cutoff + 1, dtype=DTYPE)
        psi[0] = 1.0
        return psi, 0.0
    k = np.arange(fock_cutoff + 1)
    log_fact = np.concatenate([[0.0], np.cumsum(np.log(k[1:]))])
    log_mag = -0.5 * x + k * np.log(abs(c)) - 0.5 * log_fact
    psi = np.exp(log_mag) * np.exp(1j * np.angle(c) * k)
    lost = float(poisson.sf(fock_cutoff, x))
    return as_dense(psi / np.linalg.norm(psi)), lost


def coherent_product_state(amplitudes: Sequence[complex], m: LatticeModel,
                           chi_max: int, eps_cut: float = 1e-12) -> SuperketMPS:
    """Uncorrelated coherent state on every site, truncated at the Fock cutoff."""
    if len(amplitudes) != m.n_sites:
        raise ConfigError(f"{len(amplitudes)} amplitudes for {m.n_sites} sites")
    rhos = []
    deficit = 0.0
    for l, c in enumerate(amplitudes):
        psi, lost = truncated_coherent(c, m.fock_cutoff)
        if lost > MAX_CUTOFF_LOSS:
            raise ConfigError(
                f"site {l}: |c|^2 = {abs(c) ** 2:.3g} loses {lost:.2e} beyond fock_cutoff "
                f"{m.fock_cutoff}; raise the cutoff or lower the occupancy"
            )
        rhos.append(np.outer(psi, psi.conj()))
        n_exact = float(np.sum(np.arange(m.fock_cutoff + 1) * np.abs(psi) ** 2))
        deficit += abs(c) ** 2 - n_exact
    state = SuperketMPS.product_state(rhos, chi_max, eps_cut)
    logger.info(
        "coherent product state: sum |c|^2 = %.6g, Fock-cutoff deficit %.3e",
        float(np.sum(np.abs(amplitudes) ** 2)), deficit,
    )
    state.cutoff_deficit = deficit
    return state


def fock_product_state(occupations: Sequence[int], m: LatticeModel,
                       chi_max: int, eps_cut: float = 1e-12) -> SuperketMPS:
    d = m.local_dim
    rhos = []
    for k in occupations:
        if not 0 <= k <= m.fock_cutoff:
            raise ConfigError(f"occupation {k} outside [0, {m.fock_cutoff}]")
        r = np.zeros((d, d), dtype=DTYPE)
        r[k, k] = 1.0
        rhos.append(r)
    return SuperketMPS.product_state(rhos, chi_max, eps_cut)
