# ============================================
# LLTEBD: Discretized Open Bose-Hubbard Model
# ============================================

import logging
import math
from dataclasses import dataclass, asdict
from typing import List

import numpy as np

from src.model.superoperators import Term, superoperator
from src.tensor.tensor_core import DTYPE
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

# U/J above this is where the lattice stops approximating the continuum
LATTICE_ARTEFACT_RATIO = 1.0


@dataclass(frozen=True)
class PhysicalParams:
    """
    Continuum parameters of the lossy Lieb-Liniger gas.

    g_real / g_imag are the real and imaginary parts of the complex
    contact coupling (coupling x length). g_imag <= 0 describes loss.
    """

    mass: float
    g_real: float
    g_imag: float
    box_length: float
    mean_n0: float
    diffusion: float = 0.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.hbar <= 0:
            raise ConfigError("hbar must be > 0")
        if self.mass <= 0:
            raise ConfigError("mass must be > 0")
        if self.box_length <= 0:
            raise ConfigError("box_length must be > 0")
        if self.mean_n0 <= 0:
            raise ConfigError("mean_n0 must be > 0")
        if self.g_imag > 0:
            raise ConfigError("g_imag must be <= 0 (loss, not gain)")
        if self.diffusion < 0:
            raise ConfigError("diffusion must be >= 0")

    @property
    def density(self) -> float:
        return self.mean_n0 / self.box_length

    @property
    def g_abs(self) -> float:
        return math.hypot(self.g_real, self.g_imag)

    @staticmethod
    def default_diffusion(hbar: float, mass: float) -> float:
        """D = |hbar/m| / 10, small against the kinetic timescale."""
        return abs(hbar / mass) / 10.0


@dataclass(frozen=True)
class LatticeModel:
    n_sites: int
    fock_cutoff: int
    delta_z: float
    J: float
    U: float
    gamma1: float
    gamma2: float
    hbar: float = 1.0

    def __post_init__(self):
        if self.n_sites < 2:
            raise ConfigError("n_sites must be >= 2")
        if self.fock_cutoff < 1:
            raise ConfigError("fock_cutoff must be >= 1")
        if self.delta_z <= 0:
            raise ConfigError("delta_z must be > 0")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ConfigError("gamma1 and gamma2 must be >= 0")

    @property
    def local_dim(self) -> int:
        return self.fock_cutoff + 1

    @property
    def n_bonds(self) -> int:
        return self.n_sites - 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LocalOps:
    annihilate: np.ndarray
    create: np.ndarray
    number: np.ndarray
    pair_loss: np.ndarray
    pair_density: np.ndarray

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.annihilate.shape[0], dtype=DTYPE)


@dataclass(frozen=True)
class DimensionlessGroup:
    lieb_liniger_g: float
    t_loc: float
    tau_c: float


def build_lattice(p: PhysicalParams, n_sites: int, fock_cutoff: int) -> LatticeModel:
    """
    Lattice couplings of the discretized master equation:

    J = hbar^2 / (2 m dz^2), U = Re(g) / dz,
    gamma1 = D / dz^2,       gamma2 = -Im(g) / (hbar dz).
    """
    if n_sites < 2 or fock_cutoff < 1:
        raise ConfigError("n_sites must be >= 2 and fock_cutoff >= 1")
    dz = p.box_length / n_sites
    model = LatticeModel(
        n_sites=n_sites,
        fock_cutoff=fock_cutoff,
        delta_z=dz,
        J=p.hbar ** 2 / (2.0 * p.mass * dz ** 2),
        U=p.g_real / dz,
        gamma1=p.diffusion / dz ** 2,
        gamma2=-p.g_imag / (p.hbar * dz),
        hbar=p.hbar,
    )
    if model.J > 0 and abs(model.U) / model.J > LATTICE_ARTEFACT_RATIO:
        logger.warning(
            "U/J = %.3g is not small: expect lattice artefacts in the repulsive dynamics",
            abs(model.U) / model.J,
        )
    return model


def build_local_ops(fock_cutoff: int) -> LocalOps:
    if fock_cutoff < 1:
        raise ConfigError("fock_cutoff must be >= 1")
    d = fock_cutoff + 1
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(DTYPE)
    ad = a.conj().T.copy()
    return LocalOps(
        annihilate=a,
        create=ad,
        number=ad @ a,
        pair_loss=a @ a,
        pair_density=ad @ ad @ a @ a,
    )


def dimensionless_groups(p: PhysicalParams, n_sites: int) -> DimensionlessGroup:
    """
    |G| = m |g| / (hbar^2 rho), T_loc = hbar / (|g| rho) and
    tau_c = 2 hbar / sqrt(U^2 + (hbar gamma2)^2) on a grid of `n_sites`.
    """
    g_abs = p.g_abs
    if g_abs == 0.0:
        raise ConfigError("zero coupling: T_loc is undefined")
    rho = p.density
    dz = p.box_length / n_sites
    u = p.g_real / dz
    hg2 = -p.g_imag / dz
    return DimensionlessGroup(
        lieb_liniger_g=p.mass * g_abs / (p.hbar ** 2 * rho),
        t_loc=p.hbar / (g_abs * rho),
        tau_c=2.0 * p.hbar / math.hypot(u, hg2),
    )


def coupling_from_g(lieb_liniger_g: float, mass: float, density: float, hbar: float = 1.0) -> float:
    """|g| that realises a given |G| at density rho."""
    return lieb_liniger_g * hbar ** 2 * density / mass


# -------------------------------------------------
# BOND GENERATORS
# -------------------------------------------------
def _onsite_weights(n_sites: int, bond: int):
    """Interior sites share their on-site terms half/half between bonds."""
    w_left = 1.0 if bond == 0 else 0.5
    w_right = 1.0 if bond == n_sites - 2 else 0.5
    return w_left, w_right


def bond_terms(m: LatticeModel, bond: int) -> List[Term]:
    """
    coefficient * A rho B terms of the generator of one bond on the
    two-site Hilbert space (left site is the slower Kronecker index).
    """
    ops = build_local_ops(m.fock_cutoff)
    eye = ops.identity
    a_l, a_r = np.kron(ops.annihilate, eye), np.kron(eye, ops.annihilate)
    ad_l, ad_r = a_l.conj().T, a_r.conj().T
    w_l, w_r = _onsite_weights(m.n_sites, bond)

    ih = 1j / m.hbar
    terms: List[Term] = []

    # Hamiltonian: on-site 2J n + U/2 a†²a², plus hopping on the bond
    h = np.zeros_like(a_l)
    for w, a, ad in ((w_l, a_l, ad_l), (w_r, a_r, ad_r)):
        h = h + w * (2.0 * m.J * (ad @ a) + 0.5 * m.U * (ad @ ad @ a @ a))
    h = h - m.J * (a_l @ ad_r + a_r @ ad_l)
    terms += [(-ih, h, None), (ih, None, h)]

    # on-site diffusion part and two-particle loss
    for w, a, ad in ((w_l, a_l, ad_l), (w_r, a_r, ad_r)):
        n = ad @ a
        pd = ad @ ad @ a @ a
        terms += [
            (-w * m.gamma1, n, None),
            (-w * m.gamma1, None, n),
            (2.0 * w * m.gamma1, a, ad),
            (-0.5 * w * m.gamma2, pd, None),
            (-0.5 * w * m.gamma2, None, pd),
            (w * m.gamma2, a @ a, ad @ ad),
        ]

    # nearest-neighbour diffusion lines
    g = 0.5 * m.gamma1
    hop_a = ad_l @ a_r
    hop_b = a_l @ ad_r
    terms += [
        (g, hop_a, None), (g, None, hop_a), (-2.0 * g, a_r, ad_l),
        (g, hop_b, None), (g, None, hop_b), (-2.0 * g, a_l, ad_r),
    ]
    return terms


def bond_liouvillians(m: LatticeModel) -> List[np.ndarray]:
    """
    Per-bond generators acting on the row-major vectorized two-site
    density matrix. Their embedded sum is the full Liouvillian.
    """
    dim = m.local_dim ** 2
    return [superoperator(bond_terms(m, b), dim) for b in range(m.n_bonds)]
