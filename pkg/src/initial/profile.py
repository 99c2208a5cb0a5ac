# src/initial/profile.py
import logging
from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import poisson

from src.model.lattice import LatticeModel
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

PROFILE_KINDS = ("gaussian", "flat_top", "tabulated")
MAX_CUTOFF_LOSS = 1e-3


@dataclass
class PulseProfile:
    """
    Shape of the initial pulse. center / width / edge are fractions of the
    box; for flat_top, width is the plateau and edge the raised-cosine
    shoulder on each side. table holds (position fraction, relative
    density) rows for tabulated profiles.
    """

    kind: str = "flat_top"
    center: float = 0.5
    width: float = 0.6
    edge: float = 0.15
    table: Optional[List[List[float]]] = None
    phase_gradient: float = 0.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ConfigError(f"profile.kind must be one of {PROFILE_KINDS}, got {self.kind!r}")
        if self.width < 0 or self.edge < 0:
            raise ConfigError("profile.width and profile.edge must be >= 0")
        if self.kind == "gaussian" and self.width <= 0:
            raise ConfigError("gaussian profile needs width > 0")
        if self.kind == "tabulated" and not self.table:
            raise ConfigError("tabulated profile needs a table")

    def to_dict(self) -> dict:
        return asdict(self)


def load_profile_table(path: str) -> List[List[float]]:
    """Two numeric columns (position fraction, relative density); '#' comments allowed."""
    df = pd.read_csv(path, sep=r"[\s,]+", comment="#", header=None, engine="python")
    if df.shape[1] < 2:
        raise ConfigError(f"{path}: need two columns (position, density)")
    df = df.iloc[:, :2].astype(float).sort_values(0)
    return df.values.tolist()


def site_positions(n_sites: int) -> np.ndarray:
    """Cell centres as fractions of the box."""
    return (np.arange(n_sites) + 0.5) / n_sites


def _shape(profile: PulseProfile, x: np.ndarray) -> np.ndarray:
    if profile.kind == "gaussian":
        return np.exp(-0.5 * ((x - profile.center) / profile.width) ** 2)

    if profile.kind == "flat_top":
        dist = np.abs(x - profile.center) - 0.5 * profile.width
        out = np.where(dist <= 0, 1.0, 0.0)
        if profile.edge > 0:
            shoulder = (dist > 0) & (dist < profile.edge)
            out = np.where(shoulder, 0.5 * (1.0 + np.cos(np.pi * dist / profile.edge)), out)
        return out

    table = np.asarray(profile.table, dtype=float)
    return np.interp(x, table[:, 0], table[:, 1], left=0.0, right=0.0)


def build_profile(profile: PulseProfile, model: LatticeModel, mean_n0: float) -> np.ndarray:
    """
    Coherent amplitudes c_l with sum |c_l|^2 = mean_n0. Real and
    nonnegative unless the profile carries a phase gradient.
    """
    if mean_n0 <= 0:
        raise ConfigError("mean_n0 must be > 0")
    x = site_positions(model.n_sites)
    weights = np.clip(_shape(profile, x), 0.0, None)
    total = weights.sum()
    if total <= 0:
        raise ConfigError("profile has no weight on the grid")
    occupancy = mean_n0 * weights / total

    lost = poisson.sf(model.fock_cutoff, occupancy)
    worst = int(np.argmax(lost))
    if lost[worst] > MAX_CUTOFF_LOSS:
        raise ConfigError(
            f"occupancy {occupancy[worst]:.3g} at site {worst} loses {lost[worst]:.2e} beyond "
            f"fock_cutoff {model.fock_cutoff}; use more sites or a higher cutoff"
        )

    phases = np.exp(1j * profile.phase_gradient * np.arange(model.n_sites))
    amplitudes = np.sqrt(occupancy) * phases
    if profile.phase_gradient == 0.0:
        amplitudes = amplitudes.real
    logger.debug("profile %s: peak occupancy %.4g", profile.kind, occupancy.max())
    return amplitudes


def profile_occupancy(amplitudes: Sequence[complex]) -> np.ndarray:
    return np.abs(np.asarray(amplitudes)) ** 2
