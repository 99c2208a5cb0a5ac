# ======================================
# LLTEBD: Density and g2 Observables
# ======================================

import logging
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np
import pandas as pd

from src.model.lattice import LatticeModel, build_local_ops
from src.mps.superket import SuperketMPS

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-8
REALITY_TOLERANCE = 1e-8
NEGATIVITY_TOLERANCE = 1e-8
G2_NEGATIVITY_TOLERANCE = 1e-6
UNDEFINED = float("nan")


@dataclass
class ObservableRecord:
    time: float
    time_tau: float
    density: np.ndarray
    g2_local: np.ndarray
    g2_row: np.ndarray
    total_n: float
    trace: float
    cumulative_discard: float
    max_bond: int
    reference_site: int
    retained_fraction: float = 1.0
    coherence_left: complex = 0j
    coherence_right: complex = 0j

    @property
    def n_ref(self) -> float:
        return float(self.density[self.reference_site])

    @property
    def g2_ref(self) -> float:
        return float(self.g2_local[self.reference_site])


@dataclass
class ObservableSeries:
    records: List[ObservableRecord] = field(default_factory=list)
    config_hash: str = ""
    model: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def append(self, rec: ObservableRecord):
        if self.records and rec.time <= self.records[-1].time:
            raise ValueError(f"record at t={rec.time} does not follow t={self.records[-1].time}")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])

    @property
    def times_tau(self) -> np.ndarray:
        return np.array([r.time_tau for r in self.records])

    def site_series(self, name: str, site: int) -> np.ndarray:
        return np.array([getattr(r, name)[site] for r in self.records])

    def to_frame(self) -> pd.DataFrame:
        """Scalar diagnostics and reference-site observables, one row per record."""
        rows = []
        for r in self.records:
            rows.append({
                "t": r.time,
                "t_tau": r.time_tau,
                "n_ref": r.n_ref,
                "g2_ref": r.g2_ref,
                "total_n": r.total_n,
                "retained_fraction": r.retained_fraction,
                "trace": r.trace,
                "cumulative_discard": r.cumulative_discard,
                "max_bond": r.max_bond,
            })
        return pd.DataFrame(rows)

    def row_frame(self, name: str = "g2_row") -> pd.DataFrame:
        """Long table (t_tau, site, value) of a per-site observable."""
        rows = []
        for r in self.records:
            for site, val in enumerate(getattr(r, name)):
                rows.append({"t_tau": r.time_tau, "site": site, name: float(val)})
        return pd.DataFrame(rows)

    def to_payload(self) -> dict:
        return {
            "records": [asdict(r) for r in self.records],
            "config_hash": self.config_hash,
            "model": self.model,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ObservableSeries":
        series = cls(config_hash=payload["config_hash"], model=payload["model"],
                     diagnostics=payload.get("diagnostics", {}))
        series.records = [ObservableRecord(**r) for r in payload["records"]]
        return series


# -------------------------------------------------
# g2 FUNCTIONS
# -------------------------------------------------
def g2_local(state: SuperketMPS, site: int, density_floor: float = DENSITY_FLOOR) -> float:
    """<a†² a²> / <n>² on one site; nan below the density floor."""
    ops = build_local_ops(state.local_dim - 1)
    n = state.local_expectation(site, ops.number).real
    if n <= density_floor:
        return UNDEFINED
    return state.local_expectation(site, ops.pair_density).real / n ** 2


def g2_nonlocal(state: SuperketMPS, site_a: int, site_b: int,
                density_floor: float = DENSITY_FLOOR) -> float:
    """<n_A n_B> / (<n_A> <n_B>) for distinct sites; nan below the density floor."""
    if site_a == site_b:
        raise ValueError("g2_nonlocal needs distinct sites, use g2_local")
    ops = build_local_ops(state.local_dim - 1)
    n_a = state.local_expectation(site_a, ops.number).real
    n_b = state.local_expectation(site_b, ops.number).real
    if n_a <= density_floor or n_b <= density_floor:
        return UNDEFINED
    nn = state.two_site_expectation(site_a, ops.number, site_b, ops.number).real
    return nn / (n_a * n_b)


def _masked_ratio(num: np.ndarray, den: np.ndarray, ok: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, UNDEFINED)
    out[ok] = num[ok] / den[ok]
    return out


class ObservableRecorder:
    """
    Measures one ObservableRecord per call on a state snapshot.
    Keeps the first total particle number for the retained fraction.
    """

    def __init__(self, model: LatticeModel, reference_site: Optional[int] = None,
                 tau_c: float = 1.0, density_floor: float = DENSITY_FLOOR):
        self.model = model
        self.ops = build_local_ops(model.fock_cutoff)
        self.reference_site = model.n_sites // 2 if reference_site is None else reference_site
        if not 0 <= self.reference_site < model.n_sites:
            raise ValueError(f"reference site {self.reference_site} outside the chain")
        self.tau_c = tau_c
        self.density_floor = density_floor
        self.initial_n: Optional[float] = None

    def _real(self, vals: np.ndarray, name: str) -> np.ndarray:
        imag = float(np.nanmax(np.abs(vals.imag))) if vals.size else 0.0
        if imag > REALITY_TOLERANCE:
            logger.warning("%s has imaginary part %.2e", name, imag)
        return vals.real.copy()

    def __call__(self, state: SuperketMPS, time: float) -> ObservableRecord:
        ops, ref = self.ops, self.reference_site
        density = self._real(state.expectation_profile(ops.number), "density")
        pair = self._real(state.expectation_profile(ops.pair_density), "pair density")
        if density.min() < -NEGATIVITY_TOLERANCE:
            logger.warning("negative density %.2e at t=%g (convergence failure?)",
                           density.min(), time)

        ok = density > self.density_floor
        g2_loc = _masked_ratio(pair, density ** 2, ok)
        if np.any(g2_loc < -G2_NEGATIVITY_TOLERANCE):
            logger.warning("negative local g2 %.2e at t=%g (convergence failure?)",
                           np.nanmin(g2_loc), time)

        nn = self._real(state.correlation_row(ref, ops.number, ops.number), "<n n>")
        g2_row = _masked_ratio(nn, density[ref] * density, ok & ok[ref])
        g2_row[ref] = g2_loc[ref]

        coh_left = coh_right = 0j
        if ref > 0:
            coh_left = state.two_site_expectation(ref - 1, ops.create, ref, ops.annihilate)
        if ref < self.model.n_sites - 1:
            coh_right = state.two_site_expectation(ref, ops.create, ref + 1, ops.annihilate)

        total_n = float(np.sum(density))
        if self.initial_n is None:
            self.initial_n = total_n
        retained = total_n / self.initial_n if self.initial_n > 0 else UNDEFINED

        return ObservableRecord(
            time=time,
            time_tau=time / self.tau_c,
            density=density,
            g2_local=g2_loc,
            g2_row=g2_row,
            total_n=total_n,
            trace=float(np.real(state.last_trace)),
            cumulative_discard=state.cumulative_discard,
            max_bond=state.max_bond,
            reference_site=ref,
            retained_fraction=retained,
            coherence_left=complex(coh_left),
            coherence_right=complex(coh_right),
        )
