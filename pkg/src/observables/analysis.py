# src/observables/analysis.py
"""
Post-processing of recorded series: the local density-decay check, the
equilibrium Tonks estimate and the trend measures used by the figure
presets (threshold times, dip widths, oscillation amplitudes, outward
propagation of minima, convergence order).
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from src.model.lattice import LatticeModel
from src.observables.measure import ObservableSeries, UNDEFINED

logger = logging.getLogger(__name__)

ODE_RTOL = 1e-10
ODE_ATOL = 1e-14
RATE_FLOOR = 1e-14


@dataclass
class DensityDecayReport:
    site: int
    times: np.ndarray
    times_tau: np.ndarray
    recorded: np.ndarray
    ode: np.ndarray
    reference: np.ndarray
    ode_deviation: np.ndarray
    reference_deviation: np.ndarray
    loss_rate: np.ndarray
    budget_rate: np.ndarray
    observed_rate: np.ndarray
    budget_residual: np.ndarray

    @property
    def max_ode_deviation(self) -> float:
        return float(np.nanmax(np.abs(self.ode_deviation)))

    def max_budget_residual(self, density_min: float = 0.1) -> float:
        """Largest rate-budget residual while the recorded density exceeds density_min."""
        mask = (self.recorded > density_min) & np.isfinite(self.budget_residual)
        return float(np.max(np.abs(self.budget_residual[mask]))) if mask.any() else UNDEFINED

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t_tau": self.times_tau,
            "n_ref": self.recorded,
            "n_ode": self.ode,
            "n_g2_one": self.reference,
            "ode_deviation": self.ode_deviation,
            "g2_one_deviation": self.reference_deviation,
            "budget_residual": self.budget_residual,
        })


def _g2_interpolant(times: np.ndarray, g2: np.ndarray):
    # linear between records keeps g2 >= 0; below the density floor the loss term is negligible
    g2 = np.nan_to_num(g2, nan=0.0)
    return lambda t: np.interp(t, times, g2)


def _rate_budget(series: ObservableSeries, model: LatticeModel, site: int):
    """
    d<n_l>/dt from the lattice master equation evaluated on the records:
    hopping flux, diffusion lines and on-site diffusion, two-particle loss.
    """
    n = series.site_series("density", site)
    g2 = np.nan_to_num(series.site_series("g2_local", site), nan=0.0)
    pair = g2 * n ** 2
    c_left = np.array([r.coherence_left for r in series.records])
    c_right = np.array([r.coherence_right for r in series.records])

    flux = (2.0 * model.J / model.hbar) * (c_left.imag - c_right.imag)
    diffusion = model.gamma1 * (c_left.real + c_right.real - 2.0 * n)
    loss = -2.0 * model.gamma2 * pair
    return loss, flux + diffusion + loss


def density_decay_check(series: ObservableSeries, model: LatticeModel,
                        site: Optional[int] = None) -> DensityDecayReport:
    """
    Integrates dn/dt = -2 gamma2 g2(t) n^2 from the recorded initial
    density with the recorded g2(t), next to the g2 = 1 reference curve
    n0 / (1 + 2 gamma2 n0 t). Also compares the finite-difference rate of
    the recorded density with the full rate budget of the site.
    """
    if len(series) < 3:
        raise ValueError(f"density decay check needs >= 3 records, got {len(series)}")
    site = series.records[0].reference_site if site is None else site
    if not 0 <= site < model.n_sites:
        raise IndexError(f"site {site} outside the chain")

    t = series.times
    n = series.site_series("density", site)
    n0 = n[0]
    g2_of_t = _g2_interpolant(t, series.site_series("g2_local", site))

    def rhs(time, y):
        return -2.0 * model.gamma2 * g2_of_t(time) * y ** 2

    sol = solve_ivp(rhs, (t[0], t[-1]), [n0], t_eval=t, method="RK45",
                    rtol=ODE_RTOL, atol=ODE_ATOL)
    if not sol.success:
        raise RuntimeError(f"density ODE integration failed: {sol.message}")
    ode = sol.y[0]
    reference = n0 / (1.0 + 2.0 * model.gamma2 * n0 * (t - t[0]))

    scale = np.where(np.abs(n) > 0, np.abs(n), 1.0)
    loss, budget = _rate_budget(series, model, site)
    observed = np.gradient(n, t)
    residual = np.full(len(t), UNDEFINED)
    # coherences are only recorded around the reference site
    if site == series.records[0].reference_site:
        ok = np.abs(loss) > RATE_FLOOR
        residual[ok] = (observed[ok] - budget[ok]) / np.abs(loss[ok])
    else:
        budget = np.full(len(t), UNDEFINED)

    report = DensityDecayReport(
        site=site,
        times=t,
        times_tau=series.times_tau,
        recorded=n,
        ode=ode,
        reference=reference,
        ode_deviation=(ode - n) / scale,
        reference_deviation=(reference - n) / scale,
        loss_rate=loss,
        budget_rate=budget,
        observed_rate=observed,
        budget_residual=residual,
    )
    logger.info("density decay check at site %d: max ODE deviation %.3e, g2=1 deviation %.3e",
                site, report.max_ode_deviation, float(np.nanmax(np.abs(report.reference_deviation))))
    return report


def tonks_asymptote(g_abs: float, n_ph: float) -> float:
    """Equilibrium local g2 of the strongly interacting gas: (1 - 1/N^2) 4 pi^2 / (3 |G|^2)."""
    if g_abs <= 0:
        raise ValueError("g_abs must be > 0")
    return (1.0 - 1.0 / n_ph ** 2) * 4.0 * np.pi ** 2 / (3.0 * g_abs ** 2)


def retained_fraction(series: ObservableSeries) -> np.ndarray:
    total = np.array([r.total_n for r in series.records])
    return total / total[0]


# -------------------------------------------------
# TREND MEASURES
# -------------------------------------------------
def time_to_threshold(times: Sequence[float], values: Sequence[float], threshold: float) -> float:
    """First time the series reaches `threshold` from above, linearly interpolated; nan if never."""
    times, values = np.asarray(times, float), np.asarray(values, float)
    for k in range(len(values)):
        if np.isfinite(values[k]) and values[k] <= threshold:
            if k == 0 or not np.isfinite(values[k - 1]):
                return float(times[k])
            v0, v1 = values[k - 1], values[k]
            return float(times[k - 1] + (v0 - threshold) / (v0 - v1) * (times[k] - times[k - 1]))
    return UNDEFINED


def _crossing(row: np.ndarray, ref: int, step: int, level: float) -> float:
    k = ref
    while 0 <= k + step < len(row):
        nxt = k + step
        if not np.isfinite(row[nxt]):
            return float(nxt)
        if row[nxt] >= level:
            frac = (level - row[k]) / (row[nxt] - row[k]) if row[nxt] != row[k] else 0.0
            return k + step * frac
        k = nxt
    return float(k)


def dip_width(row: Sequence[float], ref: int, level: float = 0.9) -> float:
    """
    Full width in sites of the dip around `ref` at the given crossing
    level; nan when row[ref] is undefined or not below the level.
    """
    row = np.asarray(row, float)
    if not np.isfinite(row[ref]) or row[ref] >= level:
        return UNDEFINED
    return _crossing(row, ref, 1, level) - _crossing(row, ref, -1, level)


def oscillation_amplitude(row: Sequence[float], ref: Optional[int] = None,
                          level: float = 0.9) -> float:
    """
    max - min over the defined part of a g2 row. With `ref`, the central
    dip up to its `level` crossings is left out.
    """
    row = np.asarray(row, float)
    mask = np.isfinite(row)
    if ref is not None and np.isfinite(row[ref]) and row[ref] < level:
        lo, hi = _crossing(row, ref, -1, level), _crossing(row, ref, 1, level)
        idx = np.arange(len(row))
        mask &= (idx < lo) | (idx > hi)
    if not mask.any():
        return UNDEFINED
    return float(row[mask].max() - row[mask].min())


def outermost_subunity_minimum(row: Sequence[float], ref: int, tolerance: float = 1e-6) -> int:
    """Distance from `ref` (in sites) of the farthest local minimum with g2 < 1; -1 if none."""
    row = np.asarray(row, float)
    best = -1
    for m in range(1, len(row) - 1):
        v, lo, hi = row[m], row[m - 1], row[m + 1]
        if not (np.isfinite(v) and np.isfinite(lo) and np.isfinite(hi)):
            continue
        if v < 1.0 - tolerance and v < lo and v <= hi:
            best = max(best, abs(m - ref))
    return best


def fit_convergence_order(steps: Sequence[float], errors: Sequence[float]) -> float:
    """Slope of log(error) against log(step)."""
    steps, errors = np.asarray(steps, float), np.asarray(errors, float)
    if len(steps) < 2 or np.any(errors <= 0):
        raise ValueError("need >= 2 positive errors to fit a convergence order")
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])
