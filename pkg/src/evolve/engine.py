# =====================================================
# LLTEBD: Trotterized Superket Evolution Engine
# =====================================================

import logging
import os
import time as wallclock
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from src.evolve.gates import build_gates
from src.model.lattice import LatticeModel, bond_liouvillians, build_local_ops
from src.mps.superket import GAUGE_TOLERANCE, SuperketMPS
from src.observables.measure import ObservableRecord, ObservableSeries
from src.services.checkpoint import save_checkpoint
from src.utils.errors import NumericalAbort, WallClockExceeded

logger = logging.getLogger(__name__)

DEFAULT_ABORT_DISCARD = 1e-2
STEP_TOLERANCE = 1e-9


@dataclass
class EvolutionSchedule:
    """Absolute times; record times are whole multiples of dt."""

    t_end: float
    dt: float
    record_times: List[float] = field(default_factory=list)
    chi_max: int = 40
    eps_cut: float = 1e-12

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        times = sorted(set([0.0] + [float(t) for t in self.record_times]))
        for t in times:
            if t < -STEP_TOLERANCE or t > self.t_end + STEP_TOLERANCE * max(1.0, self.t_end):
                raise ValueError(f"record time {t} outside [0, {self.t_end}]")
        self.record_times = times
        self.n_steps = self._to_steps(self.t_end)
        self.record_steps = [self._to_steps(t) for t in times]

    def _to_steps(self, t: float) -> int:
        n = int(round(t / self.dt))
        if abs(n - t / self.dt) > STEP_TOLERANCE * max(1, n):
            raise ValueError(f"time {t} is not a multiple of dt={self.dt}")
        return n

    def halved(self) -> "EvolutionSchedule":
        return EvolutionSchedule(self.t_end, self.dt / 2, list(self.record_times),
                                 self.chi_max, self.eps_cut)

    @classmethod
    def uniform(cls, t_end: float, dt: float, record_every: float,
                chi_max: int = 40, eps_cut: float = 1e-12) -> "EvolutionSchedule":
        n = int(round(t_end / record_every)) if record_every > 0 else 0
        times = [k * record_every for k in range(n + 1) if k * record_every <= t_end * (1 + 1e-12)]
        return cls(t_end, dt, times, chi_max, eps_cut)


class TEBDEngine:
    """
    Drives a SuperketMPS through Trotter steps of the bond Liouvillians.

    One step: gate layers (even, odd or Strang half-even/odd/half-even),
    canonicalization sweep, trace monitor and renormalization.
    """

    def __init__(self, model: LatticeModel, dt: float, order: int = 2,
                 abort_discard: float = DEFAULT_ABORT_DISCARD, threads: Optional[int] = None,
                 log_every: int = 50, tau_c: float = 1.0):
        self.model = model
        self.order = order
        self.abort_discard = abort_discard
        self.threads = threads or int(os.getenv("LLTEBD_THREADS", "1"))
        self.log_every = log_every
        self.tau_c = tau_c
        self.bonds = bond_liouvillians(model)
        self.gates = build_gates(self.bonds, dt, order, model.local_dim)
        self.step_index = 0
        self.time = 0.0
        self.max_drift = 0.0

    @property
    def dt(self) -> float:
        return self.gates.dt

    # -------------------------------------------------
    # ONE TROTTER STEP
    # -------------------------------------------------
    def step(self, state: SuperketMPS) -> SuperketMPS:
        if state.local_dim != self.model.local_dim or state.n_sites != self.model.n_sites:
            raise ValueError("state dimensions do not match the model")

        discarded = 0.0
        for layer in self.gates.layers():
            discarded += state.apply_layer(layer, self.threads)
        discarded += state.canonicalize()

        tr = state.trace()
        state.last_trace = tr
        drift = abs(tr - 1.0)
        self.max_drift = max(self.max_drift, drift)
        bound = 10.0 * discarded + 10.0 * self.dt ** 3
        if drift > bound:
            logger.warning("trace drift %.3e over monitored bound %.3e at step %d",
                           drift, bound, self.step_index + 1)
        if discarded > self.abort_discard:
            raise NumericalAbort(
                f"step discard {discarded:.3e} exceeds abort threshold {self.abort_discard:.1e}; "
                f"increase chi_max (now {state.chi_max})",
                self.diagnostics(state, discarded),
            )
        state.renormalize()

        self.step_index += 1
        self.time = self.step_index * self.dt
        if self.log_every and self.step_index % self.log_every == 0:
            self.log_progress(state, drift)
        return state

    def log_progress(self, state: SuperketMPS, drift: float):
        gauge = state.gauge_error()
        if gauge > GAUGE_TOLERANCE:
            logger.warning("gauge consistency %.2e after canonicalization at step %d",
                           gauge, self.step_index)
        logger.info(
            "step=%6d t/tau_c=%.4f trace_drift=%.2e max_chi=%d discard=%.3e",
            self.step_index, self.time / self.tau_c, drift, state.max_bond,
            state.cumulative_discard,
        )

    def diagnostics(self, state: SuperketMPS, step_discard: float = 0.0) -> dict:
        return {
            "step": self.step_index,
            "time": self.time,
            "t_tau": self.time / self.tau_c,
            "max_bond": state.max_bond,
            "bond_dims": state.bond_dims,
            "cumulative_discard": state.cumulative_discard,
            "step_discard": step_discard,
            "max_trace_drift": self.max_drift,
        }

    # -------------------------------------------------
    # MAIN LOOP
    # -------------------------------------------------
    def run(self, state: SuperketMPS, schedule: EvolutionSchedule,
            recorder: Callable[[SuperketMPS, float], ObservableRecord],
            series: Optional[ObservableSeries] = None,
            wall_clock_budget: Optional[float] = None,
            checkpoint_path: Optional[str] = None,
            checkpoint_extra: Optional[Callable[[], dict]] = None,
            config_hash: str = "") -> ObservableSeries:
        """
        Evolve to schedule.t_end, recording at every record time. Resumes
        from self.step_index when a checkpointed engine is handed back.
        """
        if abs(schedule.dt - self.dt) > 1e-15 * max(1.0, self.dt):
            raise ValueError("schedule dt differs from the gate substep")
        series = series if series is not None else ObservableSeries(config_hash=config_hash)
        series.model = self.model.to_dict()
        pending = set(schedule.record_steps)
        started = wallclock.time()

        with ThreadPoolExecutor(max_workers=1) as pool:
            futures = []
            if self.step_index in pending and not self._recorded(series, self.step_index):
                futures.append(pool.submit(recorder, state.copy(), self.step_index * self.dt))

            while self.step_index < schedule.n_steps:
                self.step(state)
                if self.step_index in pending:
                    futures.append(pool.submit(recorder, state.copy(), self.time))
                    logger.debug("recorded t/tau_c=%.4f", self.time / self.tau_c)

                if wall_clock_budget is not None and wallclock.time() - started > wall_clock_budget:
                    for f in futures:
                        series.append(f.result())
                    futures = []
                    path = checkpoint_path or "checkpoint.joblib"
                    progress = {"step_index": self.step_index, "time": self.time,
                                "dt": self.dt, "series": series.to_payload()}
                    if checkpoint_extra is not None:
                        progress.update(checkpoint_extra())
                    save_checkpoint(path, state, config_hash, progress)
                    raise WallClockExceeded(
                        f"wall-clock budget {wall_clock_budget}s exceeded at step {self.step_index}",
                        path,
                    )

            for f in futures:
                series.append(f.result())

        series.diagnostics.update(self.diagnostics(state))
        series.diagnostics["purity"] = state.purity()
        return series

    def _recorded(self, series: ObservableSeries, step_index: int) -> bool:
        t = step_index * self.dt
        return any(abs(r.time - t) <= STEP_TOLERANCE * max(1.0, t) for r in series.records)


# -------------------------------------------------
# dt CALIBRATION
# -------------------------------------------------
def _trial_observables(state: SuperketMPS, model: LatticeModel, dt: float, order: int,
                       t_trial: float, site: int) -> np.ndarray:
    engine = TEBDEngine(model, dt, order, log_every=0)
    trial = state.copy()
    for _ in range(int(round(t_trial / dt))):
        engine.step(trial)
    ops = build_local_ops(model.fock_cutoff)
    return np.array([trial.local_expectation(site, ops.number).real,
                     trial.local_expectation(site, ops.pair_density).real])


def calibrate_dt(state: SuperketMPS, model: LatticeModel, dt: float, t_trial: float,
                 order: int = 2, tolerance: float = 1e-6, max_halvings: int = 3,
                 site: Optional[int] = None) -> float:
    """
    Trotter self-test: evolve to t_trial with dt and dt/2 and halve dt
    while the centre observables still move by more than `tolerance`.
    """
    site = model.n_sites // 2 if site is None else site
    current = _trial_observables(state, model, dt, order, t_trial, site)
    for _ in range(max_halvings):
        finer = _trial_observables(state, model, dt / 2, order, t_trial, site)
        change = float(np.max(np.abs(finer - current)))
        if change <= tolerance:
            logger.info("dt=%g passes the Trotter self-test (change %.2e)", dt, change)
            return dt
        logger.info("dt=%g fails the Trotter self-test (change %.2e), halving", dt, change)
        dt, current = dt / 2, finer
    return dt
