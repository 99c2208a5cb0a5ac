# =====================================================
# LLTEBD: Experiment Runner
# =====================================================

import json
import logging
import os
import time as wallclock
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional

import pandas as pd

from src.config.experiment_config import ExperimentConfig, RunPlan, validate_config
from src.evolve.engine import EvolutionSchedule, TEBDEngine, calibrate_dt
from src.mps.superket import SuperketMPS, coherent_product_state
from src.observables.analysis import density_decay_check, tonks_asymptote
from src.observables.measure import ObservableRecorder, ObservableSeries
from src.services.checkpoint import load_checkpoint
from src.utils.errors import ConfigError, LLTEBDError, NumericalAbort, WallClockExceeded
from src.utils.io import atomic_write_text, write_table

logger = logging.getLogger(__name__)

# dt self-test horizon, in units of tau_c
CALIBRATION_HORIZON = 0.1
MIN_ODE_RECORDS = 3


def _checkpoint_path(config: ExperimentConfig, plan: RunPlan) -> str:
    if config.checkpoint_dir:
        return os.path.join(config.checkpoint_dir, f"{config.name}-{plan.label}.joblib")
    return os.path.join(plan.run_dir, "checkpoint.joblib")


def _bond_threads(config: ExperimentConfig) -> Optional[int]:
    # one thread per job keeps the BLAS reduction order fixed
    return 1 if config.deterministic else None


def _calibrated_schedule(plan: RunPlan, state: SuperketMPS, config: ExperimentConfig) -> EvolutionSchedule:
    schedule = plan.schedule
    if not config.schedule["calibrate_dt"] or schedule.n_steps == 0:
        return schedule
    steps = max(1, int(round(CALIBRATION_HORIZON * plan.tau_c / schedule.dt)))
    dt = calibrate_dt(state, plan.model, schedule.dt, steps * schedule.dt,
                      order=config.schedule["order"], site=plan.reference_site)
    while schedule.dt > dt * (1 + 1e-12):
        schedule = schedule.halved()
    if schedule is not plan.schedule:
        logger.info("[%s] dt halved to %.4g tau_c", plan.label, schedule.dt / plan.tau_c)
    return schedule


# -------------------------------------------------
# ONE RUN PLAN
# -------------------------------------------------
def run_plan(plan: RunPlan, config: ExperimentConfig,
             state: Optional[SuperketMPS] = None,
             series: Optional[ObservableSeries] = None,
             engine: Optional[TEBDEngine] = None) -> Dict[str, Any]:
    """Evolve one plan and write its output files; returns the summary."""
    started = wallclock.time()
    sc = config.schedule
    recorder = ObservableRecorder(plan.model, plan.reference_site, plan.tau_c,
                                  config.observables["density_floor"])

    if state is None:
        state = coherent_product_state(plan.amplitudes, plan.model, plan.schedule.chi_max,
                                       plan.schedule.eps_cut)
        schedule = _calibrated_schedule(plan, state, config)
        engine = TEBDEngine(plan.model, schedule.dt, sc["order"], sc["abort_discard"],
                            threads=_bond_threads(config), tau_c=plan.tau_c)
    else:
        schedule = EvolutionSchedule(plan.schedule.t_end, engine.dt, plan.schedule.record_times,
                                     plan.schedule.chi_max, plan.schedule.eps_cut)
        recorder.initial_n = series.records[0].total_n

    logger.info("[%s] %d sites, chi_max=%d, dt=%.4g tau_c, t_end=%.4g tau_c",
                plan.label, plan.model.n_sites, schedule.chi_max, schedule.dt / plan.tau_c,
                schedule.t_end / plan.tau_c)

    try:
        series = engine.run(
            state, schedule, recorder, series=series,
            wall_clock_budget=sc["wall_clock_budget"],
            checkpoint_path=_checkpoint_path(config, plan),
            checkpoint_extra=lambda: {"plan": plan.label, "config": config.echo,
                                      "max_drift": engine.max_drift},
            config_hash=config.config_hash,
        )
    except NumericalAbort as e:
        write_diagnostic(plan, config, e)
        raise

    summary = write_outputs(plan, config, series, state, engine)
    summary["wall_time_s"] = wallclock.time() - started
    _write_summary(plan, summary)
    return summary


def write_diagnostic(plan: RunPlan, config: ExperimentConfig, error: NumericalAbort):
    payload = {"label": plan.label, "config_hash": config.config_hash, "message": str(error)}
    payload.update(error.diagnostics)
    path = os.path.join(plan.run_dir, "diagnostic.json")
    atomic_write_text(path, pd.Series(payload).to_json())
    logger.error("[%s] numerical abort, diagnostics in %s", plan.label, path)


def write_outputs(plan: RunPlan, config: ExperimentConfig, series: ObservableSeries,
                  state: SuperketMPS, engine: TEBDEngine) -> Dict[str, Any]:
    run_dir = plan.run_dir
    h = config.config_hash
    meta = {"label": plan.label, "tau_c": repr(plan.tau_c), "reference_site": plan.reference_site,
            "profile": plan_profile_tag(config)}

    frame = series.to_frame()
    write_table(os.path.join(run_dir, "series.csv"), frame, h, meta)
    write_table(os.path.join(run_dir, "g2_centre.csv"), frame[["t_tau", "g2_ref"]], h, meta)
    write_table(os.path.join(run_dir, "g2_row.csv"), series.row_frame("g2_row"), h, meta)
    write_table(os.path.join(run_dir, "density_profile.csv"), series.row_frame("density"), h, meta)

    last = series.records[-1]
    mean_n0 = config.physical["mean_n0"]
    summary: Dict[str, Any] = {
        "label": plan.label,
        "config_hash": h,
        "mode": plan.interaction.mode,
        "ratio": plan.interaction.ratio,
        "lieb_liniger_g": plan.groups.lieb_liniger_g,
        "g_real": plan.physical.g_real,
        "g_imag": plan.physical.g_imag,
        "J": plan.model.J,
        "U": plan.model.U,
        "gamma1": plan.model.gamma1,
        "gamma2": plan.model.gamma2,
        "U_over_J": abs(plan.model.U) / plan.model.J,
        "tau_c": plan.tau_c,
        "t_loc": plan.groups.t_loc,
        "t_end_over_t_loc": last.time / plan.groups.t_loc,
        "dt": engine.dt,
        "dt_tau": engine.dt / plan.tau_c,
        "n_steps": engine.step_index,
        "chi_max": state.chi_max,
        "max_bond": state.max_bond,
        "cumulative_discard": state.cumulative_discard,
        "max_trace_drift": engine.max_drift,
        "cutoff_deficit": state.cutoff_deficit,
        "purity_final": state.purity(),
        "g2_ref_final": last.g2_ref,
        "tonks_asymptote": tonks_asymptote(plan.groups.lieb_liniger_g, mean_n0),
        "retained_fraction_final": last.retained_fraction,
        "n_records": len(series),
        "deterministic": config.deterministic,
    }

    if config.observables["ode_check"] and len(series) >= MIN_ODE_RECORDS:
        report = density_decay_check(series, plan.model, plan.reference_site)
        write_table(os.path.join(run_dir, "density_centre.csv"), report.to_frame(), h, meta)
        summary["ode_max_deviation"] = report.max_ode_deviation
        summary["budget_residual_max"] = report.max_budget_residual()
    else:
        centre = frame[["t_tau", "n_ref"]]
        write_table(os.path.join(run_dir, "density_centre.csv"), centre, h, meta)
    return summary


def plan_profile_tag(config: ExperimentConfig) -> str:
    p = config.profile
    return f"{p.kind}:center={p.center:g}:width={p.width:g}:edge={p.edge:g}"


def _write_summary(plan: RunPlan, summary: Dict[str, Any]):
    path = os.path.join(plan.run_dir, "summary.json")
    atomic_write_text(path, pd.Series(summary).to_json(double_precision=15))
    logger.info("[%s] g2(z0,z0)=%.4g retained=%.4g discard=%.2e -> %s",
                plan.label, summary["g2_ref_final"], summary["retained_fraction_final"],
                summary["cumulative_discard"], plan.run_dir)


def write_config_echo(config: ExperimentConfig):
    path = os.path.join(config.out_dir, config.name, "config.json")
    atomic_write_text(path, json.dumps(config.echo, indent=2, sort_keys=True) + "\n")


# -------------------------------------------------
# WHOLE EXPERIMENT
# -------------------------------------------------
def run_experiment(config: ExperimentConfig) -> List[Dict[str, Any]]:
    """
    Runs every plan of the config as an independent job and returns
    their summaries in plan order. After all jobs finish, a numerical
    abort is re-raised before a wall-clock stop.
    """
    plans = config.plans()
    write_config_echo(config)
    logger.info("experiment %s: %d run plan(s), config hash %s",
                config.name, len(plans), config.config_hash[:12])

    results: List[Any] = []
    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        futures = [pool.submit(run_plan, plan, config) for plan in plans]
        for plan, f in zip(plans, futures):
            try:
                results.append(f.result())
            except LLTEBDError as e:
                logger.error("[%s] %s", plan.label, e)
                results.append(e)

    aborts = [r for r in results if isinstance(r, NumericalAbort)]
    if aborts:
        raise aborts[0]
    stops = [r for r in results if isinstance(r, WallClockExceeded)]
    if stops:
        paths = ", ".join(s.checkpoint_path for s in stops)
        raise WallClockExceeded(f"{len(stops)} run(s) stopped on the wall-clock budget; resume {paths}",
                                stops[0].checkpoint_path)
    for r in results:
        if isinstance(r, Exception):
            raise r
    return results


def resume(checkpoint_path: str) -> Dict[str, Any]:
    """Continue the checkpointed plan to its end and write its outputs."""
    try:
        state, saved_hash, progress = load_checkpoint(checkpoint_path)
    except (FileNotFoundError, ValueError) as e:
        raise ConfigError(str(e)) from e
    config = validate_config(progress["config"])
    if config.config_hash != saved_hash:
        raise ConfigError(f"checkpoint hash {saved_hash[:12]} does not match its config "
                          f"({config.config_hash[:12]})")
    plans = {p.label: p for p in config.plans()}
    plan = plans.get(progress["plan"])
    if plan is None:
        raise ConfigError(f"checkpoint plan {progress['plan']!r} not in its config")

    sc = config.schedule
    engine = TEBDEngine(plan.model, progress["dt"], sc["order"], sc["abort_discard"],
                        threads=_bond_threads(config), tau_c=plan.tau_c)
    engine.step_index = int(progress["step_index"])
    engine.time = float(progress["time"])
    engine.max_drift = float(progress.get("max_drift", 0.0))
    series = ObservableSeries.from_payload(progress["series"])
    if not len(series):
        raise ConfigError("checkpoint carries no records")
    logger.info("[%s] resuming at step %d (t/tau_c=%.4f)", plan.label, engine.step_index,
                engine.time / plan.tau_c)
    return run_plan(plan, config, state=state, series=series, engine=engine)


def final_records(summaries: List[Dict[str, Any]]) -> pd.DataFrame:
    """One row per plan, the columns printed by the CLI after a run."""
    cols = ["label", "lieb_liniger_g", "g2_ref_final", "tonks_asymptote",
            "retained_fraction_final", "cumulative_discard", "max_bond"]
    return pd.DataFrame(summaries)[cols] if summaries else pd.DataFrame(columns=cols)


