# ==========================================
# LLTEBD: Experiment Configuration
# ==========================================
"""
JSON experiment configs: validation against a fixed schema (unknown keys
are rejected), defaults, the resolved echo and its hash, built-in
presets, and the run plans one config expands into (one per |G| sweep
point and interaction mode).
"""

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from src.evolve.engine import EvolutionSchedule
from src.initial.profile import PulseProfile, build_profile, load_profile_table
from src.model.lattice import (
    DimensionlessGroup,
    LatticeModel,
    PhysicalParams,
    build_lattice,
    coupling_from_g,
    dimensionless_groups,
)
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

INTERACTION_MODES = ("pure_dissipative", "predominantly_repulsive", "custom")
DEFAULT_REPULSIVE_RATIO = 10.0
# sections that do not change the physics are left out of the hash
UNHASHED_SECTIONS = ("outputs", "workers")

DEFAULTS: Dict[str, Any] = {
    "name": "lltebd",
    "physical": {
        "mass": 1.0,
        "hbar": 1.0,
        "box_length": None,      # None -> n_sites (delta_z = 1)
        "mean_n0": 2.5,
        "diffusion": None,       # None -> 0.1 hbar / m
        "lieb_liniger_g": None,
    },
    "grid": {"n_sites": 40, "fock_cutoff": 3},
    "profile": {
        "kind": "flat_top",
        "center": 0.5,
        "width": 0.6,
        "edge": 0.15,
        "table": None,
        "table_path": None,
        "phase_gradient": 0.0,
    },
    "interaction": {"mode": "pure_dissipative", "ratio": None, "g_real": None, "g_imag": None},
    "sweep": None,
    "compare_modes": None,
    "schedule": {                # times in units of tau_c
        "t_end": 4.0,
        "dt": 0.001,
        "record_every": 0.05,
        "record_times": None,
        "chi_max": 40,
        "eps_cut": 1e-12,
        "order": 2,
        "calibrate_dt": True,
        "abort_discard": 1e-2,
        "wall_clock_budget": None,
    },
    "observables": {"reference_site": None, "density_floor": 1e-8, "ode_check": True},
    "outputs": {"out_dir": None, "checkpoint_dir": None},
    "deterministic": True,
    "workers": None,
}

_MODE_KEYS = set(DEFAULTS["interaction"])


@dataclass(frozen=True)
class InteractionMode:
    mode: str
    ratio: Optional[float] = None
    g_real: Optional[float] = None
    g_imag: Optional[float] = None

    @property
    def label(self) -> str:
        if self.mode == "predominantly_repulsive":
            return f"repulsive{self.ratio:g}"
        return {"pure_dissipative": "dissipative", "custom": "custom"}[self.mode]

    def couplings(self, g_abs: float):
        """(g_real, g_imag) with |g| = g_abs for the sweep modes."""
        if self.mode == "pure_dissipative":
            return 0.0, -g_abs
        if self.mode == "predominantly_repulsive":
            norm = (1.0 + self.ratio ** 2) ** 0.5
            return self.ratio * g_abs / norm, -g_abs / norm
        return self.g_real, self.g_imag

    def to_dict(self) -> dict:
        return {"mode": self.mode, "ratio": self.ratio, "g_real": self.g_real, "g_imag": self.g_imag}


@dataclass
class RunPlan:
    """One fully resolved evolution job."""

    label: str
    lieb_liniger_g: float
    interaction: InteractionMode
    physical: PhysicalParams
    model: LatticeModel
    groups: DimensionlessGroup
    schedule: EvolutionSchedule
    amplitudes: Any
    reference_site: int
    run_dir: str

    @property
    def tau_c(self) -> float:
        return self.groups.tau_c


@dataclass
class ExperimentConfig:
    name: str
    physical: Dict[str, Any]
    n_sites: int
    fock_cutoff: int
    profile: PulseProfile
    interaction: InteractionMode
    compare_modes: List[InteractionMode]
    sweep: List[float]
    schedule: Dict[str, Any]
    observables: Dict[str, Any]
    out_dir: str
    checkpoint_dir: Optional[str]
    deterministic: bool
    workers: int
    echo: Dict[str, Any] = field(default_factory=dict)
    config_hash: str = ""

    @property
    def modes(self) -> List[InteractionMode]:
        return self.compare_modes or [self.interaction]

    # -------------------------------------------------
    # RUN PLANS
    # -------------------------------------------------
    def plans(self) -> List[RunPlan]:
        out = []
        points = self.sweep if self.interaction.mode != "custom" else [None]
        for g in points:
            for mode in self.modes:
                out.append(self._plan(g, mode))
        return out

    def _plan(self, lieb_liniger_g: Optional[float], mode: InteractionMode) -> RunPlan:
        ph = self.physical
        density = ph["mean_n0"] / ph["box_length"]
        if lieb_liniger_g is None:
            g_real, g_imag = mode.g_real, mode.g_imag
        else:
            g_real, g_imag = mode.couplings(coupling_from_g(lieb_liniger_g, ph["mass"], density, ph["hbar"]))
        params = PhysicalParams(
            mass=ph["mass"], g_real=g_real, g_imag=g_imag, box_length=ph["box_length"],
            mean_n0=ph["mean_n0"], diffusion=ph["diffusion"], hbar=ph["hbar"],
        )
        model = build_lattice(params, self.n_sites, self.fock_cutoff)
        groups = dimensionless_groups(params, self.n_sites)
        tau_c = groups.tau_c

        sc = self.schedule
        try:
            if sc["record_times"] is not None:
                schedule = EvolutionSchedule(sc["t_end"] * tau_c, sc["dt"] * tau_c,
                                             [t * tau_c for t in sc["record_times"]],
                                             sc["chi_max"], sc["eps_cut"])
            else:
                schedule = EvolutionSchedule.uniform(sc["t_end"] * tau_c, sc["dt"] * tau_c,
                                                     sc["record_every"] * tau_c,
                                                     sc["chi_max"], sc["eps_cut"])
        except ValueError as e:
            raise ConfigError(f"schedule: {e}") from e

        amplitudes = build_profile(self.profile, model, ph["mean_n0"])
        ref = self.observables["reference_site"]
        ref = self.n_sites // 2 if ref is None else ref

        label = mode.label if lieb_liniger_g is None else f"G{lieb_liniger_g:g}-{mode.label}"
        return RunPlan(
            label=label,
            lieb_liniger_g=groups.lieb_liniger_g,
            interaction=mode,
            physical=params,
            model=model,
            groups=groups,
            schedule=schedule,
            amplitudes=amplitudes,
            reference_site=ref,
            run_dir=os.path.join(self.out_dir, self.name, label),
        )


# -------------------------------------------------
# VALIDATION
# -------------------------------------------------
def _reject_unknown(raw: Mapping, template: Mapping, where: str):
    for key, val in raw.items():
        path = f"{where}.{key}" if where else key
        if key not in template:
            raise ConfigError(f"unknown config key '{path}'")
        if isinstance(template[key], dict):
            if not isinstance(val, Mapping):
                raise ConfigError(f"'{path}' must be an object")
            _reject_unknown(val, template[key], path)


def _merged(raw: Mapping) -> Dict[str, Any]:
    out = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if isinstance(out[key], dict):
            out[key].update(val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _number(value, path: str, minimum: Optional[float] = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{path}' must be a number, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"'{path}' must be >= {minimum:g}, got {value!r}")
    return float(value)


def _positive(value, path: str, integer: bool = False):
    kind = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, kind) or value <= 0:
        raise ConfigError(f"'{path}' must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return value


def _resolve_mode(raw: Mapping, where: str) -> InteractionMode:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"'{where}' must be an object")
    unknown = set(raw) - _MODE_KEYS
    if unknown:
        raise ConfigError(f"unknown config key '{where}.{sorted(unknown)[0]}'")
    mode = raw.get("mode", "pure_dissipative")
    if mode not in INTERACTION_MODES:
        raise ConfigError(f"'{where}.mode' must be one of {INTERACTION_MODES}, got {mode!r}")

    if mode == "pure_dissipative":
        return InteractionMode(mode, ratio=0.0)
    if mode == "predominantly_repulsive":
        ratio = raw.get("ratio")
        ratio = DEFAULT_REPULSIVE_RATIO if ratio is None else _positive(ratio, f"{where}.ratio")
        return InteractionMode(mode, ratio=float(ratio))

    g_real, g_imag = raw.get("g_real"), raw.get("g_imag")
    if g_real is None or g_imag is None:
        raise ConfigError(f"'{where}' custom mode needs g_real and g_imag")
    g_real = _number(g_real, f"{where}.g_real")
    g_imag = _number(g_imag, f"{where}.g_imag")
    if g_imag > 0:
        raise ConfigError(f"'{where}.g_imag' must be <= 0 (loss, not gain), got {g_imag}")
    if g_real == 0 and g_imag == 0:
        raise ConfigError(f"'{where}' custom mode needs a nonzero coupling")
    return InteractionMode(mode, g_real=float(g_real), g_imag=float(g_imag))


def validate_config(raw: Union[str, Mapping]) -> ExperimentConfig:
    """
    Validate a JSON document (text or parsed) and resolve every default.
    Returns the config with its echo and hash; raises ConfigError naming
    the offending field.
    """
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, DEFAULTS, "")
    cfg = _merged(raw)

    ph = cfg["physical"]
    for key in ("mass", "hbar", "mean_n0"):
        ph[key] = float(_positive(ph[key], f"physical.{key}"))

    grid = cfg["grid"]
    n_sites = _positive(grid["n_sites"], "grid.n_sites", integer=True)
    fock_cutoff = _positive(grid["fock_cutoff"], "grid.fock_cutoff", integer=True)
    if n_sites < 2:
        raise ConfigError("'grid.n_sites' must be >= 2")
    ph["box_length"] = float(n_sites if ph["box_length"] is None
                             else _positive(ph["box_length"], "physical.box_length"))
    if ph["diffusion"] is None:
        ph["diffusion"] = PhysicalParams.default_diffusion(ph["hbar"], ph["mass"])
    else:
        ph["diffusion"] = _number(ph["diffusion"], "physical.diffusion", minimum=0.0)

    interaction = _resolve_mode(cfg["interaction"], "interaction")
    cfg["interaction"] = interaction.to_dict()

    compare = []
    for k, entry in enumerate(cfg["compare_modes"] or []):
        mode = _resolve_mode(entry, f"compare_modes[{k}]")
        if mode.mode == "custom":
            raise ConfigError(f"'compare_modes[{k}]' cannot be custom")
        compare.append(mode)
    if compare and interaction.mode == "custom":
        raise ConfigError("'compare_modes' needs a sweep mode in 'interaction'")
    cfg["compare_modes"] = [m.to_dict() for m in compare]

    if interaction.mode == "custom":
        if cfg["sweep"] or ph["lieb_liniger_g"] is not None:
            raise ConfigError("custom interaction fixes g; drop 'sweep' and 'physical.lieb_liniger_g'")
        sweep: List[float] = []
    else:
        sweep = cfg["sweep"] if cfg["sweep"] else (
            [ph["lieb_liniger_g"]] if ph["lieb_liniger_g"] is not None else [])
        if not sweep:
            raise ConfigError("'physical.lieb_liniger_g' or 'sweep' is required")
        sweep = [float(_positive(g, "sweep")) for g in sweep]
        if ph["lieb_liniger_g"] is not None:
            ph["lieb_liniger_g"] = float(_positive(ph["lieb_liniger_g"], "physical.lieb_liniger_g"))
    cfg["sweep"] = sweep

    sc = cfg["schedule"]
    _number(sc["t_end"], "schedule.t_end", minimum=0.0)
    _positive(sc["dt"], "schedule.dt")
    _positive(sc["record_every"], "schedule.record_every")
    _positive(sc["chi_max"], "schedule.chi_max", integer=True)
    if sc["order"] not in (1, 2):
        raise ConfigError("'schedule.order' must be 1 or 2")
    _number(sc["eps_cut"], "schedule.eps_cut", minimum=0.0)
    _positive(sc["abort_discard"], "schedule.abort_discard")
    if sc["wall_clock_budget"] is not None:
        _positive(sc["wall_clock_budget"], "schedule.wall_clock_budget")
    if sc["record_times"] is not None:
        if isinstance(sc["record_times"], (str, Mapping)) or not isinstance(sc["record_times"], Sequence):
            raise ConfigError("'schedule.record_times' must be a list of times")
        sc["record_times"] = sorted(_number(t, f"schedule.record_times[{k}]", minimum=0.0)
                                    for k, t in enumerate(sc["record_times"]))

    obs = cfg["observables"]
    ref = obs["reference_site"]
    if ref is not None and not (isinstance(ref, int) and 0 <= ref < n_sites):
        raise ConfigError(f"'observables.reference_site' must be a site index in [0, {n_sites})")
    _positive(obs["density_floor"], "observables.density_floor")

    prof = cfg["profile"]
    table_path = prof.pop("table_path")
    if table_path is not None:
        if prof["table"] is not None:
            raise ConfigError("'profile' takes either table or table_path")
        try:
            prof["table"] = load_profile_table(table_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"'profile.table_path': cannot read {table_path!r}: {exc}") from exc
    prof["table_path"] = None
    profile = PulseProfile(**{k: v for k, v in prof.items() if k != "table_path"})

    out = cfg["outputs"]
    out["out_dir"] = out["out_dir"] or os.getenv("LLTEBD_OUT_DIR", "runs")
    workers = cfg["workers"]
    cfg["workers"] = int(workers if workers is not None else os.getenv("LLTEBD_THREADS", "1"))

    config = ExperimentConfig(
        name=str(cfg["name"]),
        physical=ph,
        n_sites=n_sites,
        fock_cutoff=fock_cutoff,
        profile=profile,
        interaction=interaction,
        compare_modes=compare,
        sweep=sweep,
        schedule=sc,
        observables=obs,
        out_dir=out["out_dir"],
        checkpoint_dir=out["checkpoint_dir"],
        deterministic=bool(cfg["deterministic"]),
        workers=cfg["workers"],
        echo=cfg,
        config_hash=config_hash(cfg),
    )

    # physical consistency of every plan (coupling signs, cutoff occupancy, schedule grid)
    for plan in config.plans():
        logger.info("plan %s: |G|=%.4g T_loc=%.4g tau_c=%.4g U/J=%.3g",
                    plan.label, plan.groups.lieb_liniger_g, plan.groups.t_loc,
                    plan.tau_c, abs(plan.model.U) / plan.model.J)
    return config


def config_hash(echo: Mapping) -> str:
    hashed = {k: v for k, v in echo.items() if k not in UNHASHED_SECTIONS}
    text = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_config(path: str, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Read a JSON config (or a preset name) and apply CLI overrides before validation."""
    if path in PRESETS:
        raw = copy.deepcopy(PRESETS[path])
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return validate_config(apply_overrides(raw, overrides or {}))


def apply_overrides(raw: Mapping, overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """overrides: chi, dt, t_end (tau_c units), out_dir; None entries are skipped."""
    raw = copy.deepcopy(dict(raw))
    targets = {"chi": ("schedule", "chi_max"), "dt": ("schedule", "dt"),
               "t_end": ("schedule", "t_end"), "out_dir": ("outputs", "out_dir")}
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in targets:
            raise ConfigError(f"unknown override '{key}'")
        section, name = targets[key]
        raw.setdefault(section, {})[name] = val
    return raw


# -------------------------------------------------
# PRESETS (desk scale)
# -------------------------------------------------
_DISSIPATIVE = {"mode": "pure_dissipative"}
_REPULSIVE = {"mode": "predominantly_repulsive", "ratio": 10.0}

PRESETS: Dict[str, Dict[str, Any]] = {
    "fig3-desk": {
        "name": "fig3-desk",
        "interaction": _DISSIPATIVE,
        "sweep": [1.0, 10.0, 20.0, 100.0],
    },
    "fig3-repulsive-desk": {
        "name": "fig3-repulsive-desk",
        "interaction": _REPULSIVE,
        "sweep": [1.0, 10.0],
    },
    "fig4-desk": {
        "name": "fig4-desk",
        "interaction": _DISSIPATIVE,
        "sweep": [1.0, 10.0, 20.0, 100.0],
        "observables": {"ode_check": True},
    },
    "fig5-desk": {
        "name": "fig5-desk",
        "interaction": _DISSIPATIVE,
        "sweep": [20.0, 100.0],
        "schedule": {"record_every": 0.1},
    },
    "fig6a-desk": {
        "name": "fig6a-desk",
        "interaction": _DISSIPATIVE,
        "compare_modes": [_DISSIPATIVE, _REPULSIVE],
        "sweep": [1.0],
        "schedule": {"t_end": 0.056, "record_every": 0.008},
    },
    "fig6b-desk": {
        "name": "fig6b-desk",
        "interaction": _DISSIPATIVE,
        "compare_modes": [_DISSIPATIVE, _REPULSIVE],
        "sweep": [10.0],
        "schedule": {"t_end": 0.77, "record_every": 0.07},
    },
}


def list_presets() -> Dict[str, str]:
    out = {}
    for name, raw in PRESETS.items():
        modes = raw.get("compare_modes") or [raw["interaction"]]
        out[name] = (f"|G| in {raw['sweep']}, modes {[m['mode'] for m in modes]}, "
                     f"t_end {raw.get('schedule', {}).get('t_end', DEFAULTS['schedule']['t_end'])} tau_c")
    return out
