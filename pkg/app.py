import argparse
import json
import logging
import os
import sys

from dotenv import load_dotenv

from src.config.experiment_config import PRESETS, list_presets, load_config
from src.runner.experiment import final_records, resume, run_experiment
from src.utils.errors import LLTEBDError, NumericalAbort, WallClockExceeded

logger = logging.getLogger("lltebd")


# ------------------------------
# SECTION 1: ARGUMENTS
# ------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lltebd",
        description="Superket TEBD for the lossy Lieb-Liniger gas on a lattice.",
    )
    ap.add_argument("--log-level", default=None,
                    help="logging level (default: LLTEBD_LOG_LEVEL or INFO)")
    sub = ap.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--chi", type=int, default=None, help="override schedule.chi_max")
        p.add_argument("--dt", type=float, default=None, help="override schedule.dt (tau_c units)")
        p.add_argument("--t-end", type=float, default=None, help="override schedule.t_end (tau_c units)")
        p.add_argument("--out-dir", default=None, help="override outputs.out_dir")

    run = sub.add_parser("run", help="run a config file or a preset")
    run.add_argument("config", help=f"JSON config path or preset name ({', '.join(PRESETS)})")
    overrides(run)

    check = sub.add_parser("check", help="validate a config and print its resolved echo")
    check.add_argument("config")
    overrides(check)

    sub.add_parser("presets", help="list the built-in presets")

    res = sub.add_parser("resume", help="continue a run from its checkpoint")
    res.add_argument("checkpoint")
    return ap


def _overrides(args) -> dict:
    return {"chi": args.chi, "dt": args.dt, "t_end": args.t_end, "out_dir": args.out_dir}


# ------------------------------
# SECTION 2: COMMANDS
# ------------------------------
def cmd_presets(args) -> int:
    for name, text in list_presets().items():
        print(f"{name:22s} {text}")
    return 0


def cmd_check(args) -> int:
    config = load_config(args.config, _overrides(args))
    print(json.dumps(config.echo, indent=2, sort_keys=True))
    for plan in config.plans():
        g = plan.groups
        print(f"{plan.label}: |G|={g.lieb_liniger_g:.6g} T_loc={g.t_loc:.6g} tau_c={g.tau_c:.6g}")
    print(f"config_hash={config.config_hash}")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config, _overrides(args))
    summaries = run_experiment(config)
    print(final_records(summaries).to_string(index=False))
    return 0


def cmd_resume(args) -> int:
    summary = resume(args.checkpoint)
    print(final_records([summary]).to_string(index=False))
    return 0


COMMANDS = {"presets": cmd_presets, "check": cmd_check, "run": cmd_run, "resume": cmd_resume}


def main(argv=None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv("LLTEBD_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return COMMANDS[args.command](args)
    except WallClockExceeded as e:
        logger.warning("%s (checkpoint: %s)", e, e.checkpoint_path)
        return e.exit_code
    except NumericalAbort as e:
        logger.error("numerical abort: %s", e)
        return e.exit_code
    except LLTEBDError as e:
        logger.error("%s", e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
