import json
import os

import numpy as np
import pytest

import app
from src.config.experiment_config import validate_config
from src.runner.experiment import final_records, resume, run_experiment
from src.utils.errors import NumericalAbort, WallClockExceeded
from src.utils.io import header_fields, read_table

OUTPUT_FILES = ("series.csv", "g2_centre.csv", "g2_row.csv", "density_profile.csv",
                "density_centre.csv", "summary.json")


def _small(out_dir, **schedule):
    sc = {"t_end": 0.2, "dt": 0.01, "record_every": 0.05, "chi_max": 16, "calibrate_dt": False}
    sc.update(schedule)
    return {
        "name": "small",
        "physical": {"mean_n0": 0.6},
        "grid": {"n_sites": 6, "fock_cutoff": 2},
        "sweep": [10.0],
        "schedule": sc,
        "outputs": {"out_dir": str(out_dir)},
    }


def _write(tmp_path, raw, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def test_run_writes_every_output(tmp_path):
    config = validate_config(_small(tmp_path))
    [summary] = run_experiment(config)
    run_dir = tmp_path / "small" / "G10-dissipative"
    for name in OUTPUT_FILES:
        assert (run_dir / name).exists(), name
    assert (tmp_path / "small" / "config.json").exists()

    fields = header_fields(str(run_dir / "series.csv"))
    assert fields["config_hash"] == config.config_hash
    assert fields["reference_site"] == "3"
    series = read_table(str(run_dir / "series.csv"))
    np.testing.assert_allclose(series["t_tau"], [0.0, 0.05, 0.1, 0.15, 0.2], atol=1e-12)
    assert series["n_ref"].iloc[-1] < series["n_ref"].iloc[0]
    assert series["trace"].iloc[-1] == pytest.approx(1.0, abs=1e-8)

    rows = read_table(str(run_dir / "g2_row.csv"))
    assert len(rows) == 5 * 6
    centre = read_table(str(run_dir / "density_centre.csv"))
    assert centre["ode_deviation"].abs().max() < 1e-2

    assert summary["n_records"] == 5
    assert summary["lieb_liniger_g"] == pytest.approx(10.0)
    assert 0.0 < summary["retained_fraction_final"] < 1.0
    assert summary["cumulative_discard"] < 1e-4
    stored = json.loads((run_dir / "summary.json").read_text())
    assert stored["config_hash"] == config.config_hash
    frame = final_records([summary])
    assert list(frame["label"]) == ["G10-dissipative"]


def test_runs_are_reproducible(tmp_path):
    run_experiment(validate_config(_small(tmp_path / "a")))
    run_experiment(validate_config(_small(tmp_path / "b")))
    for name in ("series.csv", "g2_row.csv"):
        a = (tmp_path / "a" / "small" / "G10-dissipative" / name).read_text()
        b = (tmp_path / "b" / "small" / "G10-dissipative" / name).read_text()
        assert a == b


def test_zero_length_run(tmp_path):
    [summary] = run_experiment(validate_config(_small(tmp_path, t_end=0.0)))
    assert summary["n_records"] == 1
    assert summary["n_steps"] == 0
    assert summary["retained_fraction_final"] == pytest.approx(1.0)
    centre = read_table(str(tmp_path / "small" / "G10-dissipative" / "density_centre.csv"))
    assert list(centre.columns) == ["t_tau", "n_ref"]


def test_numerical_abort_leaves_a_diagnostic(tmp_path):
    config = validate_config(_small(tmp_path, chi_max=1, abort_discard=1e-14))
    with pytest.raises(NumericalAbort):
        run_experiment(config)
    diagnostic = json.loads((tmp_path / "small" / "G10-dissipative" / "diagnostic.json").read_text())
    assert diagnostic["max_bond"] == 1
    assert diagnostic["config_hash"] == config.config_hash


def test_wall_clock_stop_and_resume(tmp_path):
    raw = _small(tmp_path, wall_clock_budget=1e-9)
    with pytest.raises(WallClockExceeded) as err:
        run_experiment(validate_config(raw))
    checkpoint = err.value.checkpoint_path
    assert checkpoint.endswith("checkpoint.joblib")

    # every invocation gets the same budget, so each resume advances at least one step
    summary = None
    for _ in range(40):
        try:
            summary = resume(checkpoint)
            break
        except WallClockExceeded:
            continue
    assert summary is not None

    run_experiment(validate_config(_small(tmp_path / "straight")))
    resumed = read_table(str(tmp_path / "small" / "G10-dissipative" / "series.csv"))
    straight = read_table(str(tmp_path / "straight" / "small" / "G10-dissipative" / "series.csv"))
    np.testing.assert_allclose(resumed["n_ref"], straight["n_ref"], rtol=0, atol=1e-14)
    np.testing.assert_allclose(resumed["g2_ref"], straight["g2_ref"], rtol=0, atol=1e-14)


def test_cli_exit_codes(tmp_path, capsys):
    assert app.main(["presets"]) == 0
    assert "fig3-desk" in capsys.readouterr().out

    good = _write(tmp_path, _small(tmp_path))
    assert app.main(["check", good]) == 0
    assert "config_hash=" in capsys.readouterr().out
    assert app.main(["run", good, "--t-end", "0.1"]) == 0

    bad = _write(tmp_path, dict(_small(tmp_path), colour="red"), "bad.json")
    assert app.main(["check", bad]) == 2
    assert app.main(["run", str(tmp_path / "missing.json")]) == 2
    assert app.main(["resume", str(tmp_path / "missing.joblib")]) == 2

    aborting = _write(tmp_path, _small(tmp_path / "abort2", chi_max=1, abort_discard=1e-14),
                      "abort.json")
    assert app.main(["run", aborting]) == 3

    stopping = _write(tmp_path, _small(tmp_path / "stop", wall_clock_budget=1e-9), "stop.json")
    assert app.main(["run", stopping]) == 10
    checkpoint = os.path.join(str(tmp_path / "stop"), "small", "G10-dissipative", "checkpoint.joblib")
    assert os.path.exists(checkpoint)
