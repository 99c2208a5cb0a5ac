import os

import numpy as np
import pytest

from src.evolve.engine import EvolutionSchedule, TEBDEngine, calibrate_dt
from src.model.lattice import build_local_ops
from src.mps.superket import coherent_product_state, fock_product_state, truncated_coherent
from src.observables.analysis import fit_convergence_order
from src.observables.measure import ObservableRecorder, ObservableSeries, g2_nonlocal
from src.oracle.dense import assemble_dense, g2_dense, propagate_dense, site_operator
from src.services.checkpoint import load_checkpoint
from src.tensor.tensor_core import kron_all
from src.utils.errors import NumericalAbort, WallClockExceeded
from tests.helpers import evolve, lattice


def _coherent_rho(amplitudes, fock_cutoff):
    rhos = []
    for c in amplitudes:
        psi, _ = truncated_coherent(c, fock_cutoff)
        rhos.append(np.outer(psi, psi.conj()))
    return kron_all(rhos)


def test_schedule_validation():
    s = EvolutionSchedule(1.0, 0.1, [0.5, 1.0, 0.5])
    assert s.n_steps == 10
    assert s.record_times == [0.0, 0.5, 1.0]
    assert s.record_steps == [0, 5, 10]
    assert s.halved().n_steps == 20
    with pytest.raises(ValueError):
        EvolutionSchedule(1.0, 0.0)
    with pytest.raises(ValueError):
        EvolutionSchedule(-1.0, 0.1)
    with pytest.raises(ValueError):
        EvolutionSchedule(1.0, 0.1, [1.5])
    with pytest.raises(ValueError):
        EvolutionSchedule(1.0, 0.3)

    uniform = EvolutionSchedule.uniform(1.0, 0.01, 0.25)
    assert uniform.record_steps == [0, 25, 50, 75, 100]


def test_zero_length_run_records_only_the_initial_state(pair_loss_model):
    state = fock_product_state([2, 0], pair_loss_model, chi_max=4)
    engine = TEBDEngine(pair_loss_model, 0.1, log_every=0)
    series = engine.run(state, EvolutionSchedule(0.0, 0.1), ObservableRecorder(pair_loss_model, 0))
    assert len(series) == 1
    assert series.records[0].n_ref == pytest.approx(2.0)
    assert engine.step_index == 0


def test_matches_the_dense_liouvillian(all_terms_model):
    m = all_terms_model
    amplitudes = [0.3, 0.5, 0.3]
    state = coherent_product_state(amplitudes, m, chi_max=16, eps_cut=0.0)
    dt = 1e-3
    schedule = EvolutionSchedule(1.0, dt, [0.1, 0.5, 1.0])
    series = TEBDEngine(m, dt, log_every=0).run(state, schedule, ObservableRecorder(m, 0))

    L = assemble_dense(m)
    rho0 = _coherent_rho(amplitudes, m.fock_cutoff)
    number = build_local_ops(m.fock_cutoff).number
    for rec in series.records[1:]:
        rho = propagate_dense(L, rho0, rec.time)
        assert abs(np.trace(rho) - 1.0) < 1e-10
        assert abs(rec.trace - 1.0) < 1e-6
        for site in range(3):
            n = np.trace(rho @ site_operator(number, site, 3)).real
            assert abs(rec.density[site] - n) < 1e-6
            assert abs(rec.g2_local[site] - g2_dense(rho, site, site, 3, m.fock_cutoff)) < 1e-6
        assert abs(rec.g2_row[2] - g2_dense(rho, 0, 2, 3, m.fock_cutoff)) < 1e-6


def test_total_number_never_grows(all_terms_model):
    m = all_terms_model
    state = coherent_product_state([0.5, 0.8, 0.5], m, chi_max=32, eps_cut=0.0)
    engine = TEBDEngine(m, 0.02, log_every=0)
    number = build_local_ops(m.fock_cutoff).number
    totals = [state.expectation_profile(number).real.sum()]
    for _ in range(50):
        engine.step(state)
        totals.append(state.expectation_profile(number).real.sum())
    assert np.all(np.diff(totals) <= 1e-10)
    assert totals[-1] < totals[0]


def test_single_site_pair_loss_is_exponential(pair_loss_model):
    m = pair_loss_model
    state = fock_product_state([2, 0], m, chi_max=16)
    dt = 0.05
    schedule = EvolutionSchedule.uniform(5.0 / m.gamma2, dt, 0.5)
    series = TEBDEngine(m, dt, log_every=0).run(state, schedule, ObservableRecorder(m, 0))
    expected = 2.0 * np.exp(-2.0 * m.gamma2 * series.times)
    np.testing.assert_allclose(series.site_series("density", 0), expected, atol=1e-8)


def test_quadratic_dynamics_keeps_coherent_states_uncorrelated():
    m = lattice(20, 4, J=1.0, gamma1=0.2)
    amplitudes = 0.1 * np.exp(-((np.arange(20) - 9.5) ** 2) / 18.0)
    state = coherent_product_state(amplitudes, m, chi_max=16, eps_cut=1e-14)
    engine = TEBDEngine(m, 0.05, log_every=0)
    number = build_local_ops(m.fock_cutoff).number
    for _ in range(2):
        for _ in range(10):
            engine.step(state)
        density = state.expectation_profile(number).real
        occupied = [l for l in range(20) if density[l] > 1e-6]
        assert len(occupied) > 10
        for a in occupied:
            for b in occupied:
                if a < b:
                    assert abs(g2_nonlocal(state, a, b) - 1.0) < 1e-6


def test_second_order_splitting_converges_quadratically():
    m = lattice(4, 2, J=1.0, U=0.3, gamma1=0.1, gamma2=0.4)
    amplitudes = [0.2, 0.3, 0.3, 0.2]
    ops = build_local_ops(m.fock_cutoff)

    def observables(dt):
        state = coherent_product_state(amplitudes, m, chi_max=81, eps_cut=1e-13)
        evolve(state, m, dt, 0.4)
        return np.concatenate([state.expectation_profile(ops.number).real,
                               state.expectation_profile(ops.pair_density).real])

    reference = observables(0.025 / 8)
    steps = [0.1, 0.05, 0.025]
    errors = [np.max(np.abs(observables(dt) - reference)) for dt in steps]
    assert errors[0] > errors[1] > errors[2]
    assert 1.7 <= fit_convergence_order(steps, errors) <= 2.3


def test_calibration_keeps_an_exact_step(pair_loss_model):
    state = fock_product_state([2, 0], pair_loss_model, chi_max=16)
    assert calibrate_dt(state, pair_loss_model, 0.1, 0.4, site=0) == pytest.approx(0.1)


def test_calibration_halves_a_coarse_step(all_terms_model):
    state = coherent_product_state([0.3, 0.5, 0.3], all_terms_model, chi_max=16)
    dt = calibrate_dt(state, all_terms_model, 0.2, 0.4, tolerance=1e-14, max_halvings=2)
    assert dt == pytest.approx(0.05)


def test_excess_discard_aborts():
    m = lattice(2, 1, J=1.0)
    state = fock_product_state([1, 0], m, chi_max=1)
    engine = TEBDEngine(m, 0.2, abort_discard=1e-14, log_every=0)
    with pytest.raises(NumericalAbort) as err:
        engine.step(state)
    assert err.value.diagnostics["max_bond"] == 1
    assert err.value.diagnostics["step_discard"] > 1e-14


def test_state_must_fit_the_model(all_terms_model, pair_loss_model):
    state = fock_product_state([0, 0], pair_loss_model, chi_max=4)
    with pytest.raises(ValueError):
        TEBDEngine(all_terms_model, 0.1).step(state)


def test_checkpointed_run_resumes_to_the_same_result(all_terms_model, tmp_path):
    m = all_terms_model
    amplitudes = [0.3, 0.5, 0.3]
    schedule = EvolutionSchedule(0.5, 0.05, [0.1, 0.2, 0.3, 0.4, 0.5], chi_max=16)

    state = coherent_product_state(amplitudes, m, chi_max=16)
    full = TEBDEngine(m, 0.05, log_every=0, threads=1).run(state, schedule, ObservableRecorder(m))

    path = str(tmp_path / "ckpt.joblib")
    state = coherent_product_state(amplitudes, m, chi_max=16)
    with pytest.raises(WallClockExceeded) as err:
        TEBDEngine(m, 0.05, log_every=0, threads=1).run(
            state, schedule, ObservableRecorder(m), wall_clock_budget=0.0,
            checkpoint_path=path, config_hash="abc")
    assert err.value.checkpoint_path == path
    assert os.path.exists(path)

    restored, config_hash, progress = load_checkpoint(path)
    assert config_hash == "abc"
    assert progress["step_index"] == 1
    engine = TEBDEngine(m, progress["dt"], log_every=0, threads=1)
    engine.step_index, engine.time = progress["step_index"], progress["time"]
    series = ObservableSeries.from_payload(progress["series"])
    recorder = ObservableRecorder(m)
    recorder.initial_n = series.records[0].total_n
    resumed = engine.run(restored, schedule, recorder, series=series)

    assert len(resumed) == len(full) == 6
    for a, b in zip(resumed.records, full.records):
        assert a.time == pytest.approx(b.time)
        np.testing.assert_array_equal(a.density, b.density)
        np.testing.assert_array_equal(a.g2_row, b.g2_row)
