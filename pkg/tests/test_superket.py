import numpy as np
import pytest
import scipy.linalg
from scipy.stats import poisson

from src.evolve import engine as engine_module
from src.model.lattice import bond_liouvillians, build_local_ops
from src.model.superoperators import superop_to_site_major
from src.mps import superket as superket_module
from src.mps.superket import (
    SuperketMPS,
    coherent_product_state,
    fock_product_state,
    truncated_coherent,
)
from src.oracle.dense import embed_bond, site_operator
from src.tensor.tensor_core import contract, kron_all
from src.utils.errors import ConfigError, NumericalAbort
from tests.helpers import evolve, lattice


def _random_rho(rng, d):
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = x @ x.conj().T
    return rho / np.trace(rho)


def _random_product(rng, n_sites, d, chi_max=81):
    return SuperketMPS.product_state([_random_rho(rng, d) for _ in range(n_sites)],
                                     chi_max, eps_cut=0.0)


def _gated(rng, model, chi_max=81):
    """Random product state on `model` pushed through every bond once."""
    state = _random_product(rng, model.n_sites, model.local_dim, chi_max)
    for b, g in enumerate(bond_liouvillians(model)):
        gate = scipy.linalg.expm(0.3 * superop_to_site_major(g, 2, model.local_dim))
        state.apply_bond_gate(b, gate)
    return state


def test_product_state_densifies_to_kron(rng):
    rhos = [_random_rho(rng, 3) for _ in range(3)]
    state = SuperketMPS.product_state(rhos, chi_max=4)
    np.testing.assert_allclose(state.to_dense(), kron_all(rhos), atol=1e-14)
    assert state.bond_dims == [1, 1]
    assert state.trace() == pytest.approx(1.0)


def test_fock_state_correlations():
    m = lattice(3, 3)
    ops = build_local_ops(3)
    state = fock_product_state([1, 2, 1], m, chi_max=4)
    np.testing.assert_allclose(state.expectation_profile(ops.number).real, [1, 2, 1])
    pairs = state.expectation_profile(ops.pair_density).real
    assert pairs[0] == pytest.approx(0.0)
    assert pairs[1] / 2.0 ** 2 == pytest.approx(0.5)
    assert state.two_site_expectation(0, ops.number, 2, ops.number).real == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        fock_product_state([0, 4, 0], m, chi_max=4)


def test_two_site_expectation_matches_dense(rng):
    m = lattice(3, 2, J=0.8, U=0.2, gamma1=0.1, gamma2=0.3)
    state = _gated(rng, m)
    rho = state.to_dense()
    ops = build_local_ops(2)
    for a, b in [(0, 1), (0, 2), (2, 1)]:
        op = site_operator(ops.create, a, 3) @ site_operator(ops.annihilate, b, 3)
        expected = np.trace(rho @ op) / np.trace(rho)
        got = state.two_site_expectation(a, ops.create, b, ops.annihilate)
        assert abs(got - expected) < 1e-12
    with pytest.raises(ValueError):
        state.two_site_expectation(1, ops.number, 1, ops.number)


def test_profiles_and_rows_agree_with_single_queries(rng):
    m = lattice(4, 1, J=1.0, gamma1=0.2, gamma2=0.1)
    state = _gated(rng, m)
    ops = build_local_ops(1)
    profile = state.expectation_profile(ops.number)
    for site in range(4):
        assert abs(profile[site] - state.local_expectation(site, ops.number)) < 1e-12
    row = state.correlation_row(1, ops.number, ops.number)
    assert np.isnan(row[1])
    for site in (0, 2, 3):
        expected = state.two_site_expectation(1, ops.number, site, ops.number)
        assert abs(row[site] - expected) < 1e-12


def test_bond_gate_matches_dense_propagation(rng):
    m = lattice(3, 2, J=0.7, U=0.3, gamma1=0.15, gamma2=0.45)
    state = _random_product(rng, 3, m.local_dim)
    rho0 = state.to_dense()
    g = bond_liouvillians(m)[1]
    gate = scipy.linalg.expm(0.2 * superop_to_site_major(g, 2, m.local_dim))
    state.apply_bond_gate(1, gate)

    full = scipy.linalg.expm(0.2 * embed_bond(g, 1, 3, m.local_dim))
    expected = (full @ rho0.reshape(-1)).reshape(rho0.shape)
    np.testing.assert_allclose(state.to_dense(), expected, atol=1e-12)
    assert state.cumulative_discard < 1e-20


def test_bond_gate_argument_checks(rng):
    state = _random_product(rng, 3, 2)
    with pytest.raises(IndexError):
        state.apply_bond_gate(2, np.eye(16))
    with pytest.raises(ValueError):
        state.apply_bond_gate(0, np.eye(8))


def test_threaded_layer_is_bitwise_sequential(rng):
    m = lattice(5, 1, J=1.0, gamma1=0.2)
    d = m.local_dim
    layer = {b: scipy.linalg.expm(0.25 * superop_to_site_major(g, 2, d))
             for b, g in enumerate(bond_liouvillians(m)) if b % 2 == 0}
    a = _random_product(rng, 5, d)
    b = a.copy()
    a.apply_layer(layer, threads=1)
    b.apply_layer(layer, threads=3)
    for ta, tb in zip(a.tensors, b.tensors):
        assert np.array_equal(ta, tb)


def test_canonicalize_keeps_the_state_and_fixes_the_gauge(rng):
    m = lattice(4, 1, J=1.0, U=0.5, gamma1=0.1, gamma2=0.2)
    state = _gated(rng, m)
    before = state.to_dense()
    state.canonicalize(truncate=False)
    np.testing.assert_allclose(state.to_dense(), before, atol=1e-12)
    assert state.gauge_error() < 1e-8
    for w in state.weights:
        assert np.sum(w ** 2) == pytest.approx(1.0)


def test_observables_are_invariant_under_a_bond_gauge(rng, all_terms_model):
    m = all_terms_model
    state = coherent_product_state([0.4, 0.6, 0.4], m, chi_max=16, eps_cut=0.0)
    evolve(state, m, 0.02, 0.2)
    chi = state.bond_dims[0]
    assert chi > 1
    g = np.eye(chi) + 0.3 * (rng.normal(size=(chi, chi)) + 1j * rng.normal(size=(chi, chi)))

    gauged = state.copy()
    gauged.tensors[0] = contract(gauged.tensors[0], g, [(2, 0)])
    gauged.tensors[1] = contract(np.linalg.inv(g), gauged.tensors[1], [(1, 0)])

    ops = build_local_ops(m.fock_cutoff)
    assert gauged.trace() == pytest.approx(state.trace(), abs=1e-10)
    np.testing.assert_allclose(gauged.expectation_profile(ops.number),
                               state.expectation_profile(ops.number), atol=1e-10)
    np.testing.assert_allclose(gauged.expectation_profile(ops.pair_density),
                               state.expectation_profile(ops.pair_density), atol=1e-10)
    assert gauged.two_site_expectation(0, ops.number, 2, ops.number) == pytest.approx(
        state.two_site_expectation(0, ops.number, 2, ops.number), abs=1e-10)
    np.testing.assert_allclose(gauged.to_dense(), state.to_dense(), atol=1e-10)


def test_bond_cap_reports_discarded_weight():
    m = lattice(2, 1, J=1.0)
    state = fock_product_state([1, 0], m, chi_max=1)
    g = bond_liouvillians(m)[0]
    gate = scipy.linalg.expm(0.5 * superop_to_site_major(g, 2, m.local_dim))
    discarded = state.apply_bond_gate(0, gate)
    assert discarded > 1e-4
    assert state.max_bond == 1
    assert state.cumulative_discard == pytest.approx(discarded)


def test_renormalize_and_zero_trace():
    m = lattice(2, 2)
    state = fock_product_state([1, 0], m, chi_max=4)
    state.scale(2.0)
    assert state.trace() == pytest.approx(2.0)
    assert state.renormalize() == pytest.approx(0.5)
    assert state.trace() == pytest.approx(1.0)

    empty = SuperketMPS.product_state([np.zeros((3, 3)), np.eye(3)], chi_max=4)
    with pytest.raises(NumericalAbort):
        empty.renormalize()
    with pytest.raises(NumericalAbort):
        empty.local_expectation(0, np.eye(3))


def test_purity():
    pure = SuperketMPS.product_state([np.diag([1.0, 0.0, 0.0])] * 3, chi_max=4)
    assert pure.purity() == pytest.approx(1.0)
    mixed = SuperketMPS.product_state([np.diag([0.5, 0.5, 0.0]), np.diag([1.0, 0.0, 0.0])],
                                      chi_max=4)
    assert mixed.purity() == pytest.approx(0.5)


def test_truncated_coherent_amplitudes():
    psi, lost = truncated_coherent(0.5 * np.exp(0.3j), 3)
    assert np.linalg.norm(psi) == pytest.approx(1.0)
    assert lost == pytest.approx(poisson.sf(3, 0.25))
    ratio = psi[1] / psi[0]
    assert ratio == pytest.approx(0.5 * np.exp(0.3j))
    vacuum, none_lost = truncated_coherent(0.0, 3)
    assert vacuum[0] == 1.0 and none_lost == 0.0


def test_coherent_product_state():
    m = lattice(3, 3)
    ops = build_local_ops(3)
    state = coherent_product_state([0.1, 0.2, 0.1], m, chi_max=4)
    n = state.expectation_profile(ops.number).real
    np.testing.assert_allclose(n, [0.01, 0.04, 0.01], atol=1e-6)
    assert 0.0 <= state.cutoff_deficit < 1e-6
    nn = state.two_site_expectation(0, ops.number, 2, ops.number).real
    assert nn / (n[0] * n[2]) == pytest.approx(1.0, abs=1e-12)

    with pytest.raises(ConfigError, match="fock_cutoff"):
        coherent_product_state([0.1, 1.5, 0.1], m, chi_max=4)
    with pytest.raises(ConfigError):
        coherent_product_state([0.1, 0.1], m, chi_max=4)


def test_state_operations_live_on_the_class():
    for name in ("trace_contraction", "local_expectation", "two_site_expectation",
                 "apply_bond_gate", "renormalize"):
        assert not hasattr(superket_module, name)
    for name in ("trace", "local_expectation", "two_site_expectation",
                 "apply_bond_gate", "renormalize"):
        assert callable(getattr(SuperketMPS, name))
    assert not hasattr(engine_module, "step")
    assert not hasattr(engine_module, "run")
