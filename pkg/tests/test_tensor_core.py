import numpy as np
import pytest

from src.tensor.tensor_core import (
    DTYPE,
    as_matrix,
    contract,
    isometry_error,
    kron_all,
    svd_truncate,
)


def test_contract_keeps_unpaired_index_order(rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5, 3))
    out = contract(a, b, [(1, 2), (2, 0)])
    assert out.shape == (2, 5)
    np.testing.assert_allclose(out, np.einsum("ijk,klj->il", a, b), atol=1e-12)


def test_contract_is_bilinear(rng):
    a1, a2 = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    b1, b2 = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    alpha, beta = 0.7 - 0.2j, -1.3
    pairs = [(2, 0)]
    np.testing.assert_allclose(contract(alpha * a1 + beta * a2, b1, pairs),
                               alpha * contract(a1, b1, pairs) + beta * contract(a2, b1, pairs),
                               atol=1e-12)
    np.testing.assert_allclose(contract(a1, alpha * b1 + beta * b2, pairs),
                               alpha * contract(a1, b1, pairs) + beta * contract(a1, b2, pairs),
                               atol=1e-12)


def test_contract_matches_an_explicit_sum(rng):
    a = rng.normal(size=(6, 6))
    b = rng.normal(size=(6, 6))
    expected = np.zeros((6, 6))
    for i in range(6):
        for j in range(6):
            for k in range(6):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(contract(a, b, [(1, 0)]), expected, atol=1e-12)


def test_contract_rejects_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        contract(rng.normal(size=(2, 3)), rng.normal(size=(4, 2)), [(1, 0)])


def test_as_matrix_is_row_major():
    t = np.arange(24).reshape(2, 3, 4)
    m = as_matrix(t, 2)
    assert m.shape == (6, 4)
    assert m[1, 2] == t[0, 1, 2]
    assert m[4, 0] == t[1, 1, 0]


def test_svd_exact_rank_is_recovered(rng):
    m = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 5)) + 0j
    svd = svd_truncate(m, chi_max=10)
    # numerically zero values are still nonzero floats, so rank tracks count_nonzero
    recon = svd.U @ np.diag(svd.S) @ svd.V
    np.testing.assert_allclose(recon, m, atol=1e-12)
    assert svd.discarded_weight < 1e-20


def test_svd_chi_truncation_reports_tail_weight():
    s = np.array([1.0, 0.5, 0.1, 0.01])
    m = np.diag(s).astype(DTYPE)
    svd = svd_truncate(m, chi_max=2)
    assert svd.rank == 2
    expected = (0.1 ** 2 + 0.01 ** 2) / np.sum(s ** 2)
    assert svd.discarded_weight == pytest.approx(expected, rel=1e-12)
    assert isometry_error(svd.U) < 1e-12
    assert isometry_error(svd.V, left=False) < 1e-12


def test_svd_of_identity_discards_half_the_weight():
    svd = svd_truncate(np.eye(4, dtype=DTYPE), chi_max=2)
    assert svd.rank == 2
    assert svd.discarded_weight == pytest.approx(0.5, rel=1e-12)


def test_svd_reconstructs_a_full_rank_matrix(rng):
    m = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    svd = svd_truncate(m, chi_max=16)
    np.testing.assert_allclose(svd.U @ np.diag(svd.S) @ svd.V, m, atol=1e-12)
    assert svd.discarded_weight < 1e-24


def test_svd_eps_cut_drops_small_tail():
    s = np.array([1.0, 1e-3, 1e-8])
    m = np.diag(s).astype(DTYPE)
    assert svd_truncate(m, 10, eps_cut=1e-12).rank == 2
    assert svd_truncate(m, 10, eps_cut=1e-5).rank == 1
    assert svd_truncate(m, 10, eps_cut=0.0).rank == 3


def test_svd_of_zero_matrix_keeps_one_value():
    svd = svd_truncate(np.zeros((3, 4), dtype=DTYPE), chi_max=5)
    assert svd.rank == 1
    assert svd.S[0] == 0.0
    assert svd.discarded_weight == 0.0


def test_svd_validates_arguments():
    with pytest.raises(ValueError):
        svd_truncate(np.eye(2, dtype=DTYPE), chi_max=0)
    with pytest.raises(ValueError):
        svd_truncate(np.eye(2, dtype=DTYPE), chi_max=2, eps_cut=-1.0)
    with pytest.raises(ValueError):
        svd_truncate(np.ones((2, 2, 2), dtype=DTYPE), chi_max=2)


def test_kron_all_matches_nested_kron(rng):
    a, b, c = (rng.normal(size=(2, 2)) for _ in range(3))
    np.testing.assert_allclose(kron_all([a, b, c]), np.kron(np.kron(a, b), c), atol=1e-14)
