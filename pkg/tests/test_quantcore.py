import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdbayes.quantcore import (
    I2,
    KET0,
    KET1,
    KET_PLUS,
    SIGMA_X,
    SIGMA_Z,
    basis_state,
    check_density_matrix,
    dm_from_pure,
    herm_eig,
    normalize,
    symmetrize,
    tensor,
    trace_distance,
)


def random_hermitian(d, rng):
    X = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return 0.5 * (X + X.conj().T)


def random_square(d, rng):
    return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))


def test_tensor_identity_and_single_factor():
    assert np.array_equal(tensor([I2, I2]), np.eye(4))
    A = np.array([[1, 2j], [3, 4]])
    assert np.array_equal(tensor([A]), A)


def test_tensor_z_on_first_slot():
    assert np.allclose(tensor([SIGMA_Z, I2]), np.diag([1, 1, -1, -1]))
    # basis index 2 is |10>: first qubit flipped
    assert (tensor([SIGMA_Z, I2]) @ basis_state("10"))[2] == -1


def test_tensor_rejects_empty_and_non_square():
    with pytest.raises(ValueError):
        tensor([])
    with pytest.raises(ValueError):
        tensor([np.ones((2, 3))])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tensor_associative(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (random_square(2, rng) for _ in range(3))
    left = tensor([A, tensor([B, C])])
    right = tensor([tensor([A, B]), C])
    assert np.max(np.abs(left - right)) < 1e-14


def test_herm_eig_diagonal():
    vals, vecs = herm_eig(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(vals, [1, 2, 3])
    assert np.allclose(np.abs(vecs), np.eye(3)[:, [1, 2, 0]])


def test_herm_eig_pauli_x():
    vals, vecs = herm_eig(SIGMA_X)
    assert np.allclose(vals, [-1, 1])
    assert np.allclose(vecs[:, 0], np.array([1, -1]) / np.sqrt(2))
    assert np.allclose(vecs[:, 1], np.array([1, 1]) / np.sqrt(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 4, 8, 16]))
def test_herm_eig_reconstructs(seed, d):
    H = random_hermitian(d, np.random.default_rng(seed))
    vals, V = herm_eig(H)
    assert np.all(np.diff(vals) >= 0)
    assert np.max(np.abs((V * vals) @ V.conj().T - H)) < 1e-10
    assert np.max(np.abs(V.conj().T @ V - np.eye(d))) < 1e-10


def test_herm_eig_is_deterministic_in_phase():
    H = random_hermitian(6, np.random.default_rng(3))
    _, V = herm_eig(H)
    first = V[np.argmax(np.abs(V) > 1e-12, axis=0), np.arange(6)]
    assert np.allclose(first.imag, 0) and np.all(first.real > 0)


def test_herm_eig_rejects_bad_input():
    with pytest.raises(ValueError):
        herm_eig(np.ones((2, 3)))
    with pytest.raises(ValueError):
        herm_eig(np.array([[0, 1], [0, 0]], dtype=complex))
    # tiny asymmetry is symmetrized away
    vals, _ = herm_eig(SIGMA_X + 1e-10 * np.array([[0, 1], [0, 0]]))
    assert np.allclose(vals, [-1, 1], atol=1e-9)


def test_symmetrize():
    H = np.array([[1, 1 + 1e-12], [1, 2]], dtype=complex)
    S = symmetrize(H)
    assert np.array_equal(S, S.conj().T)


def test_dm_from_pure_examples():
    assert np.allclose(dm_from_pure(KET0), np.diag([1, 0]))
    assert np.allclose(dm_from_pure(KET_PLUS), np.full((2, 2), 0.5))
    ghz = (basis_state("00") + basis_state("11")) / np.sqrt(2)
    rho = dm_from_pure(ghz)
    expect = np.zeros((4, 4))
    expect[np.ix_([0, 3], [0, 3])] = 0.5
    assert np.allclose(rho, expect)


def test_dm_from_pure_zero_vector():
    with pytest.raises(ValueError):
        dm_from_pure(np.zeros(2))
    with pytest.raises(ValueError):
        normalize(np.zeros(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 4, 8, 32]))
def test_dm_from_pure_is_density_matrix(seed, d):
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    rho = dm_from_pure(psi)
    check_density_matrix(rho)
    assert np.linalg.matrix_rank(rho, tol=1e-10) == 1


def test_check_density_matrix_rejects():
    with pytest.raises(ValueError):
        check_density_matrix(np.diag([0.6, 0.6]))
    with pytest.raises(ValueError):
        check_density_matrix(np.diag([1.5, -0.5]))
    with pytest.raises(ValueError):
        check_density_matrix(np.array([[0.5, 0.1], [0.2, 0.5]]))


def test_trace_distance_examples():
    rho = dm_from_pure(KET_PLUS)
    assert trace_distance(rho, rho) == pytest.approx(0, abs=1e-15)
    assert trace_distance(dm_from_pure(KET0), dm_from_pure(KET1)) == pytest.approx(1)
    assert trace_distance(dm_from_pure(KET0), rho) == pytest.approx(1 / np.sqrt(2), abs=1e-14)


def test_trace_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        trace_distance(np.eye(2) / 2, np.eye(4) / 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trace_distance_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    a = dm_from_pure(rng.standard_normal(4) + 1j * rng.standard_normal(4))
    b = dm_from_pure(rng.standard_normal(4) + 1j * rng.standard_normal(4))
    d = trace_distance(a, b)
    assert -1e-15 <= d <= 1 + 1e-12
    assert d == pytest.approx(trace_distance(b, a), abs=1e-14)
