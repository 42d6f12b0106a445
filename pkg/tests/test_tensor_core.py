import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm, fractional_matrix_power, logm

from mplab.errors import InvalidShape, NotAState, NotHermitian, NotPositive
from mplab.io import decode, encode, load, save, sha256_file
from mplab.tensor_core import (DiagonalState, apply_left, apply_right, apply_superop,
                               embed_operator, frac_power_hermitian, hermitian_eigenvalues,
                               kron_all, n_sites_for, partial_trace, renyi_entropy,
                               state_spectrum, trace_norm, von_neumann_entropy)


def random_state(rng, n, rank=None):
    dim = 2 ** n
    g = rng.standard_normal((dim, rank or dim)) + 1j * rng.standard_normal((dim, rank or dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def ptrace_oracle(rho, keep, n):
    """Partial trace by explicit summation over basis vectors of the traced sites."""
    out = np.zeros((2 ** len(keep),) * 2, dtype=complex)
    traced = [s for s in range(n) if s not in keep]
    for bits in range(2 ** len(traced)):
        proj = [None] * n
        for k, s in enumerate(traced):
            v = np.zeros((2, 1))
            v[(bits >> (len(traced) - 1 - k)) & 1] = 1
            proj[s] = v
        for s in keep:
            proj[s] = np.eye(2)
        m = kron_all(proj)
        out += m.T @ rho @ m
    return out


def test_n_sites_for():
    assert n_sites_for(16) == 4
    assert n_sites_for(27, 3) == 3
    with pytest.raises(InvalidShape):
        n_sites_for(12)


@pytest.mark.parametrize("keep", [[0], [2], [0, 2], [1, 3], [0, 1, 2]])
def test_partial_trace_matches_oracle(rng, keep):
    rho = random_state(rng, 4)
    assert np.allclose(partial_trace(rho, keep), ptrace_oracle(rho, keep, 4), atol=1e-13)


def test_partial_trace_keep_order_is_respected(rng):
    a, b = random_state(rng, 1), random_state(rng, 1)
    rho = np.kron(a, b)
    assert np.allclose(partial_trace(rho, [1, 0]), np.kron(b, a))


def test_diagonal_marginal_matches_dense(rng):
    w = rng.random(2 ** 5)
    st_ = DiagonalState(5, 2, w)
    for keep in ([0], [1, 3], [4, 0, 2]):
        assert np.allclose(st_.marginal(keep).dense(), partial_trace(st_.dense(), keep))


def test_diagonal_state_validation():
    with pytest.raises(NotAState):
        DiagonalState(1, 2, [1.0, -0.1])
    with pytest.raises(InvalidShape):
        DiagonalState(2, 2, [1.0, 1.0])
    clipped = DiagonalState(1, 2, [1.0, -1e-13])
    assert clipped.weights[1] == 0.0


def test_entropies_of_known_states():
    bell = np.zeros((4, 4))
    bell[0, 0] = bell[0, 3] = bell[3, 0] = bell[3, 3] = 0.5
    assert abs(von_neumann_entropy(bell)) < 1e-12
    assert abs(von_neumann_entropy(partial_trace(bell, [0])) - np.log(2)) < 1e-12
    mixed = np.eye(8) / 8
    assert abs(renyi_entropy(mixed, 2) - 3 * np.log(2)) < 1e-12
    assert abs(von_neumann_entropy(DiagonalState.uniform(3)) - 3 * np.log(2)) < 1e-12


def test_renyi_limits(rng):
    rho = random_state(rng, 2)
    p = state_spectrum(rho)
    assert abs(renyi_entropy(rho, 2) + np.log(np.sum(p ** 2))) < 1e-12
    assert abs(renyi_entropy(rho, 1 + 1e-7) - von_neumann_entropy(rho)) < 1e-5


def test_state_checks():
    with pytest.raises(NotAState):
        von_neumann_entropy(np.eye(2))
    with pytest.raises(NotHermitian):
        hermitian_eigenvalues(np.array([[0, 1], [0, 0]], dtype=complex))


def test_trace_norm():
    assert abs(trace_norm(np.diag([1.0, -2.0, 0.5])) - 3.5) < 1e-14


@pytest.mark.parametrize("p", [0.5, -0.5, 1.5])
def test_frac_power_matches_scipy(rng, p):
    rho = random_state(rng, 2)
    assert np.allclose(frac_power_hermitian(rho, p), fractional_matrix_power(rho, p), atol=1e-10)


def test_complex_power_matches_expm(rng):
    rho = random_state(rng, 2)
    p = 0.25 + 0.3j
    assert np.allclose(frac_power_hermitian(rho, p), expm(p * logm(rho)), atol=1e-10)


def test_frac_power_on_support():
    rho = np.diag([0.5, 0.5, 0.0, 0.0])
    inv = frac_power_hermitian(rho, -1.0)
    assert np.allclose(inv, np.diag([2.0, 2.0, 0.0, 0.0]))
    with pytest.raises(NotPositive):
        frac_power_hermitian(np.diag([1.0, -0.5]), 0.5)


def test_local_actions_match_embedding(rng):
    tau = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    op = rng.standard_normal((4, 4))
    big = embed_operator(op, [3, 1], 4)
    assert np.allclose(apply_left(tau, op, [3, 1]), big @ tau)
    assert np.allclose(apply_right(tau, op, [3, 1]), tau @ big)
    # superoperator of tau -> op tau op^dag on sites (3, 1)
    sup = np.kron(op, op.conj())
    assert np.allclose(apply_superop(tau, sup, [3, 1]), big @ tau @ big.conj().T)


def test_container_roundtrip(tmp_path, rng):
    rho = random_state(rng, 3)
    digest = save(tmp_path / "r.bin", rho)
    assert digest == sha256_file(tmp_path / "r.bin")
    assert np.array_equal(load(tmp_path / "r.bin"), rho)
    diag = DiagonalState(3, 2, rng.random(8))
    save(tmp_path / "d.bin", diag)
    back = load(tmp_path / "d.bin")
    assert isinstance(back, DiagonalState) and np.array_equal(back.weights, diag.weights)


def test_container_rejects_corruption(rng):
    blob = encode(np.eye(4))
    with pytest.raises(InvalidShape):
        decode(b"XXXXXXXX" + blob[8:])
    with pytest.raises(InvalidShape):
        decode(blob[:-16])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 3))
def test_partial_trace_preserves_trace_and_positivity(seed, rank):
    rng = np.random.default_rng(seed)
    rho = random_state(rng, 3, rank)
    red = partial_trace(rho, [0, 2])
    assert abs(np.trace(red) - 1) < 1e-12
    assert hermitian_eigenvalues(red).min() > -1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_subadditivity(seed):
    rng = np.random.default_rng(seed)
    rho = random_state(rng, 3)
    s_a = von_neumann_entropy(partial_trace(rho, [0]))
    s_bc = von_neumann_entropy(partial_trace(rho, [1, 2]))
    assert von_neumann_entropy(rho) <= s_a + s_bc + 1e-10
    assert abs(s_a - s_bc) <= von_neumann_entropy(rho) + 1e-10
