import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mplab.errors import InvalidShape, TooSmall
from mplab.lattice import (HADAMARD, PAULI_X, MonomialOperator, MPOTensor, block_open,
                           clock_shift, czx_monomial, czx_mpo, czx_operator, identity_mpo,
                           mpo_contract, mpo_monomial, named_operator, span_report, x_string,
                           z_string)
from mplab.tensor_core import kron_all


def czx_oracle(n):
    """Product of CZ gates around the ring times X on every site."""
    cz = np.eye(2 ** n, dtype=complex)
    for i in range(n):
        cz = cz @ named_operator("CZ", n, [i, (i + 1) % n])
    return cz @ kron_all([PAULI_X] * n)


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_czx_matches_gate_product(n):
    assert np.allclose(czx_operator(n), czx_oracle(n))
    assert np.allclose(czx_monomial(n).dense(), czx_oracle(n))


@pytest.mark.parametrize("n", [3, 4, 6])
def test_czx_mpo_contracts_to_czx(n):
    assert np.allclose(mpo_contract(czx_mpo(), n), czx_operator(n))
    assert np.allclose(mpo_monomial(czx_mpo(), n).dense(), czx_operator(n))


def test_czx_too_small():
    with pytest.raises(TooSmall):
        czx_operator(2)


def test_czx_square():
    # CZX^2 = +1 on even rings and -1 on odd rings
    assert np.allclose(czx_operator(4) @ czx_operator(4), np.eye(16))
    assert np.allclose(czx_operator(5) @ czx_operator(5), -np.eye(32))


def test_named_registry():
    assert np.allclose(named_operator("X", 3), x_string(3).dense())
    assert np.allclose(named_operator("Z", 2), z_string(2).dense())
    assert np.allclose(named_operator("H", 1), HADAMARD)
    assert np.allclose(named_operator("X", 3, [1]), kron_all([np.eye(2), PAULI_X, np.eye(2)]))
    x3, z3 = clock_shift(3)
    assert np.allclose(named_operator("Xg", 2, local_dim=3, power=2), np.kron(x3 @ x3, x3 @ x3))
    assert np.allclose(z3 @ x3, np.exp(2j * np.pi / 3) * x3 @ z3)
    with pytest.raises(InvalidShape):
        named_operator("CZ", 3, [0])
    with pytest.raises(KeyError):
        named_operator("Y", 2)


def test_identity_mpo():
    assert np.allclose(mpo_contract(identity_mpo(), 3), np.eye(8))


def test_monomial_rejects_non_permutation():
    with pytest.raises(InvalidShape):
        MonomialOperator([0, 0], [1, 1])
    with pytest.raises(InvalidShape):
        MonomialOperator.from_dense(np.ones((2, 2)))


def test_block_open_sums_to_periodic():
    blocks = block_open(czx_mpo(), 4)
    total = blocks[(0, 0)] + blocks[(1, 1)]
    assert np.allclose(total, czx_operator(4))


def test_span_report():
    a = [np.eye(2), PAULI_X]
    b = [np.eye(2) + PAULI_X, np.eye(2) - PAULI_X]
    rep = span_report(a, b)
    assert rep["equal"] and rep["rank_a"] == rep["rank_b"] == 2
    assert not span_report(a, [np.diag([1.0, -1.0])])["equal"]


@st.composite
def monomials(draw, dim=8):
    perm = draw(st.permutations(list(range(dim))))
    angles = draw(st.lists(st.floats(0, 2 * np.pi), min_size=dim, max_size=dim))
    return MonomialOperator(np.array(perm), np.exp(1j * np.array(angles)))


@settings(max_examples=40, deadline=None)
@given(monomials(), monomials())
def test_monomial_algebra(u, v):
    assert np.allclose((u @ v).dense(), u.dense() @ v.dense())
    assert np.allclose(u.dagger().dense(), u.dense().conj().T)
    back = MonomialOperator.from_dense(u.dense())
    assert np.array_equal(back.perm, u.perm) and np.allclose(back.phase, u.phase)
    tau = np.arange(64, dtype=complex).reshape(8, 8)
    assert np.allclose(u.apply_left(tau), u.dense() @ tau)
    assert np.allclose(u.apply_right(tau), tau @ u.dense())
