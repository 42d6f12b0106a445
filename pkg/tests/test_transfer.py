import itertools

import numpy as np
import pytest

from mplab.errors import BranchMismatch, InvalidShape, OutOfRange, ScaleTooLarge
from mplab.lattice import czx_operator, x_string
from mplab.tensor_core import DiagonalState, hermitian_eigenvalues
from mplab.transfer import (apply_t1_diagonal, build_kernel, build_od, build_rho,
                            check_branch, default_branch, dense_t1_restricted,
                            dressed_flip_part, e2_bond_product_norm, fixed_point,
                            kernel_superoperator, lambda_state, transfer_from_peps)


def t1_oracle(lam, n):
    """``M[x, y] = prod_i w(x_{i-1}, x_i, y_{i-1}, y_i)`` with weight ``lam^2`` on the
    four special plaquettes and 1 elsewhere."""
    special = {(0, 0, 1, 1), (1, 1, 0, 0), (0, 1, 0, 1), (1, 0, 1, 0)}
    cfgs = list(itertools.product(range(2), repeat=n))
    m = np.ones((2 ** n, 2 ** n))
    for a, x in enumerate(cfgs):
        for b, y in enumerate(cfgs):
            for i in range(n):
                if (x[i - 1], x[i], y[i - 1], y[i]) in special:
                    m[a, b] *= lam * lam
    return m


def perron_oracle(lam, n):
    vals, vecs = np.linalg.eigh(t1_oracle(lam, n))
    v = np.abs(vecs[:, -1])
    return v / v.sum()


def test_od_tensor():
    o = build_od(0.5).entries
    assert o[0, 0, 1, 1] == o[1, 0, 1, 0] == 0.25
    assert o[0, 0, 0, 0] == 1.0


@pytest.mark.parametrize("lam", [0.0, 0.3, -0.6, 1.0])
@pytest.mark.parametrize("n", [3, 4, 5])
def test_restricted_t1_matches_oracle(lam, n):
    t1 = dense_t1_restricted(build_kernel(lam), n)
    assert np.allclose(t1, t1_oracle(lam, n), atol=1e-14)
    assert np.allclose(t1, t1.T)


def test_matrix_free_t1(rng):
    v = rng.random(2 ** 6)
    k = build_kernel(0.4)
    assert np.allclose(apply_t1_diagonal(k, v), dense_t1_restricted(k, 6) @ v)


@pytest.mark.parametrize("lam", [0.2, 0.5, 0.8])
def test_fixed_point_matches_perron_vector(lam):
    fp = lambda_state(lam, 8)
    assert np.allclose(fp.state.weights, perron_oracle(lam, 8), atol=1e-10)
    assert fp.residual < 1e-10 and 0 < fp.spectral_gap < 1


@pytest.mark.parametrize("lam", [1.0, -1.0])
def test_fixed_point_is_uniform_at_renormalization_points(lam):
    w = lambda_state(lam, 8).state.weights
    assert np.max(np.abs(w - 2.0 ** -8)) <= 1e-12


def test_fixed_point_even_in_lambda_and_flip_invariant():
    for lam in (0.2, 0.8):
        a = lambda_state(lam, 6).state.weights
        b = fixed_point(build_kernel(-lam), 6).state.weights
        assert np.max(np.abs(a - b)) <= 1e-10
        assert np.max(np.abs(a - a[::-1])) <= 1e-10


def test_fixed_point_errors():
    with pytest.raises(ScaleTooLarge):
        fixed_point(build_kernel(0.5), 16)
    with pytest.raises(InvalidShape):
        fixed_point(build_kernel(0.5), 7)
    with pytest.raises(OutOfRange):
        lambda_state(1.5, 6)


def test_branch_rules():
    assert default_branch(-0.1) == "nontrivial" and default_branch(0.0) == "trivial"
    with pytest.raises(BranchMismatch):
        check_branch(0.5, "nontrivial")
    with pytest.raises(BranchMismatch):
        check_branch(-0.5, "trivial")
    assert check_branch(0.0, "nontrivial") == "nontrivial"


@pytest.mark.parametrize("lam,branch", [(0.5, "trivial"), (-0.5, "nontrivial"),
                                        (0.0, "trivial"), (0.0, "nontrivial")])
def test_branch_states_are_states(lam, branch):
    rho = build_rho(lam, 6, branch)
    assert abs(np.trace(rho) - 1) < 1e-12
    assert hermitian_eigenvalues(rho).min() >= -1e-10


def test_renormalization_fixed_points():
    n = 6
    tc = build_rho(1.0, n)
    ds = build_rho(-1.0, n)
    assert np.allclose(tc, (np.eye(2 ** n) + x_string(n).dense()) / 2 ** n)
    assert np.allclose(ds, (np.eye(2 ** n) + czx_operator(n)) / 2 ** n)


@pytest.mark.parametrize("lam", [0.5, -0.5])
def test_branch_state_is_invariant_under_full_map(lam):
    n = 4
    k = build_kernel(lam)
    t = kernel_superoperator(k, n)
    rho = build_rho(lam, n)
    dim = rho.shape[0]
    image = (t @ rho.ravel()).reshape(dim, dim)
    scale = image.trace()
    assert np.allclose(image / scale, rho, atol=1e-12)
    # the diagonal part kills the off-diagonal symmetry component
    t1 = kernel_superoperator(k, n, "t1")
    lam_d = np.diag(lambda_state(lam, n).state.weights)
    u = x_string(n).dense() if lam > 0 else czx_operator(n)
    assert np.max(np.abs(t1 @ (u @ lam_d).ravel())) < 1e-12


@pytest.mark.parametrize("lam", [-1.0, -0.6, -0.2, 0.0, 0.3, 0.7, 1.0])
def test_kernel_matches_peps_reduction(lam):
    k = build_kernel(lam)
    peps = transfer_from_peps(lam)
    for n, part in itertools.product((3, 4), ("t1", "t2")):
        diff = np.max(np.abs(kernel_superoperator(k, n, part) - peps.superoperator(n, part)))
        assert diff <= 1e-12
    assert e2_bond_product_norm(peps) <= 1e-13
    assert np.allclose(peps.e_tilde_2, dressed_flip_part(lam), atol=1e-14)
