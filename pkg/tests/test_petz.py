import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from mplab.channels import (CircuitLayout, amplitude_damping_channel, choi_min_eigenvalue,
                            czx_local_channel, trivial_circuit, trivial_local_channel)
from mplab.errors import CannotReorganize, NotSelfDual, RadiusTooLarge
from mplab.lattice import czx_monomial, x_string, z_string
from mplab.channels import symmetry_deviation
from mplab.petz import (PetzRecovery, QuadratureRule, build_recovery, fit_xi,
                        gauss_legendre_rule, recovery_choi_report, recovery_error,
                        recovery_window, reorganize, ring_distance, twirl_fourier, twirl_weight)
from mplab.tensor_core import DiagonalState, frac_power_hermitian


def random_state(rng, dim):
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T + 0.1 * np.eye(dim)
    return rho / np.trace(rho)


def petz_oracle(inner, sigma, tau, n_t=6001, cutoff=25.0):
    """Dense twirled Petz map on the window by the trapezoid rule."""
    gamma = inner.apply(sigma)
    adj = inner.adjoint()
    ts = np.linspace(-cutoff, cutoff, n_t)
    h = ts[1] - ts[0]
    out = np.zeros_like(tau, dtype=complex)
    for t in ts:
        gl = frac_power_hermitian(gamma, (-1 + 1j * t) / 2)
        gr = frac_power_hermitian(gamma, (-1 - 1j * t) / 2)
        sl = frac_power_hermitian(sigma, (1 - 1j * t) / 2)
        sr = frac_power_hermitian(sigma, (1 + 1j * t) / 2)
        out += h * twirl_weight(t) * (sl @ adj.apply(gl @ tau @ gr) @ sr)
    return out


def test_twirl_weight_is_normalized():
    total, _ = quad(twirl_weight, -np.inf, np.inf)
    assert abs(total - 1) < 1e-10


@pytest.mark.parametrize("omega", [0.0, 0.3, 1.0, 2.5, 7.0])
def test_twirl_fourier_closed_form(omega):
    val, _ = quad(lambda t: twirl_weight(t) * np.cos(omega * t), -40, 40, limit=400)
    assert abs(twirl_fourier(omega) - val) < 1e-9
    assert abs(gauss_legendre_rule().fourier(omega) - val) < 1e-9


def test_quadrature_rule_checks_normalization():
    assert abs(gauss_legendre_rule().masses.sum() - 1) < 1e-11
    x, w = np.polynomial.legendre.leggauss(20)
    with pytest.raises(ValueError):
        QuadratureRule(x, w, 1.0)


@pytest.fixture(scope="module")
def window_setup():
    ch = trivial_local_channel(1, 4)  # A = sites 1, 2 of a 4-site window
    return ch, [0, 1, 2, 3]


def test_exact_path_matches_dense_oracle(rng, window_setup):
    ch, win = window_setup
    s = rng.random(16) + 0.05
    s /= s.sum()
    rec = PetzRecovery(ch, s, win)
    assert rec.diagonal
    tau = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    oracle = petz_oracle(ch, np.diag(s).astype(complex), tau)
    assert np.allclose(rec.apply_local(tau), oracle, atol=1e-9)


def test_quadrature_path_matches_dense_oracle(rng, window_setup):
    ch, win = window_setup
    sigma = random_state(rng, 16)
    rec = PetzRecovery(ch, sigma, win)
    assert not rec.diagonal
    tau = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    assert np.allclose(rec.apply_local(tau), petz_oracle(ch, sigma, tau), atol=1e-9)


def test_paths_agree_on_diagonal_reference(rng, window_setup):
    ch, win = window_setup
    s = rng.random(16)
    s /= s.sum()
    tau = rng.standard_normal((16, 16))
    exact = PetzRecovery(ch, s, win).apply_local(tau)
    quadr = PetzRecovery(ch, s, win, method="quadrature").apply_local(tau)
    assert np.allclose(exact, quadr, atol=1e-10)


def test_recovers_reference(rng, window_setup):
    ch, win = window_setup
    sigma = random_state(rng, 16)
    rec = PetzRecovery(ch, sigma, win)
    assert np.allclose(rec.apply_local(ch.apply(sigma)), sigma, atol=1e-10)


def test_recovery_channel_is_cptp(rng):
    ch = czx_local_channel(1, 6)
    s = rng.random(64)
    s[::7] = 0.0  # rank-deficient reference exercises the complement term
    s /= s.sum()
    rec = PetzRecovery(ch, s, list(range(6)))
    assert rec.tp_defect() < 1e-12
    assert choi_min_eigenvalue(rec) > -1e-10


def test_complement_weight_keeps_trace(rng, window_setup):
    ch, win = window_setup
    s = np.zeros(16)
    s[[0, 15]] = 0.5
    rec = PetzRecovery(ch, s, win)
    assert rec.defect_weight() == 0.0 or rec.defect_weight() > 0
    tau = np.diag(rng.random(16)).astype(complex)
    assert abs(np.trace(rec.apply_local(tau)) - np.trace(tau)) < 1e-12
    diag = rec.apply_diagonal(np.diag(tau).real)
    assert np.allclose(diag, np.diag(rec.apply_local(tau)).real)


def test_non_self_dual_channel_rejected():
    with pytest.raises(NotSelfDual):
        PetzRecovery(amplitude_damping_channel([0, 1], 0.3), np.ones(4) / 4, [0, 1])


def test_ring_distance():
    assert ring_distance(1, 9, 10) == 2 and ring_distance(3, 3, 8) == 0


@pytest.mark.parametrize("r,depth", [(1, 2), (2, 6), (3, 10)])
def test_reorganize_layers(r, depth):
    lay = reorganize(trivial_circuit(10), r)
    assert lay.depth == depth
    for layer in lay.layers:
        starts = [ch.support[0] for ch in layer]
        assert all(ring_distance(a, b, 10) >= 2 * r for i, a in enumerate(starts)
                   for b in starts[i + 1:])
    assert sorted(ch.support for ch in lay.channels()) == \
        sorted(ch.support for ch in trivial_circuit(10).channels())


def test_reorganize_rejects_non_commuting():
    lay = CircuitLayout([[amplitude_damping_channel([0, 1], 0.3)], [trivial_local_channel(1, 4)]], 4)
    with pytest.raises(CannotReorganize):
        reorganize(lay, 1)


def test_recovery_window():
    ch = trivial_local_channel(0, 8)
    assert recovery_window(ch, 2, 8) == [6, 7, 0, 1, 2, 3]
    with pytest.raises(RadiusTooLarge):
        recovery_window(ch, 4, 8)


def test_markov_case_is_exact():
    for lam in (1.0, -1.0):
        err = recovery_error(build_recovery(lam, 8, 1))
        assert err.eps_diag <= 1e-8 and err.eps_full <= 1e-8


@pytest.mark.parametrize("lam", [0.5, -0.5])
def test_recovery_error_decreases_and_obeys_bound(lam):
    radii = [1, 2] if lam < 0 else [1, 2, 3]
    errs = [recovery_error(build_recovery(lam, 8, r)) for r in radii]
    eps = [e.eps_diag for e in errs]
    assert all(b < a for a, b in zip(eps, eps[1:]))
    assert all(e.bound_ok for e in errs)
    assert all(e.image_deviation < 1e-9 for e in errs)


@pytest.fixture(scope="module")
def plans():
    return {lam: build_recovery(lam, 8, 1) for lam in (0.5, -0.5)}


def test_recovery_channels_cptp_and_symmetric(plans):
    plan = plans[0.5]
    for row in recovery_choi_report(plan):
        assert row["choi_min_eigenvalue"] > -1e-10 and row["tp_defect"] < 1e-10
    rc = plan.recovery_channels[0][2]
    assert symmetry_deviation(rc, x_string(8), 8) <= 1e-9
    assert symmetry_deviation(rc, z_string(8), 8) > 0.1
    rc = plans[-0.5].recovery_channels[0][2]
    assert symmetry_deviation(rc, czx_monomial(8), 8) <= 1e-9


def test_nontrivial_reduced_marginal_commutes_with_czx(plans):
    """A diagonal operator commutes with a monomial iff it is invariant under its permutation."""
    plan = plans[-0.5]
    n = plan.n_sites
    u = czx_monomial(n)
    state = plan.fixed_point
    for _, _, rc in plan.recovery_channels:
        marg = state.marginal(rc.support).weights.reshape((2,) * rc.width)
        rest = [s for s in range(n) if s not in rc.support]
        full = np.tensordot(marg, np.ones((2,) * len(rest)), 0)
        full = np.transpose(full, np.argsort(list(rc.support) + rest)).ravel()
        assert np.max(np.abs(full[u.perm] - full)) < 1e-10
        state = rc.channel.apply_diagonal(state)


def test_fit_xi():
    r = np.arange(1, 5)
    assert abs(fit_xi(r, np.exp(-r / 0.7)) - 0.7) < 1e-10
    assert np.isnan(fit_xi([1, 2], [0.0, 0.0]))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_diagonal_reference_is_recovered(seed):
    rng = np.random.default_rng(seed)
    ch = trivial_local_channel(0, 4)
    state = DiagonalState(4, 2, rng.random(16))
    window = [3, 0, 1, 2]
    rec = PetzRecovery(ch, state.marginal(window).weights, window)
    back = rec.apply_diagonal(ch.apply_diagonal(state))
    assert np.allclose(back.weights, state.weights, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50))
def test_twirl_fourier_even_and_bounded(omega):
    v = float(twirl_fourier(omega))
    assert 0 <= v <= 1 + 1e-15
    assert abs(v - float(twirl_fourier(-omega))) < 1e-15
