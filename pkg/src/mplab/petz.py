"""Twirled Petz recovery and the staggered reorganization of commuting circuits.

The recovery map for a channel ``E`` on ``A`` with reference state ``s`` on
the window ``AB`` is

    R(X) = int f(t) s^{(1-it)/2} E^dag(G^{(-1+it)/2} X G^{(-1-it)/2}) s^{(1+it)/2} dt,

with ``G = E(s)`` and ``f(t) = pi / (2 (cosh(pi t) + 1))``. When ``s`` and ``G``
are diagonal the ``t`` integral can be done in closed form because
``int f(t) x^{it} dt = ln(x) / sinh(ln(x))``. General references go through a
quadrature rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .channels import (CircuitLayout, LocalChannel, TraceFormChannel, _first_fit_layers,
                       choi_min_eigenvalue, circuit_apply, circuit_for, commutation_deviation)
from .errors import CannotReorganize, InvalidShape, NotPositive, NotSelfDual, RadiusTooLarge
from .tensor_core import (SUPPORT_EPS, DiagonalState, _act, _check_sites, _legs, apply_left,
                          apply_right, eigh_hermitian, trace_norm)
from .transfer import build_rho, check_branch, default_branch, lambda_state

DEFAULT_NODES = 160
DEFAULT_CUTOFF = 10.0
CHOI_MAX_SITES = 6
SELF_DUAL_TOL = 1e-10


def twirl_weight(t):
    """``f(t) = pi / (2 (cosh(pi t) + 1))``, a probability density on the real line."""
    x = np.exp(-np.pi * np.abs(np.asarray(t, dtype=float)))
    # 1 / (cosh y + 1) = 2 e^{-y} / (1 + e^{-y})^2 without overflow
    return np.pi * x / (1.0 + x) ** 2


def twirl_fourier(omega):
    """``int f(t) exp(i omega t) dt = omega / sinh(omega)``."""
    om = np.asarray(omega, dtype=float)
    small = np.abs(om) < 1e-6
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = om / np.sinh(np.where(small, 1.0, om))
    return np.where(small, 1.0 - om * om / 6.0, out)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integrals against :func:`twirl_weight`."""

    nodes: np.ndarray
    weights: np.ndarray
    cutoff: float

    def __post_init__(self):
        err = abs(float(np.sum(self.weights * twirl_weight(self.nodes))) - 1.0)
        if err > 1e-10:
            raise ValueError(f"quadrature misses the normalization of f by {err:.2e}")

    @property
    def masses(self) -> np.ndarray:
        """``w_k f(t_k)``."""
        return self.weights * twirl_weight(self.nodes)

    def fourier(self, omega):
        """Quadrature estimate of :func:`twirl_fourier`."""
        om = np.asarray(omega, dtype=float)
        return np.tensordot(np.cos(np.multiply.outer(om, self.nodes)), self.masses, axes=(-1, 0))


def gauss_legendre_rule(n_nodes: int = DEFAULT_NODES, cutoff: float = DEFAULT_CUTOFF) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    return QuadratureRule(cutoff * x, cutoff * w, cutoff)


def _masked_log(v, keep):
    return np.where(keep, np.log(np.where(keep, v, 1.0)), 0.0)


def _masked_power(v, keep, p):
    return np.where(keep, np.where(keep, v, 1.0) ** p, 0.0)


class PetzRecovery(LocalChannel):
    """Twirled Petz map of ``channel`` with reference ``sigma`` on the window ``support``.

    ``sigma`` may be a dense matrix or the weight vector of a diagonal state,
    with legs in the order of ``support``. Fractional powers act on
    supports (eigenvalues above ``support_eps``); weight outside the support
    of ``G = E(sigma)`` is replaced by the maximally mixed state on the
    window, which keeps the map trace preserving.

    ``method='auto'`` uses the closed-form twirl when ``sigma`` and ``G`` are
    diagonal and the quadrature otherwise.
    """

    def __init__(self, channel: LocalChannel, sigma, support: Sequence[int],
                 quad: Optional[QuadratureRule] = None, method: str = "auto",
                 support_eps: float = SUPPORT_EPS):
        super().__init__(support, channel.local_dim, f"R[{channel.label}]")
        if not set(channel.support) <= set(self.support):
            raise InvalidShape("channel support must lie inside the recovery window")
        if method not in ("auto", "exact", "quadrature"):
            raise ValueError(f"unknown method {method!r}")
        self.channel = channel
        self.quad = quad or gauss_legendre_rule()
        self.support_eps = support_eps
        self.a_pos = [self.support.index(s) for s in channel.support]
        self.b_pos = [k for k in range(self.width) if k not in self.a_pos]
        self._inner = channel.relocated(self.a_pos)
        self._check_self_dual()
        D = self.local_size
        sigma = np.asarray(sigma)
        if sigma.ndim == 2:
            if sigma.shape != (D, D):
                raise InvalidShape("sigma does not match the recovery window")
            if np.max(np.abs(sigma - np.diag(np.diag(sigma))), initial=0.0) == 0.0:
                sigma = np.diag(sigma).real
        elif sigma.shape != (D,):
            raise InvalidShape("sigma does not match the recovery window")
        diag = sigma.ndim == 1 and self._inner.preserves_diagonal()
        if method == "exact" and not diag:
            raise InvalidShape("closed-form twirl needs a diagonal reference and channel")
        self.diagonal = diag and method != "quadrature"
        if diag:
            s = sigma.real.astype(float)
            if s.min() < -1e-12:
                raise NotPositive(f"sigma has negative weight {s.min():.3e}")
            self.sigma = np.maximum(s, 0.0)
            self.gamma = np.maximum(self._inner.apply_diagonal(self.sigma), 0.0)
        else:
            self.sigma = sigma if sigma.ndim == 2 else np.diag(sigma.astype(complex))
            self.gamma = self._inner.apply(self.sigma.astype(complex))
        self._spectra(diag)

    def _check_self_dual(self):
        if isinstance(self.channel, TraceFormChannel):
            return  # trace-form maps are self-adjoint by construction
        if self.channel.local_size ** 2 <= 4096:
            if self.channel.self_adjoint_defect() > SELF_DUAL_TOL:
                raise NotSelfDual(f"channel {self.channel.label} is not self-adjoint")

    def _spectra(self, diag):
        eps = self.support_eps
        if diag:
            self._s_vals, self._s_vecs = self.sigma, None
            self._g_vals, self._g_vecs = self.gamma, None
        else:
            ss, gs = eigh_hermitian(self.sigma), eigh_hermitian(self.gamma)
            self._s_vals, self._s_vecs = ss.eigenvalues, ss.eigenvectors
            self._g_vals, self._g_vecs = gs.eigenvalues, gs.eigenvectors
        if self._s_vals.min() < -1e-9:
            raise NotPositive(f"sigma has eigenvalue {self._s_vals.min():.3e}")
        self._s_keep = self._s_vals > eps
        self._g_keep = self._g_vals > eps

    def defect_weight(self) -> float:
        """Weight of ``G`` below the support threshold."""
        return float(np.sum(np.abs(self._g_vals[~self._g_keep])))

    # -- application -----------------------------------------------------------------

    def apply(self, tau: np.ndarray) -> np.ndarray:
        """Apply to a global operator whose sites include the window."""
        return self._apply(tau, list(self.support))

    def apply_local(self, tau: np.ndarray) -> np.ndarray:
        """Apply to an operator on the window alone, legs in window order."""
        return self._apply(tau, list(range(self.width)))

    def _apply(self, tau, win):
        n, _ = _legs(tau, self.local_dim)
        _check_sites(win, n)
        if self.diagonal:
            return self._apply_exact(tau, win)
        return self._apply_quadrature(tau, win)

    def _ab_tables(self):
        """Spectra of the diagonal references reshaped to ``(D_A, D_B)``."""
        d = self.local_dim
        order = self.a_pos + self.b_pos
        da = d ** len(self.a_pos)

        def table(v):
            return np.transpose(v.reshape((d,) * self.width), order).reshape(da, -1)

        return table(self._g_vals), table(self._s_vals), table(self._g_keep), table(self._s_keep)

    def _adjoint_entries(self):
        """Nonzero entries ``(p, q, x, y, value)`` of the local superoperator of ``E^dag``."""
        da = self._inner.local_size
        s = self.channel.adjoint().superop().reshape(da, da, da, da)
        idx = np.argwhere(np.abs(s) > 1e-15)
        return idx, s[tuple(idx.T)]

    def _apply_exact(self, tau, win):
        d = self.local_dim
        n, t = _legs(tau, d)
        batch = tau.shape[2:]
        a_sites = [win[k] for k in self.a_pos]
        b_sites = [win[k] for k in self.b_pos]
        rest = [s for s in range(n) if s not in win]
        legs = a_sites + b_sites + rest
        perm = legs + [n + s for s in legs] + list(range(2 * n, t.ndim))
        da, db, dr = d ** len(a_sites), d ** len(b_sites), d ** len(rest)
        tt = np.transpose(t, perm).reshape((da, db, dr, da, db, dr) + batch)
        g, s, gk, sk = self._ab_tables()
        lg, ls = _masked_log(g, gk), _masked_log(s, sk)
        gh, sh = _masked_power(g, gk, -0.5), _masked_power(s, sk, 0.5)
        out = np.zeros_like(tt, dtype=complex)
        idx, vals = self._adjoint_entries()
        bshape = (slice(None), None, slice(None), None) + (None,) * len(batch)
        for (p, q, x, y), v in zip(idx, vals):
            om = 0.5 * (lg[x][:, None] - lg[y][None, :] - ls[p][:, None] + ls[q][None, :])
            amp = gh[x][:, None] * gh[y][None, :] * sh[p][:, None] * sh[q][None, :]
            w = v * amp * twirl_fourier(om)  # [x_B, y_B]
            if not np.any(w):
                continue
            out[p, :, :, q] += w[bshape] * tt[x, :, :, y]
        if not np.all(gk):
            red = np.einsum("ab,abiabj...->ij...", (~gk).astype(float), tt)
            dw = da * db
            for a in range(da):
                for b in range(db):
                    out[a, b, :, a, b] += red / dw
        out = out.reshape(tuple(t.shape[k] for k in perm))
        return np.transpose(out, np.argsort(perm)).reshape(tau.shape)

    def _apply_quadrature(self, tau, win):
        d = self.local_dim
        a_sites = [win[k] for k in self.a_pos]
        adj = self.channel.adjoint().relocated(a_sites)
        acc = np.zeros(tau.shape, dtype=complex)
        for t, m in zip(self.quad.nodes, self.quad.masses):
            gl = self._g_power((-1 + 1j * t) / 2)
            gr = self._g_power((-1 - 1j * t) / 2)
            sl = self._s_power((1 - 1j * t) / 2)
            sr = self._s_power((1 + 1j * t) / 2)
            y = apply_right(apply_left(tau, gl, win, d), gr, win, d)
            y = adj.apply(y)
            acc += m * apply_right(apply_left(y, sl, win, d), sr, win, d)
        if not np.all(self._g_keep):
            acc += self._complement(tau, win)
        return acc

    def _power(self, vals, vecs, keep, z):
        p = np.zeros(vals.shape, dtype=complex)
        p[keep] = np.exp(z * np.log(vals[keep]))
        if vecs is None:
            return p
        return (vecs * p) @ vecs.conj().T

    def _g_power(self, z):
        return self._power(self._g_vals, self._g_vecs, self._g_keep, z)

    def _s_power(self, z):
        return self._power(self._s_vals, self._s_vecs, self._s_keep, z)

    def _complement(self, tau, win):
        d = self.local_dim
        q = (~self._g_keep).astype(float)
        if self._g_vecs is not None:
            q = (self._g_vecs * q) @ self._g_vecs.conj().T
        y = apply_right(apply_left(tau, q, win, d), q, win, d)
        n, t = _legs(y, d)
        rest = [s for s in range(n) if s not in win]
        legs = list(win) + rest
        perm = legs + [n + s for s in legs] + list(range(2 * n, t.ndim))
        dw, dr = d ** len(win), d ** len(rest)
        batch = y.shape[2:]
        yt = np.transpose(t, perm).reshape((dw, dr, dw, dr) + batch)
        red = np.einsum("aiaj...->ij...", yt)
        full = np.einsum("ab,ij...->aibj...", np.eye(dw) / dw, red)
        full = full.reshape(tuple(t.shape[k] for k in perm))
        return np.transpose(full, np.argsort(perm)).reshape(tau.shape)

    def apply_diagonal(self, state):
        """Exact action on diagonal inputs, where the twirl phases cancel.

        ``R(w) = s * E^dag(w / G)`` on the window, plus the complement term.
        """
        if not self.diagonal:
            raise InvalidShape("diagonal fast path needs a diagonal reference")
        w = state.weights if isinstance(state, DiagonalState) else np.asarray(state, float)
        d = self.local_dim
        n = round(np.log(w.size) / np.log(d))
        win = list(self.support)
        _check_sites(win, n)
        t = w.reshape((d,) * n)
        y = _act(t, _masked_power(self._g_vals, self._g_keep, -1.0), win, d)
        adj = self.channel.adjoint().relocated(self.a_pos)
        y = _act(y, adj.diagonal_action(), [win[k] for k in self.a_pos], d)
        y = _act(y, np.where(self._s_keep, self._s_vals, 0.0), win, d)
        if not np.all(self._g_keep):
            z = _act(t, (~self._g_keep).astype(float), win, d)
            y = y + z.sum(axis=tuple(win), keepdims=True) / self.local_size
        out = y.ravel()
        if isinstance(state, DiagonalState):
            return DiagonalState(n, d, out)
        return out

    # -- local descriptions ------------------------------------------------------------

    def column_images(self, b):
        D = self.local_size
        if self.diagonal:
            return self.superop().reshape(D, D, D, D)[:, :, :, b].transpose(2, 0, 1)
        basis = np.zeros((D, D, D), dtype=complex)
        basis[np.arange(D), b, np.arange(D)] = 1.0
        return self.apply_local(basis).transpose(2, 0, 1)

    def superop(self):
        if not self.diagonal:
            return LocalChannel.superop(self)
        if getattr(self, "_superop", None) is None:
            D = self.local_size
            j = self.choi_sparse().toarray().reshape(D, D, D, D)  # [x, p, y, q]
            self._superop = j.transpose(1, 3, 0, 2).reshape(D * D, D * D)
        return self._superop

    def relocated(self, support):
        support = list(support)
        moved = self.channel.relocated([support[k] for k in self.a_pos])
        return PetzRecovery(moved, self.sigma, support, self.quad,
                            "exact" if self.diagonal else "quadrature", self.support_eps)

    def _window_index(self, a, b):
        """Window-order basis index of the ``(A, B)`` pair ``(a, b)``."""
        d = self.local_dim
        a, b = np.broadcast_arrays(np.asarray(a), np.asarray(b))
        digits = np.zeros(a.shape + (self.width,), dtype=np.intp)
        for k, pos in enumerate(reversed(self.a_pos)):
            digits[..., pos] = (a // d ** k) % d
        for k, pos in enumerate(reversed(self.b_pos)):
            digits[..., pos] = (b // d ** k) % d
        return digits @ (d ** np.arange(self.width - 1, -1, -1))

    def choi_sparse(self):
        if not self.diagonal:
            return sp.csr_matrix(self.choi())
        g, s, gk, sk = self._ab_tables()
        lg, ls = _masked_log(g, gk), _masked_log(s, sk)
        gh, sh = _masked_power(g, gk, -0.5), _masked_power(s, sk, 0.5)
        D = self.local_size
        db = g.shape[1]
        xb, yb = np.meshgrid(np.arange(db), np.arange(db), indexing="ij")
        rows, cols, data = [], [], []
        idx, vals = self._adjoint_entries()
        for (p, q, x, y), v in zip(idx, vals):
            om = 0.5 * (lg[x][:, None] - lg[y][None, :] - ls[p][:, None] + ls[q][None, :])
            w = v * gh[x][:, None] * gh[y][None, :] * sh[p][:, None] * sh[q][None, :] * twirl_fourier(om)
            ix, iy = self._window_index(x, xb), self._window_index(y, yb)
            ip, iq = self._window_index(p, xb), self._window_index(q, yb)
            rows.append((ix * D + ip).ravel())
            cols.append((iy * D + iq).ravel())
            data.append(w.ravel())
        if not np.all(gk):
            a_idx, b_idx = np.nonzero(~gk)
            i = self._window_index(a_idx, b_idx)
            k = np.arange(D)
            rows.append((i[:, None] * D + k[None, :]).ravel())
            cols.append((i[:, None] * D + k[None, :]).ravel())
            data.append(np.full(i.size * D, 1.0 / D))
        rows, cols, data = map(np.concatenate, (rows, cols, data))
        return sp.csr_matrix((data, (rows, cols)), shape=(D * D, D * D))

    def choi(self):
        return self.choi_sparse().toarray() if self.diagonal else LocalChannel.choi(self)

    def tp_defect(self) -> float:
        """``max |Tr R(|x><y|) - delta_xy|`` over the window basis."""
        if not self.diagonal:
            return LocalChannel.tp_defect(self)
        g, s, gk, sk = self._ab_tables()
        lg = _masked_log(g, gk)
        gh = _masked_power(g, gk, -0.5)
        da = g.shape[0]
        sadj = self.channel.adjoint().superop().reshape(da, da, da, da)
        tr = np.einsum("ppxy,pb->xyb", sadj, np.where(sk, s, 0.0))
        tr = tr * gh[:, None, :] * gh[None, :, :] * twirl_fourier(0.5 * (lg[:, None, :] - lg[None, :, :]))
        tr = tr + np.einsum("xy,xb->xyb", np.eye(da), (~gk).astype(float))
        return float(np.max(np.abs(tr - np.eye(da)[:, :, None])))


def twirled_petz(channel: LocalChannel, sigma, support: Sequence[int],
                 quad: Optional[QuadratureRule] = None, method: str = "auto") -> PetzRecovery:
    """Twirled Petz recovery of ``channel`` for reference ``sigma`` on ``support``."""
    return PetzRecovery(channel, sigma, support, quad, method)


# -- reorganization and recovery circuits -----------------------------------------------

def ring_distance(i: int, j: int, n: int) -> int:
    d = abs(i - j) % n
    return min(d, n - d)


def reorganize(layout: CircuitLayout, r: int, tol: float = 1e-10) -> CircuitLayout:
    """Re-layer a circuit of commuting channels so that channels sharing a
    layer start at least ``max(2r, width)`` sites apart on the ring.

    Channels are visited in their original order and placed first-fit, so
    ``r = 1`` on the two-site circuit returns the even/odd split. When ``2r``
    does not divide the ring evenly the result needs more than ``2r`` layers.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    chans = layout.channels()
    n = layout.n_sites
    for i, a in enumerate(chans):
        for b in chans[i + 1:]:
            if set(a.support) & set(b.support) and commutation_deviation(a, b) > tol:
                raise CannotReorganize(f"{a.label} and {b.label} do not commute")
    width = max((ch.width for ch in chans), default=1)
    sep = max(2 * r, width)
    layers = _first_fit_layers(
        chans, lambda a, b: ring_distance(a.support[0], b.support[0], n) >= sep)
    for layer in layers:
        layer.sort(key=lambda ch: ch.support[0])
    return CircuitLayout(layers, n, dict(layout.meta, r=r, order="ascending"))


def recovery_window(channel: LocalChannel, r: int, n_sites: int) -> List[int]:
    """Sites of ``A`` plus ``r`` collar sites on either side, in ring order."""
    width = channel.width + 2 * r
    if width > n_sites:
        raise RadiusTooLarge(f"window of {width} sites exceeds the ring of {n_sites}")
    start = channel.support[0] - r
    return [(start + k) % n_sites for k in range(width)]


@dataclass
class RecoveryPlan:
    lam: float
    which: str
    r: int
    base_layout: CircuitLayout
    staggered_layout: CircuitLayout
    recovery_channels: List[Tuple[int, int, PetzRecovery]]
    fixed_point: DiagonalState = field(repr=False)

    @property
    def n_sites(self) -> int:
        return self.base_layout.n_sites


def build_recovery(lam: float, n_sites: int, r: int, which: Optional[str] = None,
                   quad: Optional[QuadratureRule] = None, seed: int = 0) -> RecoveryPlan:
    """Prefix states along the staggered order and one Petz map per channel."""
    which = check_branch(lam, which or default_branch(lam))
    base = circuit_for(which, n_sites)
    for ch in base.channels():
        recovery_window(ch, r, n_sites)
    stag = reorganize(base, r)
    lam_state = lambda_state(lam, n_sites, seed).state
    state = lam_state
    rec = []
    for li, layer in enumerate(stag.layers):
        for xi, ch in enumerate(layer):
            window = recovery_window(ch, r, n_sites)
            rec.append((li, xi, PetzRecovery(ch, state.marginal(window).weights, window, quad)))
            state = ch.apply_diagonal(state)
    return RecoveryPlan(lam, which, r, base, stag, rec, lam_state)


def apply_recovery(plan: RecoveryPlan, state):
    """Apply the recovery channels in reverse staggered order."""
    out = state
    for _, _, rc in reversed(plan.recovery_channels):
        out = rc.apply_diagonal(out) if isinstance(out, DiagonalState) else rc.apply(out)
    return out


@dataclass(frozen=True)
class RecoveryError:
    eps_diag: float
    eps_full: float
    bound_ok: bool
    image_deviation: float


def recovery_error(plan: RecoveryPlan, full: bool = True) -> RecoveryError:
    """``eps_diag = ||R E(Lambda) - Lambda||_1`` and ``eps_full = ||R(E(rho)) - rho||_1``.

    ``image_deviation`` is ``||E(rho) - rho_fix||_1`` for the fixed-point image
    of the branch. ``bound_ok`` tests ``eps_full <= 2 eps_diag + 1e-9``.
    """
    lam_state = plan.fixed_point
    img = circuit_apply(plan.base_layout, lam_state)
    eps_diag = float(np.abs(apply_recovery(plan, img).weights - lam_state.weights).sum())
    eps_full = dev = float("nan")
    if full:
        n = plan.n_sites
        rho = build_rho(plan.lam, n, plan.which, state=lam_state)
        image = circuit_apply(plan.base_layout, rho)
        fix = build_rho(1.0 if plan.which == "trivial" else -1.0, n, plan.which,
                        state=DiagonalState.uniform(n))
        dev = trace_norm(image - fix)
        eps_full = trace_norm(apply_recovery(plan, image) - rho)
    ok = bool(np.isnan(eps_full) or eps_full <= 2 * eps_diag + 1e-9)
    return RecoveryError(eps_diag, float(eps_full), ok, float(dev))


def recovery_choi_report(plan: RecoveryPlan, max_sites: int = CHOI_MAX_SITES) -> List[dict]:
    """Choi minimum eigenvalue and TP defect for every recovery channel.

    Windows wider than ``max_sites`` report ``nan`` for the eigenvalue.
    """
    out = []
    for li, xi, rc in plan.recovery_channels:
        eig = choi_min_eigenvalue(rc) if rc.width <= max_sites else float("nan")
        out.append({"layer": li, "index": xi, "support": list(rc.support),
                    "tp_defect": rc.tp_defect(), "choi_min_eigenvalue": eig})
    return out


def fit_xi(radii: Sequence[int], eps: Sequence[float]) -> float:
    """``-1 / slope`` of ``ln eps`` against ``r``; ``nan`` with fewer than two usable points."""
    r = np.asarray(radii, float)
    e = np.asarray(eps, float)
    keep = e > 1e-14
    if keep.sum() < 2:
        return float("nan")
    slope = np.polyfit(r[keep], np.log(e[keep]), 1)[0]
    return float(-1.0 / slope) if slope < 0 else float("inf")
