"""Local channels, depth-2 circuits and their certification."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import InvalidShape, LayoutError
from .lattice import (I2, PAULI_X, PAULI_Z, MonomialOperator, basis_digits, czx_operator,
                      digits_to_index)
from .tensor_core import DiagonalState, _act, _check_sites, _legs, apply_superop, kron_all

DENSE_CHOI_MAX = 1024


class LocalChannel:
    """Linear map acting on a contiguous window of a ring of qudits.

    Subclasses provide :meth:`column_images`; everything else (dense
    superoperator, Choi matrix, application to global operators) derives
    from it or is overridden for speed.
    """

    def __init__(self, support: Sequence[int], local_dim: int = 2, label: str = ""):
        self.support = tuple(int(s) for s in support)
        self.local_dim = local_dim
        self.label = label
        if len(set(self.support)) != len(self.support):
            raise InvalidShape(f"repeated site in support {self.support}")

    @property
    def width(self) -> int:
        return len(self.support)

    @property
    def local_size(self) -> int:
        return self.local_dim ** self.width

    def column_images(self, b: int) -> np.ndarray:
        """``out[x] = E(|x><b|)`` for every local ``x``: shape ``(D, D, D)``."""
        raise NotImplementedError

    def superop(self) -> np.ndarray:
        """Dense ``D^2 x D^2`` matrix on row-major vectorized local operators."""
        D = self.local_size
        s = np.empty((D, D, D, D), dtype=complex)  # [p, q, x, b]
        for b in range(D):
            s[:, :, :, b] = self.column_images(b).transpose(1, 2, 0)
        return s.reshape(D * D, D * D)

    def apply(self, tau: np.ndarray) -> np.ndarray:
        """Apply to a global operator (trailing batch axes allowed)."""
        return apply_superop(tau, self.superop(), self.support, self.local_dim)

    def relocated(self, support: Sequence[int]) -> "LocalChannel":
        """Same local action placed on other sites."""
        return SuperopChannel(support, self.superop(), self.local_dim, self.label)

    def sharp(self) -> "LocalChannel":
        """``X -> E(X^dagger)^dagger``; equal to ``E`` for Hermiticity-preserving maps."""
        D = self.local_size
        s = self.superop().reshape(D, D, D, D)
        return SuperopChannel(self.support, s.transpose(1, 0, 3, 2).conj().reshape(D * D, D * D),
                              self.local_dim, self.label)

    def adjoint(self) -> "LocalChannel":
        return SuperopChannel(self.support, self.superop().conj().T, self.local_dim, self.label)

    def self_adjoint_defect(self) -> float:
        s = self.superop()
        return float(np.max(np.abs(s - s.conj().T)))

    def choi(self) -> np.ndarray:
        """``J = sum_ij |i><j| (x) E(|i><j|)``."""
        D = self.local_size
        s = self.superop().reshape(D, D, D, D)  # [k, l, i, j]
        return s.transpose(2, 0, 3, 1).reshape(D * D, D * D)

    def choi_sparse(self):
        return sp.csr_matrix(self.choi())

    def tp_defect(self) -> float:
        """Largest entry of ``Tr_out J - 1``."""
        D = self.local_size
        j = self.choi().reshape(D, D, D, D)
        return float(np.max(np.abs(np.einsum("ikjk->ij", j) - np.eye(D))))

    def choi_min_eigenvalue(self) -> float:
        return choi_min_eigenvalue(self)

    def preserves_diagonal(self, tol: float = 1e-14) -> bool:
        D = self.local_size
        for b in range(D):
            img = self.column_images(b)[b]
            if np.max(np.abs(img - np.diag(np.diag(img)))) > tol:
                return False
        return True

    def diagonal_action(self) -> np.ndarray:
        """``M[p, b] = <p|E(|b><b|)|p>``, valid when diagonals map to diagonals."""
        D = self.local_size
        m = np.empty((D, D))
        for b in range(D):
            img = self.column_images(b)[b]
            off = img - np.diag(np.diag(img))
            if np.max(np.abs(off), initial=0.0) > 1e-12:
                raise InvalidShape("channel does not preserve diagonal operators")
            m[:, b] = np.diag(img).real
        return m

    def apply_diagonal(self, state):
        """Apply to a :class:`DiagonalState` (or weight vector) exactly."""
        w = state.weights if isinstance(state, DiagonalState) else np.asarray(state, float)
        d = self.local_dim
        n = round(np.log(w.size) / np.log(d))
        _check_sites(list(self.support), n)
        t = _act(w.reshape((d,) * n), self.diagonal_action(), list(self.support), d).ravel()
        if isinstance(state, DiagonalState):
            return DiagonalState(n, d, t)
        return t


class SuperopChannel(LocalChannel):
    """Channel given by an explicit local superoperator."""

    def __init__(self, support, superop, local_dim=2, label=""):
        super().__init__(support, local_dim, label)
        D = self.local_size
        superop = np.asarray(superop, dtype=complex)
        if superop.shape != (D * D, D * D):
            raise InvalidShape(f"superoperator shape {superop.shape} does not fit {self.width} sites")
        self._superop = superop

    def superop(self):
        return self._superop

    def column_images(self, b):
        D = self.local_size
        s = self._superop.reshape(D, D, D, D)
        return s[:, :, :, b].transpose(2, 0, 1)

    def relocated(self, support):
        return SuperopChannel(support, self._superop, self.local_dim, self.label)


class TraceFormChannel(LocalChannel):
    """``tau -> (1/c) sum_m Tr(B_m^dagger tau) B_m`` on ``support``."""

    def __init__(self, support, ops, norm: float, local_dim: int = 2, label: str = ""):
        super().__init__(support, local_dim, label)
        D = self.local_size
        ops = np.asarray([np.asarray(b, dtype=complex) for b in ops])
        if ops.ndim != 3 or ops.shape[1:] != (D, D):
            raise InvalidShape(f"operators must be {D}x{D}")
        if not norm > 0:
            raise InvalidShape("normalization must be positive")
        self.ops = ops
        self.norm = float(norm)

    def column_images(self, b):
        # E(|x><b|) = (1/c) sum_m conj(B_m[x, b]) B_m
        return np.einsum("mx,mpq->xpq", self.ops[:, :, b].conj(), self.ops) / self.norm

    def superop(self):
        v = self.ops.reshape(len(self.ops), -1)
        return (v.T @ v.conj()) / self.norm

    def apply(self, tau):
        d, k = self.local_dim, self.width
        n, t = _legs(tau, d)
        _check_sites(list(self.support), n)
        axes = list(self.support) + [n + s for s in self.support]
        bt = self.ops.reshape((len(self.ops),) + (d,) * (2 * k))
        coeff = np.tensordot(bt.conj(), t, axes=(list(range(1, 2 * k + 1)), axes))
        out = np.tensordot(bt, coeff, axes=(0, 0)) / self.norm
        return np.moveaxis(out, list(range(2 * k)), axes).reshape(tau.shape)

    def relocated(self, support):
        return TraceFormChannel(support, self.ops, self.norm, self.local_dim, self.label)

    def adjoint(self):
        # <X, E(Y)> = (1/c) sum_m Tr(B_m^dag Y) conj(Tr(B_m^dag X)): the map is self-adjoint
        return self

    def sharp(self):
        return TraceFormChannel(self.support, self.ops.conj().transpose(0, 2, 1), self.norm,
                                self.local_dim, self.label)

    def choi_sparse(self):
        j = None
        for b in self.ops:
            bs = sp.csr_matrix(b)
            term = sp.kron(bs.conj(), bs, format="csr")
            j = term if j is None else j + term
        return (j / self.norm).tocsr()

    def tp_defect(self):
        tr_out = np.einsum("mij,m->ij", self.ops.conj(), np.trace(self.ops, axis1=1, axis2=2))
        return float(np.max(np.abs(tr_out / self.norm - np.eye(self.local_size))))


def choi_min_eigenvalue(channel: LocalChannel) -> float:
    """Smallest Choi eigenvalue.

    Large Choi matrices are split into the connected blocks of their
    sparsity pattern first, which is exact.
    """
    if channel.local_size ** 2 <= DENSE_CHOI_MAX:
        j = channel.choi()
        return float(np.linalg.eigvalsh(0.5 * (j + j.conj().T))[0])
    j = channel.choi_sparse()
    j = 0.5 * (j + j.conj().T)
    j.data[np.abs(j.data) < 1e-15] = 0
    j.eliminate_zeros()
    n_blocks, labels = connected_components(abs(j) > 0, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n_blocks + 1))
    jc = j[order][:, order].tocsr()
    best = np.inf
    for k in range(n_blocks):
        lo, hi = bounds[k], bounds[k + 1]
        block = jc[lo:hi, lo:hi].toarray()
        best = min(best, float(np.linalg.eigvalsh(block)[0]))
    return best


# -- concrete channels ---------------------------------------------------------------

def _window(start: int, width: int, n_sites: int):
    if width > n_sites:
        raise InvalidShape(f"window of width {width} does not fit {n_sites} sites")
    return [(start + k) % n_sites for k in range(width)]


def trivial_local_channel(i: int, n_sites: int) -> TraceFormChannel:
    """Two-site channel onto ``span{II, XX}`` on sites ``i, i+1``."""
    ops = [np.eye(4), np.kron(PAULI_X, PAULI_X)]
    return TraceFormChannel(_window(i, 2, n_sites), ops, 4.0, label=f"E_{i}")


def czx_local_ops() -> List[np.ndarray]:
    """``B_1 .. B_8``: Z strings on the window ends, bare and times the 4-site CZX ring."""
    z_ops = [kron_all([I2, I2, I2, I2]), kron_all([PAULI_Z, I2, I2, I2]),
             kron_all([I2, I2, I2, PAULI_Z]), kron_all([PAULI_Z, I2, I2, PAULI_Z])]
    c4 = czx_operator(4)
    return z_ops + [c4 @ b for b in z_ops]


def czx_local_channel(i: int, n_sites: int) -> TraceFormChannel:
    """Four-site channel ``(1/16) sum_m Tr(B_m^dag tau) B_m`` on sites ``i .. i+3``."""
    return TraceFormChannel(_window(i, 4, n_sites), czx_local_ops(), 16.0, label=f"Et_{i}")


def identity_channel(support: Sequence[int], local_dim: int = 2) -> SuperopChannel:
    D = local_dim ** len(support)
    return SuperopChannel(support, np.eye(D * D), local_dim, "id")


def depolarizing_channel(support: Sequence[int], p: float, local_dim: int = 2) -> SuperopChannel:
    """``(1 - p) tau + p Tr_support(tau) (x) 1/D``."""
    D = local_dim ** len(support)
    vec_id = np.eye(D).ravel()
    s = (1 - p) * np.eye(D * D) + p * np.outer(vec_id, vec_id) / D
    return SuperopChannel(support, s, local_dim, f"dep({p})")


def kraus_channel(support: Sequence[int], kraus: Iterable[np.ndarray], local_dim: int = 2) -> SuperopChannel:
    """``tau -> sum_k K tau K^dagger``."""
    kraus = list(kraus)
    D = kraus[0].shape[0]
    s = sum(np.kron(k, k.conj()) for k in kraus)
    return SuperopChannel(support, s.reshape(D * D, D * D), local_dim, "kraus")


def amplitude_damping_channel(support: Sequence[int], gamma: float) -> SuperopChannel:
    """Independent qubit amplitude damping on every site of ``support``.

    Unlike depolarizing noise it is not unital, so it fails to commute with
    the trace-form channels and serves as a negative control.
    """
    k0 = np.array([[1, 0], [0, np.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex)
    kraus = [kron_all(ks) for ks in itertools.product([k0, k1], repeat=len(support))]
    return kraus_channel(support, kraus)


# -- circuits --------------------------------------------------------------------------

def _is_ring_interval(sites: Sequence[int], n_sites: int) -> bool:
    k = len(sites)
    if k >= n_sites:
        return len(set(sites)) == n_sites
    return any(list(sites) == [(s + j) % n_sites for j in range(k)] for s in [sites[0]])


@dataclass
class CircuitLayout:
    """Ordered layers of local channels on a ring of ``n_sites``."""

    layers: List[List[LocalChannel]]
    n_sites: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for li, layer in enumerate(self.layers):
            used = set()
            for ch in layer:
                if any(not 0 <= s < self.n_sites for s in ch.support):
                    raise LayoutError(f"layer {li}: support {ch.support} outside the ring")
                if not _is_ring_interval(ch.support, self.n_sites):
                    raise LayoutError(f"layer {li}: support {ch.support} is not an interval")
                if used & set(ch.support):
                    raise LayoutError(f"layer {li}: overlapping supports")
                used |= set(ch.support)

    def channels(self) -> List[LocalChannel]:
        return [ch for layer in self.layers for ch in layer]

    @property
    def depth(self) -> int:
        return len(self.layers)


def _first_fit_layers(channels: Sequence[LocalChannel], fits) -> List[List[LocalChannel]]:
    layers: List[List[LocalChannel]] = []
    for ch in channels:
        for layer in layers:
            if all(fits(ch, other) for other in layer):
                layer.append(ch)
                break
        else:
            layers.append([ch])
    return layers


def trivial_circuit(n_sites: int) -> CircuitLayout:
    """``E = E_even-layer o E_odd-layer`` with two-site channels."""
    if n_sites % 2 or n_sites < 4:
        raise InvalidShape(f"circuits need even N >= 4, got {n_sites}")
    first = [trivial_local_channel(i, n_sites) for i in range(0, n_sites, 2)]
    second = [trivial_local_channel(i, n_sites) for i in range(1, n_sites, 2)]
    return CircuitLayout([first, second], n_sites, {"which": "trivial"})


def czx_circuit(n_sites: int) -> CircuitLayout:
    """Four-site channels on every other site, packed into disjoint layers."""
    if n_sites % 2 or n_sites < 4:
        raise InvalidShape(f"circuits need even N >= 4, got {n_sites}")
    chans = [czx_local_channel(i, n_sites) for i in range(0, n_sites, 2)]
    if n_sites == 4:
        layers = [[ch] for ch in chans]
    else:
        layers = _first_fit_layers(chans, lambda a, b: not set(a.support) & set(b.support))
    return CircuitLayout(layers, n_sites, {"which": "nontrivial"})


def circuit_for(which: str, n_sites: int) -> CircuitLayout:
    if which == "trivial":
        return trivial_circuit(n_sites)
    if which == "nontrivial":
        return czx_circuit(n_sites)
    raise ValueError(f"unknown circuit {which!r}")


def circuit_apply(layout: CircuitLayout, state):
    """Apply the layers in order to a dense operator or a :class:`DiagonalState`."""
    out = state
    for ch in layout.channels():
        if isinstance(out, DiagonalState):
            out = ch.apply_diagonal(out)
        else:
            out = ch.apply(out)
    return out


def circuit_choi_report(layout: CircuitLayout) -> dict:
    """Choi minimum eigenvalue and TP defect of every distinct local channel.

    A composition of CPTP maps is CPTP, so certifying the local pieces
    certifies the circuit.
    """
    min_eig, tp = np.inf, 0.0
    seen = {}
    for ch in layout.channels():
        key = ch.label.split("_")[0]
        if key not in seen:
            seen[key] = (choi_min_eigenvalue(ch), ch.tp_defect())
        min_eig = min(min_eig, seen[key][0])
        tp = max(tp, seen[key][1])
    return {"choi_min_eigenvalue": float(min_eig), "tp_defect": float(tp)}


# -- symmetry and commutation ---------------------------------------------------------

def symmetry_deviation(channel: LocalChannel, u, n_sites: int, side: str = "left",
                       chunk: int = 256) -> float:
    """``max_ab || U E(E_ab) - E(U E_ab) ||_F`` over matrix units ``E_ab``.

    ``side='right'`` uses ``E(tau) U - E(tau U)``. ``u`` may be a
    :class:`MonomialOperator` (exact sweep over the full basis at any size)
    or a dense matrix (small systems only).
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if not isinstance(u, MonomialOperator):
        return _dense_symmetry_deviation(channel, np.asarray(u, dtype=complex), n_sites, side)
    if side == "right":
        return symmetry_deviation(channel.sharp(), u.dagger(), n_sites, "left", chunk)
    d = channel.local_dim
    D = channel.local_size
    sup = list(channel.support)
    rest = [s for s in range(n_sites) if s not in sup]
    dig = basis_digits(n_sites, d)
    a_idx = digits_to_index(dig[:, sup], d)
    r_idx = digits_to_index(dig[:, rest], d) if rest else np.zeros(d ** n_sites, dtype=np.intp)
    glob = np.empty((D, d ** len(rest)), dtype=np.intp)
    glob[a_idx, r_idx] = np.arange(d ** n_sites)
    perm, phase = u.perm, u.phase
    blocks = []
    for lo in range(0, d ** n_sites, chunk):
        a = np.arange(lo, min(lo + chunk, d ** n_sites))
        src = glob[:, r_idx[a]].T  # [a, p] -> global index of (p, a_R)
        rows1 = perm[src]
        match = r_idx[rows1] == r_idx[perm[a]][:, None]
        sel_a, sel_p = np.nonzero(match)
        blocks.append((a, phase[src], match, sel_a, sel_p, a_idx[rows1[sel_a, sel_p]]))
    worst = 0.0
    for b in range(D):
        img = channel.column_images(b)  # [x, p, q]
        for a, u1, match, sel_a, sel_p, target in blocks:
            c1 = img[a_idx[a]] * u1[:, :, None]
            diff = phase[a][:, None, None] * img[a_idx[perm[a]]]
            diff[sel_a, target] -= c1[sel_a, sel_p]
            dev = np.sum(np.abs(diff) ** 2, axis=(1, 2))
            stray = np.where(match[:, :, None], 0.0, np.abs(c1) ** 2).sum(axis=(1, 2))
            worst = max(worst, float((dev + stray).max()))
    return float(np.sqrt(worst))


def _dense_symmetry_deviation(channel, u, n_sites, side):
    dim = channel.local_dim ** n_sites
    if dim > 64:
        raise InvalidShape("dense symmetry check limited to 64-dimensional systems")
    worst = 0.0
    for a in range(dim):
        batch = np.zeros((dim, dim, dim), dtype=complex)
        batch[a, np.arange(dim), np.arange(dim)] = 1.0  # E_ab for all b
        ut = np.einsum("ij,jkb->ikb", u, batch) if side == "left" else np.einsum("ijb,jk->ikb", batch, u)
        lhs = channel.apply(batch)
        lhs = np.einsum("ij,jkb->ikb", u, lhs) if side == "left" else np.einsum("ijb,jk->ikb", lhs, u)
        diff = lhs - channel.apply(ut)
        worst = max(worst, float(np.max(np.linalg.norm(diff.reshape(dim * dim, dim), axis=0))))
    return worst


def commutation_deviation(ch1: LocalChannel, ch2: LocalChannel, chunk: int = 512) -> float:
    """``max_ab || E1 E2 (E_ab) - E2 E1 (E_ab) ||_F`` over the joint support."""
    if ch1.local_dim != ch2.local_dim:
        raise InvalidShape("channels act on different local dimensions")
    joint = sorted(set(ch1.support) | set(ch2.support))
    pos = {s: k for k, s in enumerate(joint)}
    a = ch1.relocated([pos[s] for s in ch1.support])
    b = ch2.relocated([pos[s] for s in ch2.support])
    D = ch1.local_dim ** len(joint)
    worst = 0.0
    for start in range(0, D * D, chunk):
        idx = np.arange(start, min(start + chunk, D * D))
        batch = np.zeros((D, D, idx.size), dtype=complex)
        batch[idx // D, idx % D, np.arange(idx.size)] = 1.0
        diff = a.apply(b.apply(batch)) - b.apply(a.apply(batch))
        worst = max(worst, float(np.max(np.linalg.norm(diff.reshape(D * D, -1), axis=0))))
    return worst
