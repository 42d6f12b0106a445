"""Transfer tensors, the fixed point Lambda(lam) and branch states rho(lam).

Two independent constructions of the matrix product CP map are provided:

* :func:`build_kernel` is the compact kernel ``E = E1 (+) E2``. It uses bond
  ``(top spin, bottom spin)`` and the CZX MPO for the ``lam < 0`` branch.
* :func:`transfer_from_peps` builds the plaquette PEPS tensor ``A(lam)`` and
  its double layer ``E~ = sum_I A (x) conj(A)``. Redundant legs shared by
  neighbouring plaquettes are then identified.

The superoperators use row-major vectorization: ``vec(tau)[k * D + b] =
tau[k, b]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import (BranchMismatch, DegenerateFixedPoint, InvalidShape, NoConvergence,
                     OutOfRange, ScaleTooLarge)
from .lattice import (PAULI_X, MPOTensor, MonomialOperator, czx_monomial, czx_mpo,
                      mpo_contract, x_string)
from .tensor_core import DiagonalState

SPECIAL = ((0, 0, 1, 1), (1, 1, 0, 0), (0, 1, 0, 1), (1, 0, 1, 0))
BRANCHES = ("trivial", "nontrivial")
MAX_SITES = 14
DENSE_GAP_MAX = 10


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not -1.0 <= lam <= 1.0:
        raise OutOfRange(f"lambda = {lam} outside [-1, 1]")
    return lam


def default_branch(lam: float) -> str:
    return "nontrivial" if lam < 0 else "trivial"


def check_branch(lam: float, branch: str) -> str:
    if branch not in BRANCHES:
        raise BranchMismatch(f"unknown branch {branch!r}")
    if (lam > 0 and branch == "nontrivial") or (lam < 0 and branch == "trivial"):
        raise BranchMismatch(f"branch {branch!r} is not defined for lambda = {lam}")
    return branch


@dataclass(frozen=True)
class ODTensor:
    """Plaquette weight with index order (top-left, top-right, bottom-left, bottom-right)."""

    lam: float
    entries: np.ndarray = field(repr=False)


def build_od(lam: float) -> ODTensor:
    lam = _check_lambda(lam)
    e = np.ones((2, 2, 2, 2))
    for idx in SPECIAL:
        e[idx] = lam * lam
    e.setflags(write=False)
    return ODTensor(lam, e)


# -- compact kernel ---------------------------------------------------------------

@dataclass(frozen=True)
class TransferKernel:
    """Local tensors with legs ``(ket_out, bra_out, ket_in, bra_in, bond_left, bond_right)``."""

    lam: float
    branch: str
    e1: np.ndarray = field(repr=False)
    e2: np.ndarray = field(repr=False)

    def part(self, which: str) -> np.ndarray:
        return {"t1": self.e1, "t2": self.e2}[which]


def build_kernel(lam: float, branch: Optional[str] = None) -> TransferKernel:
    """Compact kernel.

    ``E1`` copies the right corner spin of each plaquette onto both the ket
    and the bra legs; the bond carries (top, bottom) spins of the left
    corner. ``E2`` dresses ``E1`` with ``X`` (trivial branch) or with the
    CZX MPO (nontrivial branch). In the nontrivial branch the output side
    uses ``CZX`` and the input side uses its transpose, so that
    ``T2[tau] = CZX T1[CZX^T tau]``.
    """
    lam = _check_lambda(lam)
    branch = check_branch(lam, branch or default_branch(lam))
    od = build_od(lam).entries
    e1 = np.zeros((2, 2, 2, 2, 4, 4))
    for a, b, ap, bp in itertools.product(range(2), repeat=4):
        e1[b, b, bp, bp, 2 * a + ap, 2 * b + bp] = od[a, b, ap, bp]
    if branch == "trivial":
        x = PAULI_X.real
        e2 = np.einsum("ik,kjlmLR,ln->ijnmLR", x, e1, x)
    else:
        c = czx_mpo().entries.real  # (a, out, in, b)
        # top: out i <- in k via C[a, i, k, b]; bottom: C[c, i', k', e] feeds k'
        e2 = np.einsum("aikb,kjlmLR,cnle->ijnmLacRbe", c, e1, c).reshape(2, 2, 2, 2, 16, 16)
    e1.setflags(write=False)
    e2.setflags(write=False)
    return TransferKernel(lam, branch, e1, e2)


def _interleaved_to_superop(m: np.ndarray, n_sites: int, d: int = 2) -> np.ndarray:
    """Reorder per-site (ket, bra) pairs into row-major superoperator indices."""
    t = m.reshape((d, d) * (2 * n_sites))
    out_k = list(range(0, 2 * n_sites, 2))
    out_b = list(range(1, 2 * n_sites, 2))
    in_k = [2 * n_sites + x for x in out_k]
    in_b = [2 * n_sites + x for x in out_b]
    D = d ** n_sites
    return t.transpose(out_k + out_b + in_k + in_b).reshape(D * D, D * D)


def kernel_superoperator(kernel: TransferKernel, n_sites: int, part: str = "full") -> np.ndarray:
    """Dense superoperator of the CP map generated on a ring of ``n_sites``."""
    if part == "full":
        return (kernel_superoperator(kernel, n_sites, "t1")
                + kernel_superoperator(kernel, n_sites, "t2"))
    e = kernel.part(part)
    D = e.shape[4]
    w = MPOTensor(e.transpose(4, 0, 1, 2, 3, 5).reshape(D, 4, 4, D))
    return _interleaved_to_superop(mpo_contract(w, n_sites), n_sites)


def diagonal_mpo(kernel: TransferKernel) -> np.ndarray:
    """``W[L, s, s', R] = e1[s, s, s', s', L, R]``: T1 restricted to diagonals."""
    e = kernel.e1
    idx = np.arange(2)
    return np.ascontiguousarray(e[idx[:, None], idx[:, None], idx[None, :], idx[None, :]]
                                .transpose(2, 0, 1, 3))


def dense_t1_restricted(kernel: TransferKernel, n_sites: int) -> np.ndarray:
    """``2**n x 2**n`` real matrix of T1 acting on diagonal operators."""
    return mpo_contract(MPOTensor(diagonal_mpo(kernel)), n_sites).real


def apply_t1_diagonal(kernel: TransferKernel, v) -> np.ndarray:
    """Matrix-free ``T1`` on a diagonal state; returns the unnormalized weights."""
    w = v.weights if isinstance(v, DiagonalState) else np.asarray(v, dtype=float)
    dim = w.size
    n = dim.bit_length() - 1
    if w.ndim != 1 or 2 ** n != dim or n < 1:
        raise InvalidShape(f"vector length {dim} is not a power of two")
    mpo = diagonal_mpo(kernel)
    D = mpo.shape[0]
    # x[a0, a, outs, ins]: a0 is the open left bond closed by the final trace
    x = np.broadcast_to(np.eye(D)[:, :, None, None], (D, D, 1, dim)).copy()
    x = x * w[None, None, None, :]
    for _ in range(n):
        rest = x.shape[3] // 2
        x = x.reshape(D, D, x.shape[2], 2, rest)
        x = np.einsum("aLpxq,Lyxb->abpyq", x, mpo)
        x = x.reshape(D, D, -1, rest)
    return np.einsum("aapq->p", x)


@dataclass(frozen=True)
class FixedPointResult:
    state: DiagonalState
    leading_eigenvalue: float
    spectral_gap: float
    iterations: int
    residual: float


def fixed_point(kernel: TransferKernel, n_sites: int, tol: float = 1e-12,
                max_iter: int = 100_000, seed: int = 0) -> FixedPointResult:
    """Leading eigenvector of T1 on diagonal states by power iteration.

    The spectral gap ``1 - |e2| / e1`` comes from a dense eigensolve up to
    10 sites and from Lanczos above that.
    """
    if n_sites > MAX_SITES:
        raise ScaleTooLarge(f"exact fixed point limited to N <= {MAX_SITES}, got {n_sites}")
    if n_sites < 4 or n_sites % 2:
        raise InvalidShape(f"fixed point needs even N >= 4, got {n_sites}")
    dim = 2 ** n_sites
    rng = np.random.default_rng(seed)
    v = 1.0 + 1e-3 * rng.random(dim)
    v /= v.sum()
    e1 = 0.0
    for it in range(1, max_iter + 1):
        w = apply_t1_diagonal(kernel, v)
        e1 = w.sum()
        w /= e1
        diff = np.abs(w - v).sum()
        v = w
        if diff < tol:
            break
    else:
        raise NoConvergence(f"power iteration did not reach {tol} in {max_iter} steps")
    tv = apply_t1_diagonal(kernel, v)
    e1 = float(tv.sum())
    residual = float(np.abs(tv / e1 - v).sum())
    gap = _spectral_gap(kernel, n_sites, e1, rng)
    if gap < 1e-8:
        raise DegenerateFixedPoint(f"spectral gap {gap:.3e} too small")
    return FixedPointResult(DiagonalState(n_sites, 2, v), e1, gap, it, residual)


def _spectral_gap(kernel, n_sites, e1, rng):
    if n_sites <= DENSE_GAP_MAX:
        vals = np.linalg.eigvalsh(dense_t1_restricted(kernel, n_sites))
        mags = np.sort(np.abs(vals))[::-1]
        if abs(mags[0] - e1) > 1e-8 * e1:
            raise NoConvergence("power iteration did not reach the dominant eigenvalue")
    else:
        dim = 2 ** n_sites
        op = LinearOperator((dim, dim), matvec=lambda x: apply_t1_diagonal(kernel, x.ravel()),
                            dtype=float)
        # a generic start vector; a symmetric one never leaves its symmetry sector
        vals = eigsh(op, k=3, which="LM", return_eigenvectors=False, tol=1e-10,
                     v0=rng.standard_normal(dim))
        mags = np.sort(np.abs(vals))[::-1]
    return float(1.0 - mags[1] / mags[0])


@lru_cache(maxsize=64)
def _cached_fixed_point(lam_abs: float, n_sites: int, seed: int) -> FixedPointResult:
    return fixed_point(build_kernel(lam_abs), n_sites, seed=seed)


def lambda_state(lam: float, n_sites: int, seed: int = 0) -> FixedPointResult:
    """Cached fixed point. ``T1`` depends on ``lam**2`` only, so both signs share it."""
    lam = _check_lambda(lam)
    return _cached_fixed_point(abs(lam), n_sites, seed)


def branch_symmetry(branch: str, n_sites: int) -> MonomialOperator:
    """``X^N`` for the trivial branch and ``CZX`` for the nontrivial one."""
    return x_string(n_sites) if branch == "trivial" else czx_monomial(n_sites)


def build_rho(lam: float, n_sites: int, branch: Optional[str] = None,
              state: Optional[DiagonalState] = None, seed: int = 0) -> np.ndarray:
    """Dense ``(1 + U) Lambda`` with ``U`` the branch symmetry."""
    lam = _check_lambda(lam)
    branch = check_branch(lam, branch or default_branch(lam))
    if state is None:
        state = lambda_state(lam, n_sites, seed).state
    if state.n_sites != n_sites:
        raise InvalidShape("fixed point size does not match n_sites")
    u = branch_symmetry(branch, n_sites)
    w = state.weights
    dim = w.size
    rho = np.zeros((dim, dim), dtype=complex)
    idx = np.arange(dim)
    rho[idx, idx] = w
    rho[u.perm, idx] += u.phase * w
    return rho


# -- PEPS oracle -----------------------------------------------------------------

@dataclass(frozen=True)
class PepsTensor:
    """Plaquette amplitudes ``amp[a, b, a', b']`` and domain-wall tensor ``dwall[I, x, y]``."""

    lam: float
    amp: np.ndarray = field(repr=False)
    dwall: np.ndarray = field(repr=False)

    def plaquette(self) -> np.ndarray:
        """``A0[I1, I2, I3, I4, a, b, a', b']`` with edges left, top, right, bottom."""
        D = self.dwall
        return np.einsum("pqrs,Ipr,Jpq,Kqs,Lrs->IJKLpqrs", self.amp, D, D, D, D)

    def site_tensor(self) -> np.ndarray:
        """``A[I1..I4, i1, i2, i1', i2', a1, a2, b1, b2]`` with copy deltas."""
        delta = np.zeros((2, 2, 2))
        delta[0, 0, 0] = delta[1, 1, 1] = 1.0
        return np.einsum("IJKLpqrs,wxp,yzq,uvr,mns->IJKLwyumxvzn",
                         self.plaquette(), delta, delta, delta, delta)


def build_peps(lam: float) -> PepsTensor:
    lam = _check_lambda(lam)
    amp = np.ones((2, 2, 2, 2))
    amp[0, 0, 1, 1] = amp[0, 1, 0, 1] = lam
    amp[1, 1, 0, 0] = amp[1, 0, 1, 0] = abs(lam)
    dwall = np.zeros((2, 2, 2))
    dwall[1, 1, 0] = dwall[1, 0, 1] = dwall[0, 0, 0] = dwall[0, 1, 1] = 1.0
    return PepsTensor(lam, amp, dwall)


def d0_matrix(lam: float) -> np.ndarray:
    """``1 - (1 - lam^2)`` times the projector onto 0011, 1100, 0101, 1010."""
    out = np.eye(16)
    for idx in SPECIAL:
        k = int("".join(map(str, idx)), 2)
        out[k, k] -= 1 - lam * lam
    return out


def plaquette_ring_czx() -> MonomialOperator:
    """CZX on legs ``(a, b, a', b')`` with CZ around the plaquette boundary.

    The boundary runs top-left, top-right, bottom-right, bottom-left, so in
    leg order the ring is ``0-1-3-2-0``.
    """
    flip = x_string(4).perm
    dig = ((np.arange(16)[:, None] >> np.array([3, 2, 1, 0])) & 1)
    a, b, ap, bp = dig.T
    phase = (-1.0) ** (a * b + b * bp + bp * ap + ap * a)
    return MonomialOperator(flip, phase[flip])


@dataclass(frozen=True)
class PepsReduction:
    """Double-layer tensors of the PEPS and the reduced plaquette kernels."""

    lam: float
    peps: PepsTensor
    e0: np.ndarray = field(repr=False)
    e_tilde: np.ndarray = field(repr=False)
    e_tilde_1: np.ndarray = field(repr=False)
    e_tilde_2: np.ndarray = field(repr=False)

    def plaquette_kernel(self, part: str = "full") -> np.ndarray:
        """``G[v_left, v_right, L_left, L_right]``.

        Corner legs are ``v = (ket_out, bra_out, ket_in, bra_in)`` and bond
        legs are ``L = (ket top, ket bottom, bra top, bra bottom)``.
        """
        e = {"full": self.e_tilde, "t1": self.e_tilde_1, "t2": self.e_tilde_2}[part]
        g = e.transpose(0, 4, 2, 6, 1, 5, 3, 7, 8, 9, 12, 13, 10, 11, 14, 15)
        return g.reshape(16, 16, 16, 16)

    def superoperator(self, n_sites: int, part: str = "full") -> np.ndarray:
        """Dense CP map after identifying the legs shared by adjacent plaquettes."""
        if n_sites < 2:
            raise InvalidShape("need at least two plaquettes")
        g = self.plaquette_kernel(part)
        # x[s_v, s_L, p, v_last, L]: s_* is the wrap-around corner / bond
        x = g.transpose(0, 2, 1, 3)[:, :, None, :, :]
        for _ in range(n_sites - 2):
            x = np.einsum("sSpaL,abLM->sSpabM", x, g)
            x = x.reshape(16, 16, -1, 16, 16)
        t = np.einsum("sSpaL,asLS->pas", x, g)  # corners 0..N-1 in order
        t = t.reshape((2, 2, 2, 2) * n_sites)
        ko = list(range(0, 4 * n_sites, 4))
        bo = [x + 1 for x in ko]
        ki = [x + 2 for x in ko]
        bi = [x + 3 for x in ko]
        D = 2 ** n_sites
        return t.transpose(ko + bo + ki + bi).reshape(D * D, D * D)


def transfer_from_peps(lam: float) -> PepsReduction:
    lam = _check_lambda(lam)
    peps = build_peps(lam)
    a0 = peps.plaquette().reshape(16, 16)
    e0 = a0.T @ a0.conj()  # sum over I of |A0^I><A0^I|
    a = peps.site_tensor().reshape(16, 256)
    e_t = np.einsum("Ix,Iy->xy", a, a.conj()).reshape((2,) * 16)
    # [i..(4), a1 a2 b1 b2, j..(4), bar bonds(4)] -> reference leg order
    e_t = e_t.transpose(0, 1, 2, 3, 8, 9, 10, 11, 4, 5, 6, 7, 12, 13, 14, 15)
    e1 = _dress_with_copies(np.diag(np.diag(d0_matrix(lam))))
    e2 = e_t - e1
    return PepsReduction(lam, peps, e0, e_t, e1, e2)


def _dress_with_copies(m: np.ndarray) -> np.ndarray:
    """Attach copy deltas: ket legs copy the row config, bra legs the column config.

    ``m`` is a 16x16 matrix over ``(a, b, a', b')`` configurations.
    """
    out = np.zeros((2,) * 16)
    for r, c in zip(*np.nonzero(m)):
        a, b, ap, bp = (r >> 3) & 1, (r >> 2) & 1, (r >> 1) & 1, r & 1
        x, y, xp, yp = (c >> 3) & 1, (c >> 2) & 1, (c >> 1) & 1, c & 1
        out[a, b, ap, bp, x, y, xp, yp, a, ap, b, bp, x, xp, y, yp] = m[r, c]
    return out


def dressed_flip_part(lam: float) -> np.ndarray:
    """``E~2`` written directly from ``E0 = D0 + U D0`` with copy deltas attached."""
    lam = _check_lambda(lam)
    u = x_string(4) if lam >= 0 else plaquette_ring_czx()
    return _dress_with_copies(u.apply_left(d0_matrix(lam).astype(complex)).real)


def e2_bond_product_norm(reduction: PepsReduction, first: str = "t2", second: str = "t1") -> float:
    """Frobenius norm of the plaquette product ``E~first E~second`` along the bond."""
    g1 = reduction.plaquette_kernel(first)
    g2 = reduction.plaquette_kernel(second)
    m1 = g1.reshape(-1, 16)  # (rest, L_right)
    m2 = g2.transpose(2, 0, 1, 3).reshape(16, -1)  # (L_left, rest)
    gram1 = m1.conj().T @ m1
    gram2 = m2 @ m2.conj().T
    return float(np.sqrt(abs(np.trace(gram1 @ gram2))))
