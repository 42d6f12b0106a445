"""Dense linear algebra on chains of qudits.

Conventions used throughout the package:

* Sites are numbered ``0 .. n-1`` and site 0 is the most significant digit of
  a computational-basis index.
* Operators are plain square ``numpy`` arrays of dimension ``d**n``.
* Diagonal states are :class:`DiagonalState` objects (or bare weight vectors
  where noted).
* Entropies are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import InvalidShape, NotAState, NotHermitian, NotPositive

SUPPORT_EPS = 1e-12
HERMITIAN_TOL = 1e-9


def n_sites_for(dim: int, local_dim: int = 2) -> int:
    """Return ``n`` with ``local_dim**n == dim`` or raise :class:`InvalidShape`."""
    if local_dim < 2:
        raise InvalidShape(f"local dimension must be >= 2, got {local_dim}")
    n, rest = 0, int(dim)
    while rest > 1 and rest % local_dim == 0:
        rest //= local_dim
        n += 1
    if rest != 1:
        raise InvalidShape(f"dimension {dim} is not a power of {local_dim}")
    return n


def _check_square(op: np.ndarray) -> None:
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise InvalidShape(f"expected a square matrix, got shape {op.shape}")


@dataclass(frozen=True)
class DiagonalState:
    """Diagonal density matrix stored as its weight vector.

    Weights in ``[-1e-12, 0)`` are clipped to zero, anything more negative is
    rejected, and the vector is normalized to unit sum.
    """

    n_sites: int
    local_dim: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != self.local_dim ** self.n_sites:
            raise InvalidShape(
                f"{w.size} weights do not match {self.n_sites} sites of dimension {self.local_dim}"
            )
        if w.min(initial=0.0) < -SUPPORT_EPS:
            raise NotAState(f"negative weight {w.min():.3e}")
        w = np.where(w < 0, 0.0, w)
        total = w.sum()
        if not total > 0:
            raise NotAState("weights sum to zero")
        w = w / total
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n_sites: int, local_dim: int = 2) -> "DiagonalState":
        return cls(n_sites, local_dim, np.ones(local_dim ** n_sites))

    @property
    def dim(self) -> int:
        return self.weights.size

    def dense(self) -> np.ndarray:
        return np.diag(self.weights.astype(complex))

    def marginal(self, keep: Sequence[int]) -> "DiagonalState":
        return DiagonalState(len(keep), self.local_dim,
                             _marginal_weights(self.weights, keep, self.n_sites, self.local_dim))


def _marginal_weights(w, keep, n, d):
    keep = list(keep)
    _check_sites(keep, n)
    t = w.reshape((d,) * n)
    traced = tuple(s for s in range(n) if s not in keep)
    t = t.sum(axis=traced)
    # remaining axes are in ascending site order; reorder to ``keep`` order
    order = np.argsort(np.argsort(keep))
    return np.transpose(t, order).ravel() if keep else np.atleast_1d(t)


def _check_sites(sites, n):
    if len(set(sites)) != len(sites):
        raise InvalidShape(f"repeated site in {sites}")
    for s in sites:
        if not 0 <= s < n:
            raise InvalidShape(f"site {s} outside 0..{n - 1}")


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self, func=None) -> np.ndarray:
        vals = self.eigenvalues if func is None else func(self.eigenvalues)
        u = self.eigenvectors
        return (u * vals) @ u.conj().T


def hermitian_defect(op: np.ndarray) -> float:
    return float(np.max(np.abs(op - op.conj().T), initial=0.0))


def eigh_hermitian(op: np.ndarray, tol: float = HERMITIAN_TOL) -> Spectrum:
    op = np.asarray(op)
    _check_square(op)
    scale = max(1.0, float(np.max(np.abs(op), initial=0.0)))
    if hermitian_defect(op) > tol * scale:
        raise NotHermitian(f"Hermiticity defect {hermitian_defect(op):.3e}")
    vals, vecs = np.linalg.eigh(0.5 * (op + op.conj().T))
    return Spectrum(vals[::-1].copy(), vecs[:, ::-1].copy())


def hermitian_eigenvalues(op: np.ndarray, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Eigenvalues only, descending; cheaper than :func:`eigh_hermitian`."""
    op = np.asarray(op)
    _check_square(op)
    scale = max(1.0, float(np.max(np.abs(op), initial=0.0)))
    if hermitian_defect(op) > tol * scale:
        raise NotHermitian(f"Hermiticity defect {hermitian_defect(op):.3e}")
    if np.iscomplexobj(op) and not np.any(op.imag):
        op = op.real
    return np.linalg.eigvalsh(op)[::-1]


def partial_trace(op, keep: Sequence[int], local_dim: int = 2):
    """Reduce ``op`` to the sites in ``keep``.

    The output legs follow the order of ``keep``, so ``keep=[3, 0]`` puts
    site 3 first. A :class:`DiagonalState` input gives a
    :class:`DiagonalState` back.
    """
    if isinstance(op, DiagonalState):
        return op.marginal(keep)
    op = np.asarray(op)
    _check_square(op)
    d = local_dim
    n = n_sites_for(op.shape[0], d)
    keep = list(keep)
    _check_sites(keep, n)
    rest = [s for s in range(n) if s not in keep]
    t = op.reshape((d,) * (2 * n))
    perm = keep + rest + [n + s for s in keep] + [n + s for s in rest]
    dk, dr = d ** len(keep), d ** len(rest)
    t = np.transpose(t, perm).reshape(dk, dr, dk, dr)
    return np.einsum("aibi->ab", t)


def _weights_or_dense(op):
    if isinstance(op, DiagonalState):
        return op.weights, True
    op = np.asarray(op)
    if op.ndim == 1:
        return op.real.astype(float), True
    _check_square(op)
    return op, False


def state_spectrum(op) -> np.ndarray:
    """Eigenvalues of a state with the clip threshold applied."""
    arr, diag = _weights_or_dense(op)
    vals = np.array(arr, dtype=float) if diag else hermitian_eigenvalues(arr)
    tr = vals.sum()
    if abs(tr - 1.0) > 1e-6:
        raise NotAState(f"trace {tr:.10f} differs from 1")
    if vals.min(initial=0.0) < -1e-8:
        raise NotAState(f"negative eigenvalue {vals.min():.3e}")
    return vals


def von_neumann_entropy(op) -> float:
    """``-Tr rho ln rho``; eigenvalues at or below 1e-12 are dropped."""
    vals = state_spectrum(op)
    vals = vals[vals > SUPPORT_EPS]
    return float(max(-np.sum(vals * np.log(vals)), 0.0))


def renyi_entropy(op, alpha: float) -> float:
    """Renyi entropy ``ln Tr(rho**alpha) / (1 - alpha)`` in nats."""
    if alpha == 1:
        raise ValueError("alpha = 1 is the von Neumann entropy")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    arr, diag = _weights_or_dense(op)
    if alpha == 2:
        if diag:
            purity = float(np.sum(arr * arr))
        else:
            tr = np.trace(arr).real
            if abs(tr - 1.0) > 1e-6:
                raise NotAState(f"trace {tr:.10f} differs from 1")
            purity = float(np.vdot(arr, arr).real)
        return float(np.log(purity) / (1 - alpha))
    vals = state_spectrum(op)
    vals = vals[vals > SUPPORT_EPS]
    return float(np.log(np.sum(vals ** alpha)) / (1 - alpha))


def trace_norm(op: np.ndarray) -> float:
    """Schatten 1-norm. Hermitian input uses the eigenvalues."""
    op = np.asarray(op)
    if op.ndim == 1:
        return float(np.sum(np.abs(op)))
    _check_square(op)
    scale = max(1e-300, float(np.max(np.abs(op), initial=0.0)))
    if hermitian_defect(op) <= 1e-13 * scale:
        return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (op + op.conj().T)))))
    return float(np.sum(np.linalg.svd(op, compute_uv=False)))


def frac_power_hermitian(op, exponent: complex, support_eps: float = SUPPORT_EPS):
    """``op**exponent`` on the support of a positive semidefinite matrix.

    Eigenvalues at or below ``support_eps`` are sent to zero. A 1-D input is
    treated as the diagonal of a diagonal matrix and a 1-D array is returned.
    """
    arr = np.asarray(op)
    if arr.ndim == 1:
        vals = arr.real.astype(float)
        _check_psd(vals)
        return _power_on_support(vals, exponent, support_eps)
    spec = eigh_hermitian(arr)
    _check_psd(spec.eigenvalues)
    return spec.reconstruct(lambda v: _power_on_support(v, exponent, support_eps))


def _check_psd(vals):
    scale = max(1.0, float(np.max(np.abs(vals), initial=0.0)))
    if vals.min(initial=0.0) < -HERMITIAN_TOL * scale:
        raise NotPositive(f"eigenvalue {vals.min():.3e} below zero")


def _power_on_support(vals, exponent, eps):
    out = np.zeros(vals.shape, dtype=complex)
    keep = vals > eps
    out[keep] = np.exp(exponent * np.log(vals[keep]))
    if np.isreal(exponent):
        return out.real
    return out


# -- site-local actions on global operators ---------------------------------

OperatorLike = Union[np.ndarray]


def _legs(tau: np.ndarray, d: int):
    dim = tau.shape[0]
    if tau.ndim < 2 or tau.shape[1] != dim:
        raise InvalidShape(f"expected an operator, got shape {tau.shape}")
    n = n_sites_for(dim, d)
    return n, tau.reshape((d,) * (2 * n) + tau.shape[2:])


def _act(t: np.ndarray, mat: np.ndarray, axes: Sequence[int], d: int) -> np.ndarray:
    """Contract the input legs of ``mat`` with ``axes`` of ``t``."""
    k = len(axes)
    if mat.ndim == 1:
        order = np.argsort(axes)
        diag = np.ascontiguousarray(mat.reshape((d,) * k).transpose(order))
        shape = [1] * t.ndim
        for a in sorted(axes):
            shape[a] = d
        return t * diag.reshape(shape)
    if mat.shape != (d ** k, d ** k):
        raise InvalidShape(f"operator shape {mat.shape} does not fit {k} sites")
    m = mat.reshape((d,) * (2 * k))
    out = np.tensordot(m, t, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def apply_left(tau: np.ndarray, op: np.ndarray, sites: Sequence[int], local_dim: int = 2):
    """``op @ tau`` with ``op`` acting on ``sites`` (a 1-D ``op`` is a diagonal)."""
    n, t = _legs(tau, local_dim)
    _check_sites(list(sites), n)
    return _act(t, np.asarray(op), list(sites), local_dim).reshape(tau.shape)


def apply_right(tau: np.ndarray, op: np.ndarray, sites: Sequence[int], local_dim: int = 2):
    """``tau @ op`` with ``op`` acting on ``sites``."""
    n, t = _legs(tau, local_dim)
    _check_sites(list(sites), n)
    op = np.asarray(op)
    mat = op if op.ndim == 1 else op.T
    return _act(t, mat, [n + s for s in sites], local_dim).reshape(tau.shape)


def apply_superop(tau: np.ndarray, superop: np.ndarray, sites: Sequence[int], local_dim: int = 2):
    """Apply a local superoperator.

    ``superop`` acts on row-major vectorized local operators, i.e. on index
    ``ket * D + bra`` with ``D = local_dim**len(sites)``. Trailing axes of
    ``tau`` beyond the first two are carried along as a batch.
    """
    n, t = _legs(tau, local_dim)
    sites = list(sites)
    _check_sites(sites, n)
    axes = sites + [n + s for s in sites]
    return _act(t, np.asarray(superop), axes, local_dim).reshape(tau.shape)


def embed_operator(op: np.ndarray, sites: Sequence[int], n_sites: int, local_dim: int = 2):
    """Dense ``op`` on ``sites`` tensored with identity elsewhere."""
    eye = np.eye(local_dim ** n_sites, dtype=complex)
    return apply_left(eye, op, sites, local_dim)


def kron_all(ops: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out
