"""Named lattice operators and matrix product operator contraction."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidShape, TooSmall
from .tensor_core import embed_operator, kron_all

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CZ_GATE = np.diag([1, 1, 1, -1]).astype(complex)


def clock_shift(local_dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Shift ``X|j> = |j+1 mod d>`` and clock ``Z|j> = phi**j |j>``."""
    if local_dim < 2:
        raise InvalidShape("local dimension must be >= 2")
    d = local_dim
    x = np.zeros((d, d), dtype=complex)
    x[(np.arange(d) + 1) % d, np.arange(d)] = 1.0
    phi = np.exp(2j * np.pi / d)
    z = np.diag(phi ** np.arange(d))
    return x, z


@lru_cache(maxsize=32)
def basis_digits(n_sites: int, local_dim: int = 2) -> np.ndarray:
    """``(d**n, n)`` array of basis configurations, site 0 most significant."""
    idx = np.arange(local_dim ** n_sites)
    powers = local_dim ** np.arange(n_sites - 1, -1, -1)
    out = (idx[:, None] // powers[None, :]) % local_dim
    out.setflags(write=False)
    return out


def digits_to_index(digits: np.ndarray, local_dim: int = 2) -> np.ndarray:
    digits = np.asarray(digits)
    n = digits.shape[-1]
    powers = local_dim ** np.arange(n - 1, -1, -1)
    return digits @ powers


@dataclass(frozen=True)
class MonomialOperator:
    """Operator with ``U|x> = phase[x] |perm[x]>``.

    ``perm`` must be a permutation; zero phases are allowed, which covers
    partial isometries such as block-opened MPO operators.
    """

    perm: np.ndarray
    phase: np.ndarray
    local_dim: int = 2

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.intp)
        phase = np.asarray(self.phase, dtype=complex)
        if perm.shape != phase.shape or perm.ndim != 1:
            raise InvalidShape("perm and phase must be 1-D arrays of equal length")
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise InvalidShape("perm is not a permutation")
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "phase", phase)

    @classmethod
    def from_dense(cls, mat: np.ndarray, local_dim: int = 2, tol: float = 1e-12) -> "MonomialOperator":
        """Inverse of :meth:`dense`; raises if a column has more than one nonzero."""
        mat = np.asarray(mat, dtype=complex)
        nz = np.abs(mat) > tol
        if np.any(nz.sum(axis=0) > 1):
            raise InvalidShape("matrix is not monomial")
        perm = np.abs(mat).argmax(axis=0)
        return cls(perm, mat[perm, np.arange(mat.shape[1])], local_dim)

    @property
    def dim(self) -> int:
        return self.perm.size

    def dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        out[self.perm, np.arange(self.dim)] = self.phase
        return out

    def dagger(self) -> "MonomialOperator":
        inv = np.argsort(self.perm)
        return MonomialOperator(inv, np.conj(self.phase[inv]), self.local_dim)

    def __matmul__(self, other: "MonomialOperator") -> "MonomialOperator":
        return MonomialOperator(self.perm[other.perm], other.phase * self.phase[other.perm],
                                self.local_dim)

    def apply_left(self, tau: np.ndarray) -> np.ndarray:
        """``U @ tau`` (rows permuted)."""
        out = np.empty_like(tau, dtype=np.result_type(tau, self.phase))
        out[self.perm] = self.phase.reshape((-1,) + (1,) * (tau.ndim - 1)) * tau
        return out

    def apply_right(self, tau: np.ndarray) -> np.ndarray:
        """``tau @ U`` (columns permuted)."""
        return tau[:, self.perm] * self.phase[None, :]


def x_string(n_sites: int, local_dim: int = 2, power: int = 1) -> MonomialOperator:
    """``(X**power)`` on every site as a monomial operator."""
    dig = basis_digits(n_sites, local_dim)
    perm = digits_to_index((dig + power) % local_dim, local_dim)
    return MonomialOperator(perm, np.ones(perm.size), local_dim)


def z_string(n_sites: int) -> MonomialOperator:
    dig = basis_digits(n_sites, 2)
    return MonomialOperator(np.arange(2 ** n_sites), (-1.0) ** dig.sum(axis=1))


def cz_ring_phase(n_sites: int) -> np.ndarray:
    """Diagonal of the cyclic CZ ring, bond ``(n-1, 0)`` included."""
    dig = basis_digits(n_sites, 2)
    return (-1.0) ** np.sum(dig * np.roll(dig, -1, axis=1), axis=1)


def czx_monomial(n_sites: int) -> MonomialOperator:
    """``prod CZ_{i,i+1} prod X_i`` on a ring of ``n_sites`` qubits."""
    if n_sites < 3:
        raise TooSmall("CZX needs at least three sites")
    flip = x_string(n_sites).perm
    return MonomialOperator(flip, cz_ring_phase(n_sites)[flip])


def czx_operator(n_sites: int) -> np.ndarray:
    return czx_monomial(n_sites).dense()


def named_operator(name: str, n_sites: int, sites: Optional[Sequence[int]] = None,
                   local_dim: int = 2, power: int = 1) -> np.ndarray:
    """Dense operator from the registry ``X Z H CZ CZX Xg Zg``.

    Single-site names are applied on every site in ``sites`` (default: all).
    ``CZ`` needs exactly two sites. ``CZX`` on a window uses the cyclic ring
    of that window.
    """
    sites = list(range(n_sites)) if sites is None else list(sites)
    single = {"X": PAULI_X, "Z": PAULI_Z, "H": HADAMARD}
    if name in single:
        if local_dim != 2:
            raise InvalidShape(f"{name} is a qubit operator")
        return embed_operator(kron_all([single[name]] * len(sites)), sites, n_sites)
    if name in ("Xg", "Zg"):
        x, z = clock_shift(local_dim)
        local = np.linalg.matrix_power(x if name == "Xg" else z, power % local_dim)
        return embed_operator(kron_all([local] * len(sites)), sites, n_sites, local_dim)
    if name == "CZ":
        if len(sites) != 2:
            raise InvalidShape("CZ acts on exactly two sites")
        return embed_operator(CZ_GATE, sites, n_sites)
    if name == "CZX":
        return embed_operator(czx_operator(len(sites)), sites, n_sites)
    raise KeyError(f"unknown operator {name!r}")


# -- matrix product operators -------------------------------------------------

@dataclass(frozen=True)
class MPOTensor:
    """Local MPO tensor with legs ``(bond_left, phys_out, phys_in, bond_right)``."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        if e.ndim != 4 or e.shape[0] != e.shape[3]:
            raise InvalidShape(f"MPO tensor must have shape (D, d_out, d_in, D), got {e.shape}")
        object.__setattr__(self, "entries", e)

    @property
    def bond(self) -> int:
        return self.entries.shape[0]

    @property
    def phys_out(self) -> int:
        return self.entries.shape[1]

    @property
    def phys_in(self) -> int:
        return self.entries.shape[2]


def identity_mpo(local_dim: int = 2) -> MPOTensor:
    return MPOTensor(np.eye(local_dim).reshape(1, local_dim, local_dim, 1))


def czx_mpo() -> MPOTensor:
    """Bond-2 tensor generating the CZX ring.

    ``A^{01} = [[1, 1], [0, 0]]`` and ``A^{10} = [[0, 0], [1, -1]]`` with
    ``A^{ij}`` the matrix for output ``i`` and input ``j``.
    """
    e = np.zeros((2, 2, 2, 2), dtype=complex)
    e[:, 0, 1, :] = [[1, 1], [0, 0]]
    e[:, 1, 0, :] = [[0, 0], [1, -1]]
    return MPOTensor(e)


def _boundary(tensor: MPOTensor, boundary) -> np.ndarray:
    if boundary is None:
        return np.eye(tensor.bond, dtype=complex)
    b = np.asarray(boundary, dtype=complex)
    if b.shape != (tensor.bond, tensor.bond):
        raise InvalidShape(f"boundary shape {b.shape} does not match bond {tensor.bond}")
    return b


def mpo_contract(tensor: MPOTensor, n_sites: int, boundary=None) -> np.ndarray:
    """Dense ``sum Tr(A^{i1 j1} ... A^{iN jN} b) |i><j|``; ``boundary=None`` is periodic."""
    if n_sites < 1:
        raise InvalidShape("n_sites must be >= 1")
    b = _boundary(tensor, boundary)
    D, do, di = tensor.bond, tensor.phys_out, tensor.phys_in
    a = tensor.entries.reshape(D, do * di, D)
    total = np.zeros(((do * di) ** n_sites,), dtype=complex)
    for start in range(D):
        if not np.any(b[:, start]):
            continue
        x = a[start]  # (P, D)
        for _ in range(n_sites - 1):
            x = np.tensordot(x, a, axes=(1, 0)).reshape(-1, D)
        total += x @ b[:, start]
    t = total.reshape((do, di) * n_sites)
    order = list(range(0, 2 * n_sites, 2)) + list(range(1, 2 * n_sites, 2))
    return t.transpose(order).reshape(do ** n_sites, di ** n_sites)


def mpo_monomial(tensor: MPOTensor, n_sites: int, boundary=None) -> MonomialOperator:
    """Contract an MPO whose local tensor maps each input to a single output.

    Avoids the dense ``d**n x d**n`` intermediate, so it scales to the
    largest chains used here.
    """
    e = tensor.entries
    if tensor.phys_in != tensor.phys_out:
        raise InvalidShape("monomial contraction needs equal physical dimensions")
    d = tensor.phys_in
    nz = np.any(e != 0, axis=(0, 3))  # (out, in)
    if np.any(nz.sum(axis=0) > 1):
        raise InvalidShape("tensor is not monomial: an input has several outputs")
    out_of = np.where(nz.any(axis=0), nz.argmax(axis=0), np.arange(d))
    if not np.array_equal(np.sort(out_of), np.arange(d)):
        raise InvalidShape("local output map is not a permutation")
    mats = np.stack([e[:, out_of[j], j, :] for j in range(d)])  # (d, D, D)
    b = _boundary(tensor, boundary)
    dig = basis_digits(n_sites, d)
    prod = mats[dig[:, 0]]
    for s in range(1, n_sites):
        prod = prod @ mats[dig[:, s]]
    phase = np.einsum("xab,ba->x", prod, b)
    perm = digits_to_index(out_of[dig], d)
    return MonomialOperator(perm, phase, d)


def block_open(tensor: MPOTensor, k: int) -> Dict[Tuple[int, int], np.ndarray]:
    """Open-boundary blocks ``A^{(k)}_{ab} = sum (A^{i1 j1} ... A^{ik jk})_{ab} |i><j|``."""
    D = tensor.bond
    out = {}
    for a in range(D):
        for b in range(D):
            e = np.zeros((D, D), dtype=complex)
            e[b, a] = 1.0
            out[(a, b)] = mpo_contract(tensor, k, boundary=e)
    return out


def span_report(family_a, family_b, tol: float = 1e-9) -> dict:
    """Compare the linear spans of two operator families.

    Returns the two ranks and the largest residual of projecting either
    family onto the other's span.
    """
    va = np.stack([np.asarray(op).ravel() for op in family_a], axis=1)
    vb = np.stack([np.asarray(op).ravel() for op in family_b], axis=1)

    def basis(v):
        u, s, _ = np.linalg.svd(v, full_matrices=False)
        r = int(np.sum(s > tol * max(1.0, s.max(initial=0.0))))
        return u[:, :r], r

    qa, ra = basis(va)
    qb, rb = basis(vb)

    def residual(v, q):
        if v.size == 0:
            return 0.0
        res = v - q @ (q.conj().T @ v)
        norms = np.linalg.norm(v, axis=0)
        return float(np.max(np.linalg.norm(res, axis=0) / np.where(norms > 0, norms, 1.0)))

    res = max(residual(va, qb), residual(vb, qa))
    return {"rank_a": ra, "rank_b": rb, "residual": res, "equal": ra == rb and res <= tol}
