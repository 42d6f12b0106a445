"""Z_N three-cocycle, its MPO symmetry family, and the symmetric local channels.

Cocycle values are kept as integer exponents of ``exp(2 pi i / N^2)`` so
that the algebraic identities can be checked exactly; complex numbers only
appear when tensors are assembled.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np

from .channels import TraceFormChannel, _window
from .errors import InvalidShape
from .lattice import MonomialOperator, MPOTensor, block_open, mpo_contract, mpo_monomial, span_report
from .tensor_core import kron_all


def _check_order(order: int) -> int:
    order = int(order)
    if order < 2:
        raise InvalidShape(f"group order must be >= 2, got {order}")
    return order


def cocycle_exponent(order: int, g: int, h: int, k: int) -> int:
    """Exponent ``e`` with ``omega(g, h, k) = exp(2 pi i e / N^2)``."""
    n = order
    g, h, k = g % n, h % n, k % n
    return (g * (h + k - (h + k) % n)) % (n * n)


def cocycle(order: int, g: int, h: int, k: int) -> complex:
    return complex(np.exp(2j * np.pi * cocycle_exponent(order, g, h, k) / order ** 2))


@dataclass(frozen=True)
class CocycleTable:
    """All values of ``omega`` for one group order, as integer exponents mod ``N^2``."""

    order: int
    exponents: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return np.exp(2j * np.pi * self.exponents / self.order ** 2)

    def coboundary(self) -> np.ndarray:
        """Exponent of ``(d omega)(g, h, k, l)`` mod ``N^2`` over all quadruples."""
        n = self.order
        e = self.exponents
        r = np.arange(n)
        g, h, k, l = np.meshgrid(r, r, r, r, indexing="ij")
        total = (e[h, k, l] + e[g, (h + k) % n, l] + e[g, h, k]
                 - e[(g + h) % n, k, l] - e[g, h, (k + l) % n])
        return total % (n * n)

    def is_cocycle(self) -> bool:
        return not np.any(self.coboundary())


def cocycle_table(order: int) -> CocycleTable:
    n = _check_order(order)
    r = np.arange(n)
    g, h, k = np.meshgrid(r, r, r, indexing="ij")
    return CocycleTable(n, (g * (h + k - (h + k) % n)) % (n * n))


# -- MPO family -----------------------------------------------------------------------

def group_mpo_tensor(order: int, g: int) -> MPOTensor:
    """``A_g`` with entries ``[k, g + h, h, l] = omega(g, k, h - k) delta_{l h}``."""
    n = _check_order(order)
    e = np.zeros((n, n, n, n), dtype=complex)
    for k, h in itertools.product(range(n), repeat=2):
        e[k, (g + h) % n, h, h] = cocycle(n, g, k, h - k)
    return MPOTensor(e)


def group_mpo(order: int, g: int, n_sites: int) -> MonomialOperator:
    """``O_g`` on a ring of ``n_sites`` qudits (periodic trace)."""
    return mpo_monomial(group_mpo_tensor(order, g), n_sites)


def clock_operators(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """``X|j> = |j+1>`` and ``Z|j> = phi^j |j>`` with ``phi = exp(2 pi i / N)``."""
    n = _check_order(order)
    x = np.roll(np.eye(n), 1, axis=0)
    z = np.diag(np.exp(2j * np.pi * np.arange(n) / n))
    return x, z


def d4_exponents(order: int, g: int) -> np.ndarray:
    """Exponents of the diagonal of ``D_g`` over ``(k, m, n, l)``."""
    n = _check_order(order)
    t = cocycle_table(n).exponents
    r = np.arange(n)
    k, m, p, l = np.meshgrid(r, r, r, r, indexing="ij")
    gg = g % n
    e = t[gg, k, (m - k) % n] + t[gg, m, (p - m) % n] + t[gg, p, (l - p) % n] - t[gg, k, (l - k) % n]
    return e % (n * n)


def dg4(order: int, g: int) -> np.ndarray:
    """Diagonal unitary ``D_g`` on four qudits as a dense matrix."""
    e = d4_exponents(order, g).ravel()
    return np.diag(np.exp(2j * np.pi * e / order ** 2))


def b_op(order: int, g: int, k1: int, k2: int) -> np.ndarray:
    """``B_{g,k1,k2} = (X^g)^{x4} D_g (Z^{k1} x 1 x 1 x Z^{k2})``."""
    x, z = clock_operators(order)
    one = np.eye(order)
    xg = np.linalg.matrix_power(x, g % order)
    zz = kron_all([np.linalg.matrix_power(z, k1 % order), one, one,
                   np.linalg.matrix_power(z, k2 % order)])
    return kron_all([xg] * 4) @ dg4(order, g) @ zz


@lru_cache(maxsize=None)
def _b_family(order: int) -> Tuple[Tuple[Tuple[int, int, int], ...], np.ndarray]:
    keys = tuple(itertools.product(range(order), repeat=3))
    return keys, np.stack([b_op(order, *key) for key in keys])


def zn_nontrivial_channel(order: int, i: int = 0, n_sites: int = 4) -> TraceFormChannel:
    """``(1/N^4) sum Tr(B^dag tau) B`` over all ``B_{g,k1,k2}`` on sites ``i .. i+3``."""
    _, ops = _b_family(_check_order(order))
    return TraceFormChannel(_window(i, 4, n_sites), ops, float(order ** 4), order,
                            label=f"Zt{order}_{i}")


def zn_trivial_channel(order: int, i: int = 0, n_sites: int = 2) -> TraceFormChannel:
    """``(1/N^2) sum_g Tr((X^g x X^g)^dag tau) X^g x X^g`` on sites ``i, i+1``."""
    n = _check_order(order)
    x, _ = clock_operators(n)
    ops = [np.kron(np.linalg.matrix_power(x, g), np.linalg.matrix_power(x, g)) for g in range(n)]
    return TraceFormChannel(_window(i, 2, n_sites), ops, float(n * n), n, label=f"Z{n}_{i}")


# -- boundary matrices and the coproduct -----------------------------------------------

def two_site_unit(order: int, g: int, k: int, l: int) -> np.ndarray:
    """``|g+k, g+l><k, l|``."""
    n = order
    out = np.zeros((n * n, n * n), dtype=complex)
    out[((g + k) % n) * n + (g + l) % n, k * n + l] = 1.0
    return out


def boundary_matrix(order: int, g: int, k: int, l: int, tol: float = 1e-10) -> np.ndarray:
    """Boundary ``b`` with ``O^(2)(A_g; b) = |g+k, g+l><k, l|``, solved by least squares."""
    tensor = group_mpo_tensor(order, g)
    D = tensor.bond
    cols = []
    for a, c in itertools.product(range(D), repeat=2):
        e = np.zeros((D, D), dtype=complex)
        e[a, c] = 1.0
        cols.append(mpo_contract(tensor, 2, boundary=e).ravel())
    basis = np.stack(cols, axis=1)
    target = two_site_unit(order, g, k, l).ravel()
    sol, *_ = np.linalg.lstsq(basis, target, rcond=None)
    if np.max(np.abs(basis @ sol - target)) > tol:
        raise InvalidShape(f"no boundary reproduces e_{{{g},{k}{l}}}")
    return sol.reshape(D, D)


def o4_closed(order: int, g: int, k: int, l: int) -> np.ndarray:
    """``(X^g)^{x4} D_g (|k><k| x 1 x 1 x |l><l|)``."""
    x, _ = clock_operators(order)
    one = np.eye(order)
    pk = np.zeros((order, order))
    pk[k, k] = 1.0
    pl = np.zeros((order, order))
    pl[l, l] = 1.0
    xg = np.linalg.matrix_power(x, g % order)
    return kron_all([xg] * 4) @ dg4(order, g) @ kron_all([pk, one, one, pl])


def coproduct_o4(order: int, g: int, k: int, l: int) -> np.ndarray:
    """``O^(2) x O^(2)`` applied to the coproduct of ``e_{g,kl}``."""
    n = order
    e = d4_exponents(n, g)
    out = np.zeros((n ** 4, n ** 4), dtype=complex)
    for m, p in itertools.product(range(n), repeat=2):
        coeff = np.exp(2j * np.pi * e[k, m, p, l] / n ** 2)
        out += coeff * np.kron(two_site_unit(n, g, k, m), two_site_unit(n, g, p, l))
    return out


def o4_direct(order: int, g: int, k: int, l: int) -> np.ndarray:
    """Four copies of ``A_g`` closed with the solved boundary ``b(e_{g,kl})``."""
    return mpo_contract(group_mpo_tensor(order, g), 4, boundary=boundary_matrix(order, g, k, l))


# -- checks -------------------------------------------------------------------------------

def span_check(order: int, g: int, tol: float = 1e-9) -> dict:
    """Compare the open-boundary span of four ``A_g`` with ``{B_{g,k1,k2}}``."""
    blocks = list(block_open(group_mpo_tensor(order, g), 4).values())
    bs = [b_op(order, g, k1, k2) for k1, k2 in itertools.product(range(order), repeat=2)]
    return span_report(blocks, bs, tol)


def shift_invariance_defect(order: int) -> int:
    """Number of ``(g, g', k, m, n, l)`` where shifting every index by ``g'`` changes ``D_g``."""
    bad = 0
    for g in range(order):
        e = d4_exponents(order, g)
        for s in range(order):
            shifted = np.roll(e, -s, axis=(0, 1, 2, 3))  # e[k+s, m+s, n+s, l+s]
            bad += int(np.count_nonzero(shifted != e))
    return bad


def commute_general_defect(order: int) -> float:
    """``max || [D_g, (X^{g'})^{x4}] ||`` over all ``g, g'``."""
    x, _ = clock_operators(order)
    worst = 0.0
    for g in range(order):
        d = dg4(order, g)
        for gp in range(order):
            xs = kron_all([np.linalg.matrix_power(x, gp)] * 4)
            worst = max(worst, float(np.max(np.abs(d @ xs - xs @ d))))
    return worst


def phase_relation_defect(order: int) -> float:
    """Largest deviation in both product rules for ``B^dag B'`` over all index pairs."""
    n = order
    keys, ops = _b_family(n)
    index = {key: a for a, key in enumerate(keys)}
    phi = np.exp(2j * np.pi / n)
    worst = 0.0
    for (g, k1, k2), b in zip(keys, ops):
        for (gp, q1, q2), bp in zip(keys, ops):
            diff = ops[index[((g - gp) % n, (k1 - q1) % n, (k2 - q2) % n)]]
            lhs1 = b.conj().T @ bp
            rhs1 = diff.conj().T * phi ** ((q1 + q2) * (g - gp))
            lhs2 = bp.conj().T @ b
            rhs2 = diff * phi ** ((q1 + q2) * (gp - g))
            worst = max(worst, float(np.max(np.abs(lhs1 - rhs1))), float(np.max(np.abs(lhs2 - rhs2))))
    return worst


def b_family_gram_rank(order: int) -> int:
    """Rank of the Gram matrix ``Tr(B^dag B')`` over all ``(g, k1, k2)``."""
    _, ops = _b_family(order)
    v = ops.reshape(len(ops), -1)
    return int(np.linalg.matrix_rank(v.conj() @ v.T))


def group_law(order: int, n_sites: int) -> Dict[Tuple[int, int], complex]:
    """Proportionality constants ``c`` in ``O_g O_h = c O_{g+h}`` (``nan`` if not proportional)."""
    ops = [group_mpo(order, g, n_sites) for g in range(order)]
    out = {}
    for g, h in itertools.product(range(order), repeat=2):
        prod = ops[g] @ ops[h]
        target = ops[(g + h) % order]
        if not np.array_equal(prod.perm, target.perm):
            out[(g, h)] = complex("nan")
            continue
        ratio = prod.phase / target.phase
        out[(g, h)] = complex(ratio[0]) if np.allclose(ratio, ratio[0], atol=1e-12) else complex("nan")
    return out


def unitarity_defect(order: int) -> float:
    _, ops = _b_family(order)
    eye = np.eye(order ** 4)
    return float(max(np.max(np.abs(b.conj().T @ b - eye)) for b in ops))


def conjugation_closure_defect(order: int) -> float:
    """Largest distance of ``B' B B'^dag`` from the span of the family.

    The channel is the orthogonal projector onto that span, so a zero defect
    is equivalent to ``E(B' tau B'^dag) = B' E(tau) B'^dag`` for every member.
    """
    _, ops = _b_family(_check_order(order))
    dim = ops.shape[1]
    basis = ops.reshape(len(ops), -1).T / np.sqrt(dim)
    worst = 0.0
    for bp in ops:
        conj = (bp @ ops @ bp.conj().T).reshape(len(ops), -1).T / np.sqrt(dim)
        resid = conj - basis @ (basis.conj().T @ conj)
        worst = max(worst, float(np.max(np.linalg.norm(resid, axis=0))))
    return worst


def z2_span_comparison() -> dict:
    """Spans of the N = 2 cocycle operators and the CZX-ring operators on four qubits."""
    from .channels import czx_local_ops
    _, ops = _b_family(2)
    return span_report(list(ops), czx_local_ops())


def verify_report(order: int, deep: bool = False) -> List[Tuple[str, float, bool]]:
    """Rows ``(check, value, passed)`` summarizing the algebraic identities for one order."""
    from .channels import choi_min_eigenvalue, symmetry_deviation
    n = _check_order(order)
    rows: List[Tuple[str, float, bool]] = []
    cob = int(np.count_nonzero(cocycle_table(n).coboundary()))
    rows.append(("cocycle_condition_failures", cob, cob == 0))
    sh = shift_invariance_defect(n)
    rows.append(("shift_invariance_failures", sh, sh == 0))
    cg = commute_general_defect(n)
    rows.append(("commute_general_defect", cg, cg <= 1e-12))
    for g in range(n):
        rep = span_check(n, g)
        rows.append((f"span_rank_g{g}", rep["rank_a"], bool(rep["equal"])))
    ph = phase_relation_defect(n)
    rows.append(("phase_relation_defect", ph, ph <= 1e-12))
    ch = zn_nontrivial_channel(n)
    tp = ch.tp_defect()
    rows.append(("channel_tp_defect", tp, tp <= 1e-10))
    if deep or n <= 3:
        eig = choi_min_eigenvalue(ch)
        rows.append(("channel_choi_min_eigenvalue", eig, eig >= -1e-10))
    cc = conjugation_closure_defect(n)
    rows.append(("family_conjugation_defect", cc, cc <= 1e-10))
    ring = 8 if n == 2 else 4
    ring = 6 if (deep and n == 3) else ring
    worst = 0.0
    big = zn_nontrivial_channel(n, 0, ring)
    for g in range(1, n):
        og = group_mpo(n, g, ring)
        worst = max(worst, symmetry_deviation(big, og, ring), symmetry_deviation(big, og, ring, "right"))
    rows.append((f"symmetry_deviation_N{ring}", worst, worst <= 1e-10))
    return rows
