"""Conditional mutual information, Markov-length fits and two-point correlators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InsufficientData, InvalidPartition
from .lattice import HADAMARD
from .tensor_core import (DiagonalState, n_sites_for, partial_trace, renyi_entropy,
                          von_neumann_entropy)
from .transfer import build_rho, lambda_state

FIT_FLOOR = 1e-12
CLASSIFY_MARGIN = 0.05
DEFAULT_A_SIZE = 2


@dataclass(frozen=True)
class RegionPartition:
    """``A`` of ``a_size`` sites starting at ``a_start``, collars ``B`` of
    width ``d`` on both sides, and ``C`` the rest of the ring."""

    n_sites: int
    a_size: int = DEFAULT_A_SIZE
    d: int = 1
    a_start: int = 0

    def __post_init__(self):
        if self.a_size < 1 or self.d < 1:
            raise InvalidPartition("A and B need at least one site each")
        if self.a_size + 2 * self.d >= self.n_sites:
            raise InvalidPartition(
                f"|A| + 2d = {self.a_size + 2 * self.d} leaves no room for C on {self.n_sites} sites")

    def _ring(self, offset, length):
        return [(self.a_start + offset + k) % self.n_sites for k in range(length)]

    @property
    def A(self) -> List[int]:
        return self._ring(0, self.a_size)

    @property
    def B(self) -> List[int]:
        return self._ring(-self.d, self.d) + self._ring(self.a_size, self.d)

    @property
    def C(self) -> List[int]:
        used = set(self.A) | set(self.B)
        return [s for s in range(self.n_sites) if s not in used]


def _n_sites(state) -> int:
    if isinstance(state, DiagonalState):
        return state.n_sites
    return n_sites_for(np.asarray(state).shape[0], 2)


def _check_partition(state, part: RegionPartition):
    n = _n_sites(state)
    if n != part.n_sites:
        raise InvalidPartition(f"partition is for {part.n_sites} sites, state has {n}")


def _entropy_terms(state, part, entropy, s_abc=None):
    a, b, c = part.A, part.B, part.C
    s_ab = entropy(partial_trace(state, sorted(a + b)))
    s_bc = entropy(partial_trace(state, sorted(b + c)))
    s_b = entropy(partial_trace(state, sorted(b)))
    if s_abc is None:
        s_abc = entropy(state)
    return s_ab + s_bc - s_b - s_abc


def _entropy(alpha):
    if alpha in (None, 1):
        return von_neumann_entropy
    return lambda s: renyi_entropy(s, alpha)


def cmi(state, part: RegionPartition, s_abc: Optional[float] = None) -> float:
    """``I(A:C|B) = S(AB) + S(BC) - S(B) - S(ABC)`` in nats.

    ``s_abc`` may pass a precomputed total entropy.
    """
    _check_partition(state, part)
    return float(_entropy_terms(state, part, von_neumann_entropy, s_abc))


def renyi_cmi(state, alpha: float, part: RegionPartition, s_abc: Optional[float] = None) -> float:
    """Renyi-alpha analogue of :func:`cmi`; may be negative."""
    _check_partition(state, part)
    return float(_entropy_terms(state, part, _entropy(alpha), s_abc))


def _r_squared(y, yhat) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-300:
        return 0.0
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def _linear_fit(x, y) -> Tuple[float, float]:
    slope, icpt = np.polyfit(x, y, 1)
    return float(slope), _r_squared(y, slope * x + icpt)


def _image_fit(x, ly, log_kernel, bounds=(-7.0, 7.0)) -> Tuple[float, float]:
    """Fit ``ln y = c + log_kernel(x, s)`` over ``s = exp(t)``; ``c`` is eliminated exactly."""
    def sse(t):
        g = log_kernel(x, np.exp(t))
        res = ly - g
        return float(np.sum((res - res.mean()) ** 2))
    t = minimize_scalar(sse, bounds=bounds, method="bounded", options={"xatol": 1e-10}).x
    g = log_kernel(x, np.exp(t))
    return float(np.exp(t)), _r_squared(ly, g + np.mean(ly - g))


@dataclass
class DecaySeries:
    """Values against an integer abscissa, with log-linear and log-log fits.

    With ``period`` set (separations on a ring of that many sites) both
    models include the image term from the other way round the ring:
    ``e^{-x/xi} + e^{-(P-x)/xi}`` and ``x^{-p} + (P-x)^{-p}``.
    """

    abscissa: List[int]
    values: List[float]
    label: str = ""
    period: Optional[int] = None
    fit_exponential: Tuple[float, float] = field(init=False)
    fit_powerlaw: Tuple[float, float] = field(init=False)

    def __post_init__(self):
        self.abscissa = [int(x) for x in self.abscissa]
        self.values = [float(v) for v in self.values]
        if len(self.abscissa) != len(self.values):
            raise InvalidPartition("abscissa and values differ in length")
        nan = float("nan")
        self.fit_exponential = (nan, nan)
        self.fit_powerlaw = (nan, nan)
        x, y = self.usable()
        if self.period is not None and x.size >= 2 and np.all((x > 0) & (x < self.period)):
            per = float(self.period)
            self.fit_exponential = _image_fit(
                x, np.log(y), lambda s, xi: np.logaddexp(-s / xi, -(per - s) / xi))
            self.fit_powerlaw = _image_fit(
                x, np.log(y), lambda s, p: np.logaddexp(-p * np.log(s), -p * np.log(per - s)))
        elif x.size >= 2:
            slope, r2 = _linear_fit(x, np.log(y))
            self.fit_exponential = (-1.0 / slope if slope < 0 else float("inf"), r2)
            if np.all(x > 0):
                slope, r2 = _linear_fit(np.log(x), np.log(y))
                self.fit_powerlaw = (-slope, r2)

    def usable(self):
        """Points with ``|value| > 1e-12``, magnitudes taken."""
        x = np.asarray(self.abscissa, float)
        y = np.abs(np.asarray(self.values, float))
        keep = y > FIT_FLOOR
        return x[keep], y[keep]

    def to_dict(self) -> dict:
        return {"label": self.label, "abscissa": self.abscissa, "values": self.values,
                "period": self.period,
                "fit_exponential": {"xi": self.fit_exponential[0], "r2": self.fit_exponential[1]},
                "fit_powerlaw": {"exponent": self.fit_powerlaw[0], "r2": self.fit_powerlaw[1]}}


def markov_length(series: DecaySeries) -> Tuple[float, float]:
    """``(xi, R^2)`` from the log-linear fit; at least 3 usable points required."""
    x, _ = series.usable()
    if x.size < 3:
        raise InsufficientData(f"only {x.size} points above the {FIT_FLOOR:g} floor")
    return series.fit_exponential


def decay_classify(series: DecaySeries, margin: float = CLASSIFY_MARGIN) -> str:
    """``'exponential'``, ``'powerlaw'`` or ``'inconclusive'`` by comparing fit quality."""
    x, _ = series.usable()
    if x.size < 3 or not np.all(x > 0):
        return "inconclusive"
    r2_exp, r2_pow = series.fit_exponential[1], series.fit_powerlaw[1]
    if r2_exp >= r2_pow + margin:
        return "exponential"
    if r2_pow >= r2_exp + margin:
        return "powerlaw"
    return "inconclusive"


# -- correlations -----------------------------------------------------------------------

def two_point(state, i: int, j: int, op: Optional[np.ndarray] = None):
    """``C_ij = Tr(rho O_i O_j) - Tr(rho O_i) Tr(rho O_j)``; ``O`` defaults to Hadamard.

    Diagonal states use their two-site marginal, where only the diagonal of
    ``O`` contributes. Real results are returned as ``float``.
    """
    op = HADAMARD if op is None else np.asarray(op, dtype=complex)
    n = _n_sites(state)
    for s in (i, j):
        if not 0 <= s < n:
            raise InvalidPartition(f"site {s} outside 0..{n - 1}")
    if isinstance(state, DiagonalState):
        dg = np.diag(op)
        if i == j:
            p = state.marginal([i]).weights
            val = np.sum(p * np.diag(op @ op)) - np.sum(p * dg) ** 2
        else:
            p = state.marginal([i, j]).weights.reshape(2, 2)
            val = dg @ p @ dg - (p.sum(axis=1) @ dg) * (p.sum(axis=0) @ dg)
    else:
        if i == j:
            red = partial_trace(state, [i])
            val = np.trace(red @ op @ op) - np.trace(red @ op) ** 2
        else:
            red = partial_trace(state, [i, j])
            val = (np.trace(red @ np.kron(op, op))
                   - np.trace(partial_trace(red, [0]) @ op) * np.trace(partial_trace(red, [1]) @ op))
    val = complex(val)
    return val.real if abs(val.imag) <= 1e-14 else val


# -- series builders ------------------------------------------------------------------

def cmi_series(state, ds: Sequence[int], a_size: int = DEFAULT_A_SIZE,
               alpha: Optional[float] = None, offset: float = 0.0, label: str = "") -> DecaySeries:
    """CMI (or Renyi-alpha CMI) against the collar width ``d``, minus ``offset``."""
    n = _n_sites(state)
    s_abc = _entropy(alpha)(state)
    vals = []
    for d in ds:
        part = RegionPartition(n, a_size, d)
        vals.append(renyi_cmi(state, alpha, part, s_abc) - offset)
    return DecaySeries(list(ds), vals, label)


def correlation_series(state, separations: Sequence[int], op=None, site: int = 0,
                       label: str = "") -> DecaySeries:
    """Connected correlator against separation; fits account for the ring images."""
    n = _n_sites(state)
    vals = [two_point(state, site, (site + k) % n, op) for k in separations]
    return DecaySeries(list(separations), [float(np.real(v)) for v in vals], label, period=n)


def default_separations(n_sites: int) -> List[int]:
    return list(range(1, n_sites // 2 + 1))


def default_collars(n_sites: int, a_size: int = DEFAULT_A_SIZE) -> List[int]:
    return list(range(1, (n_sites - a_size - 1) // 2 + 1))


def states_for(lam: float, n_sites: int, branches: bool = False, seed: int = 0) -> Dict[str, object]:
    """Labelled states for diagnostics at ``lam``.

    Always includes ``'lambda'`` (the diagonal fixed point). With
    ``branches=True`` the dense branch states are added: both of them at
    ``lam = 0`` and the sign-selected one otherwise.
    """
    lam_st = lambda_state(lam, n_sites, seed).state
    out: Dict[str, object] = {"lambda": lam_st}
    if branches:
        names = ["trivial", "nontrivial"] if lam == 0 else (["nontrivial"] if lam < 0 else ["trivial"])
        for b in names:
            out[b] = build_rho(lam, n_sites, b, state=lam_st)
    return out


def branch_cmi_offset(label: str, alpha: Optional[float] = None) -> float:
    """Plateau subtracted from branch-state CMI so that series compare with ``Lambda``.

    Branch states carry one extra bit of global order, which adds ``ln 2`` to
    ``S(AB) + S(BC) - S(B) - S(ABC)`` (von Neumann and Renyi alike).
    """
    return 0.0 if label == "lambda" else float(np.log(2.0))
