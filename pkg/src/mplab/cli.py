"""Command-line front end.

Every invocation writes one JSON manifest (``manifest.json`` in the output
directory unless ``--manifest`` is given) holding the parameters, check
results and SHA-256 digests of the files written. Exit status is 0 on
success, 1 when a check fails, and otherwise the ``exit_status`` of the
library error that stopped the run (2 validation, 3 convergence, 4 scale).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .channels import (amplitude_damping_channel, choi_min_eigenvalue, circuit_apply,
                       circuit_choi_report, circuit_for, commutation_deviation,
                       czx_local_channel, symmetry_deviation)
from .diagnostics import (DEFAULT_A_SIZE, DecaySeries, branch_cmi_offset, cmi_series,
                          correlation_series, decay_classify, default_collars,
                          default_separations, markov_length)
from .errors import ConfigError, InsufficientData, MplabError, ScaleTooLarge, ValidationError
from .io import load, save, sha256_file
from .lattice import named_operator, z_string
from .petz import build_recovery, fit_xi, recovery_choi_report, recovery_error
from .tensor_core import DiagonalState, trace_norm
from .transfer import (BRANCHES, MAX_SITES, branch_symmetry, build_rho, default_branch,
                       lambda_state)
from .zn import verify_report

DENSE_MAX = 12
RECOVERY_MAX = 10
TOLERANCES = {
    "fixed_point": 1e-10,
    "trace": 1e-10,
    "exact_map": 1e-9,
    "choi": 1e-10,
    "tp": 1e-10,
    "symmetry": 1e-11,
    "recovery_bound": 1e-9,
    "recovery_exact": 1e-8,
}
CONFIG_SECTIONS = {"defaults", "sweeps", "tolerances", "output_dir"}
DEFAULT_KEYS = {"lambda", "n", "r", "alpha", "asize", "branch", "which", "order",
                "threads", "seed", "op"}
SWEEP_KEYS = {"lambdas", "radii", "collars", "separations"}
FIG1_LAMBDAS = (-1.0, -0.8, -0.5, -0.2, 0.2, 0.5, 0.8, 1.0)
FIG3_LAMBDAS = (0.0, 0.2, 0.5, 0.8)
FIG4_LAMBDAS = (0.5, 0.6, 0.8)


class UsageError(ValidationError):
    code = "usage_error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- configuration -------------------------------------------------------------------

@dataclass
class Config:
    defaults: dict = field(default_factory=dict)
    sweeps: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown("config", data, CONFIG_SECTIONS)
        cfg = cls(dict(data.get("defaults", {})), dict(data.get("sweeps", {})),
                  dict(data.get("tolerances", {})), data.get("output_dir"))
        _reject_unknown("defaults", cfg.defaults, DEFAULT_KEYS)
        _reject_unknown("sweeps", cfg.sweeps, SWEEP_KEYS)
        _reject_unknown("tolerances", cfg.tolerances, set(TOLERANCES))
        for key, val in cfg.tolerances.items():
            if not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0:
                raise ConfigError(f"tolerance {key!r} must be a positive number, got {val!r}")
        for key, val in cfg.sweeps.items():
            if not isinstance(val, list) or not val:
                raise ConfigError(f"sweep {key!r} must be a non-empty list")
        if cfg.output_dir is not None and not isinstance(cfg.output_dir, str):
            raise ConfigError("output_dir must be a string")
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)


def _reject_unknown(section: str, data: dict, allowed: set) -> None:
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"unknown {section} keys: {', '.join(extra)}")


# -- run bookkeeping -----------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        if math.isnan(val):
            return None
        if math.isinf(val):
            return "inf" if val > 0 else "-inf"
        return val
    return obj


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def write_series_csv(path: Path, series: DecaySeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["abscissa", "value"])
        for x, v in zip(series.abscissa, series.values):
            writer.writerow([x, repr(float(v))])


def _fmt_lambda(lam: float) -> str:
    return repr(float(lam))


class Run:
    """Collects checks, results and emitted files for one invocation."""

    def __init__(self, command: str, args: Optional[argparse.Namespace], config: Config):
        self.command = command
        self.args = args
        self.config = config
        env = os.environ.get("MPLAB_OUT_DIR")
        self.out_dir = Path(env or config.output_dir or ".")
        self.tolerances = {**TOLERANCES, **config.tolerances}
        self.parameters: Dict[str, object] = {}
        self.results: Dict[str, object] = {}
        self.checks: List[dict] = []
        self.outputs: List[Path] = []

    def opt(self, name: str, fallback=None):
        val = getattr(self.args, name, None) if self.args is not None else None
        if val is None:
            val = self.config.defaults.get(name, fallback)
        self.parameters[name] = val
        return val

    def require(self, name: str):
        val = self.opt(name)
        if val is None:
            raise UsageError(f"--{name} is required")
        return val

    def sweep(self, name: str, cli_value, fallback):
        val = cli_value if cli_value is not None else self.config.sweeps.get(name, fallback)
        val = list(val)
        self.parameters[name] = val
        return val

    @property
    def seed(self) -> int:
        return int(self.opt("seed", 0))

    @property
    def threads(self) -> int:
        return max(1, int(self.opt("threads", os.cpu_count() or 1)))

    def path(self, name, default: str) -> Path:
        p = Path(name if name is not None else default)
        if not p.is_absolute():
            p = self.out_dir / p
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def emitted(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def check(self, name: str, value, passed: bool) -> None:
        self.checks.append({"name": name, "value": value, "passed": bool(passed)})

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def manifest_path(self) -> Path:
        given = getattr(self.args, "manifest", None) if self.args is not None else None
        return self.path(given, "manifest.json")

    def write_manifest(self, wall_time: float, error: Optional[MplabError] = None,
                       exit_code: int = 0) -> Path:
        payload = {
            "command": self.command,
            "parameters": self.parameters,
            "seed": self.parameters.get("seed", 0),
            "tolerances": self.tolerances,
            "wall_time": wall_time,
            "library_version": __version__,
            "checks": self.checks,
            "all_passed": self.all_passed,
            "results": self.results,
            "outputs": [{"path": str(p), "sha256": sha256_file(p)} for p in self.outputs
                        if p.exists()],
            "status": "ok" if error is None else "error",
            "exit_code": exit_code,
        }
        if error is not None:
            payload["error"] = {"code": error.code, "type": type(error).__name__,
                                "message": str(error)}
        path = self.manifest_path()
        write_json(path, payload)
        return path


def pmap(fn: Callable, items: Sequence, threads: int) -> list:
    """Order-preserving map on a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def print_table(rows) -> None:
    width = max((len(r["name"]) for r in rows), default=10)
    for r in rows:
        val = r["value"]
        shown = f"{val:.3e}" if isinstance(val, float) else str(val)
        print(f"{r['name']:<{width}}  {shown:>12}  {'PASS' if r['passed'] else 'FAIL'}")


def _check_n(n: int, ceiling: int, what: str) -> int:
    n = int(n)
    if n > ceiling:
        raise ScaleTooLarge(f"{what} is exact only up to N = {ceiling}; got N = {n}. "
                            "Use a smaller --n.")
    if n < 4 or n % 2:
        raise ValidationError(f"N must be even and >= 4, got {n}")
    return n


def _fixed_target(which: str, n: int) -> np.ndarray:
    return build_rho(1.0 if which == "trivial" else -1.0, n, which, state=DiagonalState.uniform(n))


# -- state ----------------------------------------------------------------------------

def cmd_state_build(run: Run, args) -> None:
    lam = float(run.require("lambda"))
    n = _check_n(run.require("n"), MAX_SITES, "the fixed point")
    branch = run.opt("branch") or default_branch(lam)
    fp = lambda_state(lam, n, run.seed)
    run.results.update({"lambda": lam, "n": n, "leading_eigenvalue": fp.leading_eigenvalue,
                        "gap": fp.spectral_gap, "residual": fp.residual,
                        "iterations": fp.iterations})
    run.check("fixed_point_residual", fp.residual, fp.residual <= run.tolerances["fixed_point"])
    names = list(BRANCHES) if branch == "both" else [branch]
    default = f"state_n{n}_lambda{_fmt_lambda(lam)}.bin"
    base = run.path(args.out, default)
    for b in names:
        out = base if len(names) == 1 else base.with_name(f"{base.stem}_{b}{base.suffix}")
        if b == "lambda":
            obj = fp.state
            tr = float(obj.weights.sum())
        else:
            _check_n(n, DENSE_MAX, "a dense branch state")
            obj = build_rho(lam, n, b, state=fp.state)
            tr = float(np.trace(obj).real)
        save(out, obj)
        run.emitted(out)
        run.check(f"trace_{b}", abs(tr - 1.0), abs(tr - 1.0) <= run.tolerances["trace"])
        print(f"wrote {out}")


# -- circuits ---------------------------------------------------------------------------

def cmd_circuit_apply(run: Run, args) -> None:
    lam = run.opt("lambda")
    if args.input is not None:
        state = load(args.input)
        n_state = state.n_sites if isinstance(state, DiagonalState) else int(round(math.log2(state.shape[0])))
        n = int(run.opt("n", n_state))
        if n != n_state:
            raise ValidationError(f"--n {n} does not match the {n_state}-site input state")
        which = run.opt("which") or (default_branch(float(lam)) if lam is not None else None)
        if which is None:
            raise UsageError("--which is required with --in")
    else:
        if lam is None:
            raise UsageError("either --in or --lambda is required")
        lam = float(lam)
        which = run.opt("which") or default_branch(lam)
        n = _check_n(run.require("n"), DENSE_MAX, "a dense branch state")
        state = build_rho(lam, n, which, state=lambda_state(lam, n, run.seed).state)
    layout = circuit_for(which, _check_n(n, MAX_SITES, "circuit application"))
    out_state = circuit_apply(layout, state)
    if isinstance(out_state, DiagonalState):
        tr = float(out_state.weights.sum())
        dist = float(np.abs(out_state.weights - 1.0 / out_state.dim).sum())
    else:
        tr = float(np.trace(out_state).real)
        dist = trace_norm(out_state - _fixed_target(which, n))
    run.results.update({"which": which, "n": n, "depth": layout.depth, "trace": tr,
                        "distance_to_fixed_point": dist})
    run.check("trace_preserved", abs(tr - 1.0), abs(tr - 1.0) <= run.tolerances["trace"])
    if args.input is None:
        run.check("maps_to_fixed_point", dist, dist <= run.tolerances["exact_map"])
    out = run.path(args.out, f"circuit_{which}_n{n}.bin")
    save(out, out_state)
    run.emitted(out)
    print(f"wrote {out}  (distance to fixed point {dist:.3e})")


def circuit_checks(run: Run, which: str, n: int, lambdas: Sequence[float]) -> None:
    """Lemma suite for one circuit: CPTP, symmetry, commutation, exact mapping."""
    tol = run.tolerances
    layout = circuit_for(which, n)
    rep = circuit_choi_report(layout)
    run.check(f"{which}_local_choi_min_eigenvalue", rep["choi_min_eigenvalue"],
              rep["choi_min_eigenvalue"] >= -tol["choi"])
    run.check(f"{which}_local_tp_defect", rep["tp_defect"], rep["tp_defect"] <= tol["tp"])
    u = branch_symmetry(which, n)
    worst = 0.0
    for ch in layout.channels():
        worst = max(worst, symmetry_deviation(ch, u, n), symmetry_deviation(ch, u, n, "right"))
    run.check(f"{which}_symmetry_deviation", worst, worst <= tol["symmetry"])
    chans = layout.channels()
    if which == "trivial":
        control = symmetry_deviation(chans[0], z_string(n), n)
        run.check("trivial_z_control_detected", control, control > 1e-3)
        comm = commutation_deviation(chans[0], next(c for c in chans if c.support[0] == 1))
    else:
        comm = commutation_deviation(czx_local_channel(0, n), czx_local_channel(2, n))
        control = commutation_deviation(czx_local_channel(0, n),
                                        amplitude_damping_channel([2, 3], 0.3))
        run.check("nontrivial_commutation_control_detected", control, control > 1e-3)
    run.check(f"{which}_overlap_commutation", comm, comm <= tol["symmetry"])
    for lam in lambdas:
        fp = lambda_state(lam, n, run.seed).state
        state = fp
        flip = np.arange(fp.dim)[::-1]
        prefix_dev = 0.0
        for ch in chans:
            state = ch.apply_diagonal(state)
            prefix_dev = max(prefix_dev, float(np.max(np.abs(state.weights - state.weights[flip]))))
        run.check(f"{which}_prefix_flip_invariance_lambda{_fmt_lambda(lam)}", prefix_dev,
                  prefix_dev <= tol["trace"])
        unif = float(np.abs(state.weights - 1.0 / fp.dim).sum())
        run.check(f"{which}_lambda_to_identity_lambda{_fmt_lambda(lam)}", unif,
                  unif <= tol["trace"])
        if n <= DENSE_MAX:
            rho = build_rho(lam, n, which, state=fp)
            dist = trace_norm(circuit_apply(layout, rho) - _fixed_target(which, n))
            run.check(f"{which}_maps_to_fixed_point_lambda{_fmt_lambda(lam)}", dist,
                      dist <= tol["exact_map"])


def cmd_circuit_verify(run: Run, args) -> None:
    which = run.require("which")
    n = _check_n(run.opt("n", 8), MAX_SITES, "circuit verification")
    sign = 1.0 if which == "trivial" else -1.0
    lambdas = run.sweep("lambdas", args.lambdas, [sign * x for x in (0.2, 0.5, 0.8, 1.0)])
    circuit_checks(run, which, n, [float(x) for x in lambdas])
    print_table(run.checks)


# -- recovery --------------------------------------------------------------------------

def recovery_experiment(lam: float, n: int, radii: Sequence[int], which: str, seed: int,
                        tol: dict, choi: bool = True) -> dict:
    rows = []
    for r in radii:
        plan = build_recovery(lam, n, r, which, seed=seed)
        err = recovery_error(plan)
        row = {"r": r, "eps_diag": err.eps_diag, "eps_full": err.eps_full,
               "bound_ok": err.bound_ok, "image_deviation": err.image_deviation,
               "layers": plan.staggered_layout.depth}
        if choi:
            row["channels"] = recovery_choi_report(plan)
        rows.append(row)
    eps = [row["eps_diag"] for row in rows]
    nonincreasing = all(b <= a + 1e-15 for a, b in zip(eps, eps[1:]))
    return {"lambda": lam, "which": which, "n": n, "radii": list(radii), "per_radius": rows,
            "xi_fit": fit_xi(radii, eps), "eps_nonincreasing": nonincreasing,
            "staggered_order": "ascending"}


def _recovery_checks(run: Run, report: dict, prefix: str = "") -> None:
    tol = run.tolerances
    run.check(f"{prefix}eps_diag_nonincreasing", report["eps_nonincreasing"],
              report["eps_nonincreasing"])
    for row in report["per_radius"]:
        r = row["r"]
        slack = row["eps_full"] - 2 * row["eps_diag"]
        run.check(f"{prefix}factor_two_bound_r{r}", slack, slack <= tol["recovery_bound"])
        if abs(report["lambda"]) == 1.0:
            run.check(f"{prefix}exact_recovery_r{r}", row["eps_full"],
                      row["eps_full"] <= tol["recovery_exact"])
        chans = row.get("channels", [])
        if chans:
            eigs = [c["choi_min_eigenvalue"] for c in chans
                    if not math.isnan(c["choi_min_eigenvalue"])]
            tps = max(c["tp_defect"] for c in chans)
            if eigs:
                run.check(f"{prefix}recovery_choi_r{r}", min(eigs), min(eigs) >= -tol["choi"])
            run.check(f"{prefix}recovery_tp_r{r}", tps, tps <= tol["tp"])


def cmd_recover(run: Run, args) -> None:
    lam = float(run.require("lambda"))
    n = _check_n(run.require("n"), RECOVERY_MAX, "the recovery experiment")
    which = run.opt("which") or default_branch(lam)
    r_max = int(run.opt("r", 3))
    radii = [int(x) for x in run.sweep("radii", None, range(1, r_max + 1))]
    report = recovery_experiment(lam, n, radii, which, run.seed, run.tolerances)
    _recovery_checks(run, report)
    out = run.path(args.out, "report.json")
    write_json(out, report)
    run.emitted(out)
    run.results.update({"xi_fit": report["xi_fit"],
                        "eps_diag": [row["eps_diag"] for row in report["per_radius"]],
                        "eps_full": [row["eps_full"] for row in report["per_radius"]],
                        "staggered_order": "ascending"})
    for row in report["per_radius"]:
        print(f"r={row['r']}  eps_diag={row['eps_diag']:.6e}  eps_full={row['eps_full']:.6e}  "
              f"layers={row['layers']}")
    print(f"xi_fit={report['xi_fit']:.4g}  wrote {out}")


# -- diagnostics -------------------------------------------------------------------------

def _diag_state(lam: float, n: int, branch: str, seed: int):
    if branch == "lambda":
        return lambda_state(lam, n, seed).state
    _check_n(n, DENSE_MAX, "a dense branch state")
    return build_rho(lam, n, branch, state=lambda_state(lam, n, seed).state)


def diag_series(kind: str, lam: float, n: int, seed: int, branch: str = "lambda",
                alpha: Optional[float] = None, a_size: int = DEFAULT_A_SIZE, op: str = "H",
                abscissa: Optional[Sequence[int]] = None):
    """Raw series plus sidecar payload; fits use the excess over the branch plateau."""
    state = _diag_state(lam, n, branch, seed)
    label = f"{kind}_lambda{_fmt_lambda(lam)}_{branch}"
    if kind == "corr":
        seps = list(abscissa) if abscissa is not None else default_separations(n)
        local = named_operator(op, 1)
        raw = correlation_series(state, seps, local, label=label)
        fitted, offset = raw, 0.0
    else:
        ds = list(abscissa) if abscissa is not None else default_collars(n, a_size)
        alpha = None if kind == "cmi" else (2.0 if alpha is None else float(alpha))
        raw = cmi_series(state, ds, a_size, alpha, label=label)
        offset = branch_cmi_offset(branch, alpha)
        fitted = DecaySeries(raw.abscissa, [v - offset for v in raw.values], label)
    try:
        xi = markov_length(fitted)
    except InsufficientData:
        xi = None
    side = {"kind": kind, "lambda": lam, "n": n, "branch": branch, "alpha": alpha,
            "a_size": a_size, "operator": op if kind == "corr" else None,
            "plateau_offset": offset, "series": raw.to_dict(), "fits": fitted.to_dict(),
            "markov_length": None if xi is None else {"xi": xi[0], "r2": xi[1]},
            "classification": decay_classify(fitted),
            "strictly_decreasing": _strictly_decreasing(fitted)}
    return raw, side


def _strictly_decreasing(series: DecaySeries) -> bool:
    _, y = series.usable()
    return bool(y.size >= 2 and np.all(np.diff(y) < 0))


def cmd_diag(run: Run, args) -> None:
    kind = args.kind
    lam = float(run.require("lambda"))
    n = _check_n(run.require("n"), MAX_SITES, "diagnostics")
    branch = run.opt("branch", "lambda")
    key = "separations" if kind == "corr" else "collars"
    abscissa = run.config.sweeps.get(key)
    raw, side = diag_series(kind, lam, n, run.seed, branch, run.opt("alpha"),
                            int(run.opt("asize", DEFAULT_A_SIZE)), run.opt("op", "H"), abscissa)
    out = run.path(args.out, f"{kind}_lambda{_fmt_lambda(lam)}.csv")
    write_series_csv(out, raw)
    sidecar = out.with_suffix(".json")
    write_json(sidecar, side)
    run.emitted(out)
    run.emitted(sidecar)
    run.results.update({"classification": side["classification"],
                        "markov_length": side["markov_length"]})
    print(f"wrote {out} and {sidecar}  classification={side['classification']}")


def cmd_diag_sweep(run: Run, args) -> None:
    kind = args.kind
    n = _check_n(run.require("n"), MAX_SITES, "diagnostics")
    lambdas = [float(x) for x in run.sweep("lambdas", args.lambdas, [])]
    if not lambdas:
        raise UsageError("--lambdas is required for a sweep")
    branch = run.opt("branch", "lambda")
    alpha = run.opt("alpha")
    a_size = int(run.opt("asize", DEFAULT_A_SIZE))
    op = run.opt("op", "H")
    key = "separations" if kind == "corr" else "collars"
    abscissa = run.config.sweeps.get(key)
    out_dir = run.path(args.out, "sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    results = pmap(lambda lam: diag_series(kind, lam, n, run.seed, branch, alpha, a_size, op,
                                           abscissa), lambdas, run.threads)
    sides = []
    for lam, (raw, side) in zip(lambdas, results):
        path = out_dir / f"{kind}_lambda{_fmt_lambda(lam)}.csv"
        write_series_csv(path, raw)
        run.emitted(path)
        sides.append(side)
    sidecar = out_dir / f"{kind}_sweep.json"
    write_json(sidecar, {"series": sides})
    run.emitted(sidecar)
    print(f"wrote {len(lambdas)} series to {out_dir}")


# -- Z_N ------------------------------------------------------------------------------------

def cmd_zn_verify(run: Run, args) -> None:
    order = int(run.require("order"))
    run.parameters["deep"] = bool(args.deep)
    for name, value, passed in verify_report(order, args.deep):
        run.check(name, value, passed)
    print_table(run.checks)


# -- figure reproduction -----------------------------------------------------------------------

def reproduce_fig1(run: Run, out_dir: Path, n: int, lambdas: Sequence[float]) -> None:
    """Forward and recovery circuits on both sides of the diagram."""
    n = _check_n(n, RECOVERY_MAX, "fig1")
    tol = run.tolerances
    for which in ("trivial", "nontrivial"):
        rep = circuit_choi_report(circuit_for(which, n))
        run.check(f"{which}_circuit_cptp", rep["choi_min_eigenvalue"],
                  rep["choi_min_eigenvalue"] >= -tol["choi"] and rep["tp_defect"] <= tol["tp"])

    def point(lam):
        which = default_branch(lam)
        rho = build_rho(lam, n, which, state=lambda_state(lam, n, run.seed).state)
        dist = trace_norm(circuit_apply(circuit_for(which, n), rho) - _fixed_target(which, n))
        a_size = 2 if which == "trivial" else 4
        radii = list(range(1, min(3, (n - a_size) // 2) + 1))
        rec = recovery_experiment(lam, n, radii, which, run.seed, tol, choi=False)
        return which, dist, rec

    rows, summary = [], {"E": True, "R": True, "E~": True, "R~": True}
    for lam, (which, dist, rec) in zip(lambdas, pmap(point, lambdas, run.threads)):
        fwd, back = ("E", "R") if which == "trivial" else ("E~", "R~")
        fwd_ok = dist <= tol["exact_map"]
        rows.append([lam, fwd, "trace_distance", dist, fwd_ok])
        ok = rec["eps_nonincreasing"]
        for row in rec["per_radius"]:
            bound = row["eps_full"] <= 2 * row["eps_diag"] + tol["recovery_bound"]
            exact = abs(lam) != 1.0 or row["eps_full"] <= tol["recovery_exact"]
            rows.append([lam, back, f"eps_full_r{row['r']}", row["eps_full"], bound and exact])
            rows.append([lam, back, f"eps_diag_r{row['r']}", row["eps_diag"], bound and exact])
            ok = ok and bound and exact
        summary[fwd] = summary[fwd] and fwd_ok
        summary[back] = summary[back] and ok
    for name, passed in summary.items():
        run.check(f"circuit_{name}", passed, passed)
    path = out_dir / "fig1_table.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda", "circuit", "metric", "value", "passed"])
        for lam, circ, metric, value, passed in rows:
            writer.writerow([repr(float(lam)), circ, metric, repr(float(value)),
                             "PASS" if passed else "FAIL"])
    run.emitted(path)


def reproduce_series(run: Run, out_dir: Path, fig: str, n: int, lambdas: Sequence[float],
                     kinds: Sequence[tuple]) -> List[dict]:
    n = _check_n(n, MAX_SITES, fig)
    jobs = [(kind, alpha, lam) for kind, alpha in kinds for lam in lambdas]
    results = pmap(lambda job: diag_series(job[0], job[2], n, run.seed, alpha=job[1]), jobs,
                   run.threads)
    sides = []
    for (kind, alpha, lam), (raw, side) in zip(jobs, results):
        tag = kind if alpha is None or kind == "cmi" else f"{kind}{alpha:g}"
        path = out_dir / f"{fig}_{tag}_lambda{_fmt_lambda(lam)}.csv"
        write_series_csv(path, raw)
        run.emitted(path)
        sides.append(side)
    sidecar = out_dir / f"{fig}_fits.json"
    write_json(sidecar, {"n": n, "series": sides})
    run.emitted(sidecar)
    return sides


def slower_decay(slow: Sequence[float], fast: Sequence[float], separations: Sequence[int],
                 start: int = 3) -> bool:
    """``|slow| > |fast|`` at every separation ``>= start`` where either is nonzero."""
    pairs = [(abs(a), abs(b)) for s, a, b in zip(separations, slow, fast)
             if s >= start and max(abs(a), abs(b)) > 1e-12]
    return bool(pairs) and all(a > b for a, b in pairs)


def cmd_reproduce(run: Run, args) -> None:
    fig = args.figure
    out_dir = run.path(args.out, fig)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fig == "fig1":
        lambdas = [float(x) for x in run.sweep("lambdas", args.lambdas, FIG1_LAMBDAS)]
        reproduce_fig1(run, out_dir, int(run.opt("n", 8)), lambdas)
    elif fig == "fig3":
        lambdas = [float(x) for x in run.sweep("lambdas", args.lambdas, FIG3_LAMBDAS)]
        sides = reproduce_series(run, out_dir, fig, int(run.opt("n", 12)), lambdas,
                                 [("corr", None)])
        by_lam = {s["lambda"]: s for s in sides}
        for lam, side in by_lam.items():
            if lam == 1.0:
                worst = max(abs(v) for v in side["series"]["values"])
                run.check("corr_lambda1.0_zero", worst, worst <= 1e-12)
            elif lam != 0.0:
                cls = side["classification"]
                run.check(f"corr_lambda{_fmt_lambda(lam)}_not_powerlaw", cls, cls != "powerlaw")
        if 0.0 in by_lam and 0.8 in by_lam:
            a, b = by_lam[0.0]["series"], by_lam[0.8]["series"]
            ok = slower_decay(a["values"], b["values"], a["abscissa"])
            run.check("corr_lambda0_slower_than_0.8", ok, ok)
    else:
        lambdas = [float(x) for x in run.sweep("lambdas", args.lambdas, FIG4_LAMBDAS)]
        alpha = float(run.opt("alpha", 2.0))
        sides = reproduce_series(run, out_dir, fig, int(run.opt("n", 12)), lambdas,
                                 [("cmi", None), ("rcmi", alpha)])
        for side in sides:
            tag = f"{side['kind']}_lambda{_fmt_lambda(side['lambda'])}"
            run.check(f"{tag}_strictly_decreasing", side["strictly_decreasing"],
                      side["strictly_decreasing"])
    run.results["output_dir"] = str(out_dir)
    print_table(run.checks)


# -- parser ------------------------------------------------------------------------------------------

def _lambda_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config with defaults/sweeps/tolerances/output_dir")
    common.add_argument("--out", help="output file or directory (relative to the output dir)")
    common.add_argument("--manifest", help="manifest path (default: manifest.json in the output dir)")
    common.add_argument("--seed", type=int, help="seed for the power-iteration start vector")
    common.add_argument("--threads", type=int, help="worker threads for sweeps")

    def physics(p, *names):
        if "lambda" in names:
            p.add_argument("--lambda", dest="lambda", type=float, help="interpolation parameter")
        if "lambdas" in names:
            p.add_argument("--lambdas", type=_lambda_list, help="comma-separated lambda values")
        if "n" in names:
            p.add_argument("--n", type=int, help="number of sites")
        if "r" in names:
            p.add_argument("--r", type=int, help="largest recovery radius (runs 1..r)")
        if "alpha" in names:
            p.add_argument("--alpha", type=float, help="Renyi index")
        if "asize" in names:
            p.add_argument("--asize", type=int, help="size of region A")
        if "branch" in names:
            p.add_argument("--branch", help="lambda, trivial, nontrivial (or both for state build)")
        if "which" in names:
            p.add_argument("--which", choices=BRANCHES, help="trivial or nontrivial circuit")
        if "order" in names:
            p.add_argument("--order", type=int, help="group order N")
        if "op" in names:
            p.add_argument("--op", choices=("H", "X", "Z"), help="single-site operator")

    parser = _Parser(prog="mplab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mplab {__version__}")
    sub = parser.add_subparsers(dest="group", required=True)

    state = sub.add_parser("state").add_subparsers(dest="action", required=True)
    p = state.add_parser("build", parents=[common], help="fixed point and branch states")
    physics(p, "lambda", "n", "branch")
    p.set_defaults(func=cmd_state_build)

    circ = sub.add_parser("circuit").add_subparsers(dest="action", required=True)
    p = circ.add_parser("apply", parents=[common], help="apply a circuit to a state")
    physics(p, "lambda", "n", "which")
    p.add_argument("--in", dest="input", help="input state container")
    p.set_defaults(func=cmd_circuit_apply)
    p = circ.add_parser("verify", parents=[common], help="lemma suite for a circuit")
    physics(p, "n", "which", "lambdas")
    p.set_defaults(func=cmd_circuit_verify)

    p = sub.add_parser("recover", parents=[common], help="twirled Petz recovery experiment")
    physics(p, "lambda", "n", "r", "which")
    p.set_defaults(func=cmd_recover)

    diag = sub.add_parser("diag").add_subparsers(dest="action", required=True)
    for kind in ("cmi", "rcmi", "corr"):
        p = diag.add_parser(kind, parents=[common])
        physics(p, "lambda", "n", "alpha", "asize", "branch", "op")
        p.set_defaults(func=cmd_diag, kind=kind)
    p = diag.add_parser("sweep", parents=[common], help="batch a diagnostic over lambda")
    physics(p, "lambdas", "n", "alpha", "asize", "branch", "op")
    p.add_argument("--kind", choices=("cmi", "rcmi", "corr"), default="cmi")
    p.set_defaults(func=cmd_diag_sweep)

    zn = sub.add_parser("zn").add_subparsers(dest="action", required=True)
    p = zn.add_parser("verify", parents=[common], help="Z_N cocycle and channel identities")
    physics(p, "order")
    p.add_argument("--deep", action="store_true", help="larger symmetry ring")
    p.set_defaults(func=cmd_zn_verify)

    p = sub.add_parser("reproduce", parents=[common], help="regenerate figure data")
    p.add_argument("figure", choices=("fig1", "fig3", "fig4"))
    physics(p, "n", "lambdas", "alpha")
    p.set_defaults(func=cmd_reproduce)
    return parser


def _command_name(argv: Sequence[str]) -> str:
    words = [a for a in argv if not a.startswith("-")][:2]
    return " ".join(words) or "mplab"


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    start = time.perf_counter()
    run = Run(_command_name(argv), None, Config())
    try:
        args = build_parser().parse_args(argv)
        config = Config.load(args.config) if args.config else Config()
        run = Run(_command_name(argv), args, config)
        run.seed  # records the seed in the parameters
        args.func(run, args)
    except MplabError as exc:
        code = exc.exit_status
        run.write_manifest(time.perf_counter() - start, exc, code)
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return code
    code = 0 if run.all_passed else 1
    path = run.write_manifest(time.perf_counter() - start, exit_code=code)
    print(f"manifest {path}")
    return code


if __name__ == "__main__":
    sys.exit(main())
