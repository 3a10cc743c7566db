"""Experiment drivers: convergence, invariant drift and solver timing."""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .model import PoissonSystem, default_initial_state, make_problem
from .stepper import SolverError, StepConfig, Stepper, integrate
from .tableau import FamilyParams, PcsrkTableau, classic_tableau, fourth_order_family, to_hp

METHODS = ("family", "avf2", "avf4")
DEFAULT_ALPHA_TILDE = -234.0
FLOAT_FMT = "{:.16e}"


def default_ladder(h0: float = 0.25, n: int = 8) -> tuple:
    """Geometric step-size ladder h0 * 2**-k, k = 0..n-1."""
    return tuple(h0 * 2.0**-k for k in range(n))


@dataclass(frozen=True)
class MethodSpec:
    """A method by name; ``family`` parameters default to the optimal ones."""

    name: str = "family"
    c1: Optional[float] = None
    gamma: Optional[tuple] = None
    alpha_tilde: float = DEFAULT_ALPHA_TILDE

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.name!r}")
        if self.gamma is not None and len(self.gamma) != 4:
            raise ValueError("gamma needs four entries")

    def params(self) -> FamilyParams:
        """Exact when every parameter is given as a rational, else 50-digit values."""
        if self.c1 is not None and self.gamma is not None:
            return FamilyParams(self.c1, tuple(self.gamma), self.alpha_tilde)
        opt = FamilyParams.optimal(self.alpha_tilde)
        c1 = opt.c1 if self.c1 is None else to_hp(self.c1)
        gamma = opt.gamma if self.gamma is None else tuple(to_hp(g) for g in self.gamma)
        return FamilyParams(c1, gamma, opt.alpha_tilde)

    def tableau(self) -> PcsrkTableau:
        if self.name == "family":
            return fourth_order_family(self.params().as_float())
        return classic_tableau(self.name)

    @property
    def label(self) -> str:
        if self.name == "family":
            return f"family(alpha_tilde={float(self.alpha_tilde):g})"
        return self.name


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "lotka-volterra"
    problem_params: dict = field(default_factory=dict)
    method: MethodSpec = field(default_factory=MethodSpec)
    ladder: tuple = field(default_factory=default_ladder)
    t_end: float = 1.0
    h: float = 0.05
    ref_factor: int = 64
    y0: Optional[tuple] = None
    solver_mode: str = "auto"
    newton_tol: float = 1e-13
    quad_tol: float = 1e-12
    quad_max_nodes: int = 64
    max_newton_iters: int = 50
    threads: Optional[int] = None
    seed: int = 0
    fit_points: int = 5

    def __post_init__(self):
        lad = tuple(float(h) for h in self.ladder)
        object.__setattr__(self, "ladder", lad)
        if not lad or any(h <= 0 for h in lad):
            raise ValueError("ladder entries must be positive")
        if any(b >= a for a, b in zip(lad, lad[1:])):
            raise ValueError("ladder must be strictly decreasing")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        for h in lad:
            n = self.t_end / h
            if abs(n - round(n)) > 1e-9 * max(1.0, n):
                raise ValueError(f"t_end/h is not integral for h={h!r}")
        if self.ref_factor < 1:
            raise ValueError("ref_factor must be >= 1")
        if self.fit_points < 2:
            raise ValueError("fit_points must be >= 2")

    def system(self) -> PoissonSystem:
        params = dict(self.problem_params)
        if self.problem == "synthetic":
            params.setdefault("seed", str(self.seed))
        return make_problem(self.problem, params)

    def initial_state(self, sys: PoissonSystem) -> np.ndarray:
        if self.y0 is not None:
            return sys.check_state(np.array(self.y0, dtype=float))
        return default_initial_state(sys)

    def step_config(self, h: float, **kw) -> StepConfig:
        return StepConfig(
            h=h,
            newton_tol=self.newton_tol,
            max_newton_iters=self.max_newton_iters,
            solver_mode=self.solver_mode,
            quad_tol=self.quad_tol,
            quad_max_nodes=self.quad_max_nodes,
            threads=self.threads,
            **kw,
        )


# ------------------------------------------------------------------ output


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT.format(float(x))
    return str(x)


def write_csv(path: str, header: Sequence[str], rows) -> None:
    """Comma-separated with a header row; floats in 17 significant digits."""
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


# ------------------------------------------------------------- convergence


@dataclass
class ConvergenceRow:
    h: float
    error: float
    local_slope: float
    status: str = "ok"


@dataclass
class ConvergenceTable:
    method: str
    rows: list
    slope: float
    fit_h: tuple
    reference_h: float
    reference: np.ndarray

    header = ("h", "error", "local_slope", "status")

    def csv_rows(self):
        return [(r.h, r.error, r.local_slope, r.status) for r in self.rows]

    def error_at(self, h: float) -> float:
        for r in self.rows:
            if math.isclose(r.h, h, rel_tol=1e-12):
                return r.error
        raise KeyError(h)

    def summary(self) -> str:
        lines = [f"convergence: {self.method}, reference h = {self.reference_h:.6g}"]
        lines.append(f"{'h':>12} {'error':>12} {'local':>7}  status")
        for r in self.rows:
            lines.append(f"{r.h:12.6g} {r.error:12.4e} {r.local_slope:7.3f}  {r.status}")
        fit = ", ".join(f"{h:g}" for h in self.fit_h)
        lines.append(f"least-squares slope {self.slope:.4f} over h = {fit}")
        return "\n".join(lines)


def fit_slope(hs, errs) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def converge(cfg: ExperimentConfig) -> ConvergenceTable:
    """Error at t_end for every ladder entry against a tiny-step self-reference.

    The reference is the same method at ``min(ladder) / ref_factor`` (started
    from an extrapolated Newton guess, which only speeds it up). Errors are
    Euclidean. Failed rows are kept with their status and left out of the fit,
    which uses the ``fit_points`` smallest successful step sizes.
    """
    sys = cfg.system()
    y0 = cfg.initial_state(sys)
    tab = cfg.method.tableau()
    h_ref = min(cfg.ladder) / cfg.ref_factor
    ref = integrate(sys, tab, y0, h_ref, cfg.t_end, cfg.step_config(h_ref, warm_start=True))
    if not ref.ok:
        raise SolverError(f"reference solution failed: {ref.error}")
    rows = []
    prev = None
    for h in cfg.ladder:
        tr = integrate(sys, tab, y0, h, cfg.t_end, cfg.step_config(h))
        if not tr.ok:
            rows.append(ConvergenceRow(h, float("nan"), float("nan"), f"failed: {tr.error}".replace(",", ";")))
            prev = None
            continue
        err = float(np.linalg.norm(tr.final - ref.final))
        local = float("nan")
        if prev is not None and err > 0 and prev[1] > 0:
            local = math.log(prev[1] / err) / math.log(prev[0] / h)
        rows.append(ConvergenceRow(h, err, local))
        prev = (h, err)
    good = [r for r in rows if r.status == "ok" and r.error > 0]
    good = sorted(good, key=lambda r: r.h)[: cfg.fit_points]
    slope = fit_slope([r.h for r in good], [r.error for r in good]) if len(good) >= 2 else float("nan")
    return ConvergenceTable(
        cfg.method.label, rows, slope, tuple(sorted(r.h for r in good)), h_ref, ref.final
    )


# ------------------------------------------------------------------- drift


@dataclass
class DriftTable:
    times: np.ndarray
    d_energy: np.ndarray
    d_invariants: dict
    error: Optional[BaseException] = None

    @property
    def max_energy_drift(self) -> float:
        return float(np.nanmax(np.abs(self.d_energy)))

    @property
    def max_invariant_drift(self) -> dict:
        return {k: float(np.nanmax(np.abs(v))) for k, v in self.d_invariants.items()}

    @property
    def header(self):
        return ("t", "dH") + tuple(f"d{k}" for k in self.d_invariants)

    def csv_rows(self):
        cols = [self.times, self.d_energy] + list(self.d_invariants.values())
        return list(zip(*cols))

    def summary(self) -> str:
        lines = [f"drift over t in [0, {self.times[-1]:g}], {len(self.times) - 1} steps"]
        lines.append(f"max |H - H0| = {self.max_energy_drift:.3e}")
        for k, v in self.max_invariant_drift.items():
            lines.append(f"max |{k} - {k}0| = {v:.3e}")
        if self.error is not None:
            lines.append(f"aborted: {self.error}")
        return "\n".join(lines)


def drift(cfg: ExperimentConfig) -> DriftTable:
    """Energy and invariant errors along a fixed-step run with step ``cfg.h``."""
    sys = cfg.system()
    y0 = cfg.initial_state(sys)
    tr = integrate(sys, cfg.method.tableau(), y0, cfg.h, cfg.t_end, cfg.step_config(cfg.h))
    inv = {k: v - v[0] for k, v in tr.invariants.items()}
    return DriftTable(tr.times, tr.energy - tr.energy[0], inv, tr.error)


# ------------------------------------------------------------------- bench


@dataclass(frozen=True)
class BenchConfig:
    dim: int = 300
    seed: int = 0
    h: float = 0.05
    steps: int = 3
    threads: Optional[int] = None
    alpha_tilde: float = DEFAULT_ALPHA_TILDE


@dataclass
class BenchRow:
    label: str
    solver_mode: str
    threads: int
    seconds_per_step: float
    final: np.ndarray = field(repr=False)


@dataclass
class BenchTable:
    rows: list
    cpu_count: int

    header = ("label", "solver_mode", "threads", "seconds_per_step")

    def csv_rows(self):
        return [(r.label, r.solver_mode, r.threads, r.seconds_per_step) for r in self.rows]

    def row(self, label: str) -> BenchRow:
        return next(r for r in self.rows if r.label == label)

    @property
    def ratios(self) -> dict:
        t = {r.label: r.seconds_per_step for r in self.rows}
        return {
            "full/block": t["family-full"] / t["family-block-1"],
            "block-1/block-n": t["family-block-1"] / t["family-block-n"],
            "avf4-full/family-block-n": t["avf4-full"] / t["family-block-n"],
        }

    @property
    def max_discrepancy(self) -> float:
        """Largest relative difference between the family results of the different modes."""
        fam = [r.final for r in self.rows if r.label.startswith("family")]
        ref = fam[0]
        return max(float(np.linalg.norm(f - ref) / np.linalg.norm(ref)) for f in fam)

    def summary(self) -> str:
        lines = [f"bench (cpu_count={self.cpu_count})"]
        for r in self.rows:
            lines.append(f"{r.label:16s} {r.solver_mode:5s} threads={r.threads:<2d} {r.seconds_per_step * 1e3:9.3f} ms/step")
        for k, v in self.ratios.items():
            lines.append(f"ratio {k}: {v:.2f}")
        lines.append(f"max relative discrepancy between modes: {self.max_discrepancy:.2e}")
        return "\n".join(lines)


def _time_run(sys, tab, y0, cfg: StepConfig, steps: int):
    y = y0
    with Stepper(sys, tab, cfg) as stp:
        stp.step(y)  # warm-up: thread pool, rule cache
        t0 = time.perf_counter()
        for _ in range(steps):
            y, _, _ = stp.step(y)
        dt = (time.perf_counter() - t0) / steps
    return dt, y


def bench(cfg: BenchConfig) -> BenchTable:
    """Per-step wall time of the block and full solvers on the synthetic problem.

    Informational only: the result depends on the machine (see ``cpu_count``).
    """
    sys = make_problem("synthetic", {"dim": str(cfg.dim), "seed": str(cfg.seed)})
    y0 = default_initial_state(sys)
    fam = MethodSpec("family", alpha_tilde=cfg.alpha_tilde).tableau()
    n_threads = cfg.threads or fam.s
    runs = [
        ("family-block-1", fam, "block", 1),
        ("family-block-n", fam, "block", n_threads),
        ("family-full", fam, "full", 1),
        ("avf4-full", classic_tableau("avf4"), "full", 1),
    ]
    rows = []
    for label, tab, mode, thr in runs:
        sc = StepConfig(h=cfg.h, solver_mode=mode, threads=thr)
        dt, y = _time_run(sys, tab, y0, sc, cfg.steps)
        rows.append(BenchRow(label, mode, thr, dt, y))
    return BenchTable(rows, os.cpu_count() or 1)
