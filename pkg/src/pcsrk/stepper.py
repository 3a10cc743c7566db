"""One-step map of a PCSRK method for Poisson systems.

The unknowns are the stage values ``Z_i = Y_{c_i}``; the continuous stage is
the Lagrange interpolant through ``(0, y0), (c_1, Z_1), ..., (c_s, Z_s)``.
Stage equations are solved by simplified Newton with the frozen matrix
``I - h E (x) J0``, ``J0 = S(y0) Hess H(y0)``, either as one dense system or,
after diagonalising E, as s independent d x d systems.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

from .model import PoissonSystem
from .quad import DEFAULT_START, DEFAULT_TOL, MAX_NODES, QuadratureError, gauss_legendre, integrate_vec
from .tableau import DefectiveSpectrumError, PcsrkTableau, e_matrix, r_vec, v_vec

SOLVER_MODES = ("auto", "full", "block")
REFRESH_MODES = ("per_step", "frozen")
DIVERGENCE_FACTOR = 1e3


class SolverError(RuntimeError):
    """A step could not be completed."""


class NewtonDivergedError(SolverError):
    pass


class MaxIterationsError(SolverError):
    pass


@dataclass(frozen=True)
class StepConfig:
    h: float
    newton_tol: float = 1e-13
    max_newton_iters: int = 50
    solver_mode: str = "auto"
    quad_tol: float = DEFAULT_TOL
    quad_max_nodes: int = MAX_NODES
    jacobian_refresh: str = "per_step"
    threads: Optional[int] = None
    warm_start: bool = False

    def __post_init__(self):
        h = float(self.h)
        if not np.isfinite(h):
            raise ValueError("h must be finite")
        if self.newton_tol <= 0 or self.quad_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        if self.solver_mode not in SOLVER_MODES:
            raise ValueError(f"solver_mode must be one of {SOLVER_MODES}")
        if self.jacobian_refresh not in REFRESH_MODES:
            raise ValueError(f"jacobian_refresh must be one of {REFRESH_MODES}")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not 1 <= self.quad_max_nodes <= MAX_NODES:
            raise ValueError(f"quad_max_nodes must be in [1, {MAX_NODES}]")


def lagrange_matrix(nodes: np.ndarray, tau) -> np.ndarray:
    """``L[k, i] = l_i(tau_k)`` by the product formula (exact at the nodes)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    n = len(nodes)
    out = np.ones((tau.size, n))
    for i in range(n):
        for k in range(n):
            if k != i:
                out[:, i] *= (tau - nodes[k]) / (nodes[i] - nodes[k])
    return out


@dataclass
class StageState:
    stage_values: np.ndarray
    base: np.ndarray
    nodes: np.ndarray

    def dense_eval(self, tau) -> np.ndarray:
        """Y_tau; a scalar tau gives a state, an array gives stacked states."""
        scalar = np.ndim(tau) == 0
        L = lagrange_matrix(self.nodes, tau)
        out = L @ np.vstack([self.base[None, :], self.stage_values])
        return out[0] if scalar else out


def dense_eval(st: StageState, tau) -> np.ndarray:
    return st.dense_eval(tau)


@dataclass
class StepReport:
    iterations: int
    final_residual_norm: float
    solver_mode_used: str
    factorization_count: int
    wall_time: float
    residual_norm: float = 0.0
    quad_nodes: int = 0


def _rows(fn, ys: np.ndarray, vectorized: bool) -> np.ndarray:
    if vectorized:
        return np.asarray(fn(ys), dtype=float)
    return np.array([np.asarray(fn(y), dtype=float) for y in ys])


class Stepper:
    """Reusable one-step map for a fixed (system, tableau, config).

    Holds the kernel arrays, the spectral data of E and, for
    ``jacobian_refresh="frozen"``, the factorizations of the first step.
    Use as a context manager (or call :meth:`close`) to release worker threads.
    """

    def __init__(self, sys: PoissonSystem, tab: PcsrkTableau, cfg: StepConfig):
        self.sys, self.tab, self.cfg = sys, tab, cfg
        s = tab.s
        m = np.array(tab.m_list, dtype=float)
        self.nodes = np.concatenate([[0.0], np.asarray(tab.c, dtype=float)])
        # K[i, j, q] = r(c_i)^T M_j e_q ; K1[j, q] = r(1)^T M_j e_q
        self.k_stage = np.einsum("ip,jpq->ijq", r_vec(tab.c, s), m)
        self.k_final = np.einsum("p,jpq->jq", r_vec(1.0, s), m)
        self._lag = {}
        self.spectral = None
        self.spectral_error = None
        try:
            self.spectral = e_matrix(tab)
        except DefectiveSpectrumError as exc:
            self.spectral_error = exc
        self.e = self.spectral.e if self.spectral is not None else None
        if self.e is None:
            from .tableau import e_matrix_only

            self.e = e_matrix_only(tab)
        self.mode = self._resolve_mode()
        self.threads = cfg.threads or max(1, min(s, os.cpu_count() or 1))
        self._pool = None
        self._frozen = None
        # node count of the fixed rule used inside Newton; carried across steps
        self._n = min(DEFAULT_START, cfg.quad_max_nodes // 2) or 1

    # ---------------------------------------------------------------- setup
    def _resolve_mode(self) -> str:
        mode = self.cfg.solver_mode
        if mode == "auto":
            ok = self.spectral is not None and self.spectral.real_distinct
            return "block" if ok else "full"
        if mode == "block" and self.spectral is None:
            raise self.spectral_error
        return mode

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _map(self, fn, items):
        if self.threads == 1 or len(items) == 1:
            return [fn(x) for x in items]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.threads)
        return list(self._pool.map(fn, items))

    # ------------------------------------------------------------ residual
    def _rule(self, n: int):
        """(Lagrange matrix at the nodes, weighted monomials) of the n-point rule."""
        cached = self._lag.get(n)
        if cached is None:
            rule = gauss_legendre(n)
            cached = (lagrange_matrix(self.nodes, rule.nodes), rule.weights[:, None] * v_vec(rule.nodes, self.tab.s))
            self._lag[n] = cached
        return cached

    def moments(self, y0: np.ndarray, z: np.ndarray, n: Optional[int] = None) -> np.ndarray:
        """G[q] = int_0^1 sigma^q grad H(Y_sigma) d sigma, shape (s, d).

        With ``n`` the n-point rule is used as is; otherwise adaptively.
        """
        pts = np.vstack([y0[None, :], z])
        if n is not None:
            lag, wv = self._rule(n)
            g = _rows(self.sys.grad_h, lag @ pts, self.sys.vectorized)
            return wv.T @ g
        s = self.tab.s

        def f(sigma):
            ys = lagrange_matrix(self.nodes, sigma) @ pts
            g = _rows(self.sys.grad_h, ys, self.sys.vectorized)
            return v_vec(sigma, s)[:, :, None] * g[:, None, :]

        return integrate_vec(f, tol=self.cfg.quad_tol, n_max=self.cfg.quad_max_nodes, vectorized=True)

    def s_stages(self, z: np.ndarray) -> np.ndarray:
        return _rows(self.sys.s_matrix, z, self.sys.vectorized)

    def residual(self, y0: np.ndarray, z: np.ndarray, h: float, n: Optional[int] = None):
        """(Phi, G) with Phi_i = Z_i - y0 - h sum_j S(Z_j) r(c_i)^T M_j G."""
        g = self.moments(y0, z, n)
        sz = self.s_stages(z)
        w = np.einsum("ijq,qd->ijd", self.k_stage, g)
        phi = z - y0 - h * np.einsum("jab,ijb->ia", sz, w)
        return phi, g

    def update(self, y0: np.ndarray, z: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
        sz = self.s_stages(z)
        return y0 + h * np.einsum("jab,jb->a", sz, self.k_final @ g)

    # -------------------------------------------------------- linear solve
    def jacobian(self, y0: np.ndarray) -> np.ndarray:
        return self.sys.s_matrix(y0) @ self.sys.hessian(y0)

    def factorize(self, y0: np.ndarray, h: float):
        """Factor the simplified Newton matrix; returns (solve, factorization count)."""
        if self.cfg.jacobian_refresh == "frozen" and self._frozen is not None and self._frozen[0] == h:
            return self._frozen[1], 0
        j0 = self.jacobian(y0)
        d = j0.shape[0]
        s = self.tab.s
        if self.mode == "full":
            lu = sla.lu_factor(np.eye(s * d) - h * np.kron(self.e, j0), check_finite=False)

            def solve(phi):
                return sla.lu_solve(lu, -phi.reshape(-1), check_finite=False).reshape(s, d)

            count = 1
        else:
            sp = self.spectral
            complex_ = np.iscomplexobj(sp.eigenvalues) or np.iscomplexobj(sp.t)
            eye = np.eye(d)
            blocks = self._map(lambda lam: sla.lu_factor(eye - h * lam * j0, check_finite=False), list(sp.eigenvalues))

            def solve(phi):
                rhs = -(sp.t_inv @ phi)
                rho_t = self._map(lambda i: sla.lu_solve(blocks[i], rhs[i], check_finite=False), list(range(s)))
                rho = sp.t @ np.array(rho_t)
                return rho.real if complex_ else rho

            count = s
        if self.cfg.jacobian_refresh == "frozen":
            self._frozen = (h, solve)
        return solve, count

    # -------------------------------------------------------------- newton
    def newton_solve(self, y0, z_init=None, h=None):
        """Solve the stage equations; returns (StageState, StepReport, G).

        Iterations use a fixed Gauss-Legendre rule so that the discrete
        equations do not change between iterates. At convergence the rule is
        checked against the doubled one (gap <= quad_tol); if the check fails
        the rule is doubled and iteration resumes.
        """
        t_start = time.perf_counter()
        y0 = self.sys.check_state(y0)
        h = self.cfg.h if h is None else float(h)
        s = self.tab.s
        z = np.tile(y0, (s, 1)) if z_init is None else np.array(z_init, dtype=float)
        scale = max(1.0, float(np.max(np.abs(y0))))
        tol = self.cfg.newton_tol * scale
        n = self._n
        phi, g = self.residual(y0, z, h, n)
        phi_norm = float(np.max(np.abs(phi)))
        phi0 = phi_norm
        solve = None
        n_fact = 0
        iters = 0
        rho_norm = 0.0
        grown = 0
        converged = phi_norm == 0.0
        while True:
            if converged:
                g_fine = self.moments(y0, z, 2 * n)
                gap = float(np.max(np.abs(g_fine - g)))
                if gap <= self.cfg.quad_tol:
                    g = g_fine
                    break
                if 4 * n > self.cfg.quad_max_nodes:
                    raise QuadratureError(g_fine, gap, 2 * n)
                n *= 2
                phi, g = self.residual(y0, z, h, n)
                phi_norm = float(np.max(np.abs(phi)))
                converged = phi_norm == 0.0
                continue
            if iters >= self.cfg.max_newton_iters:
                raise MaxIterationsError(f"newton: max iterations ({iters}) reached, last update {rho_norm:.3e}")
            if solve is None:
                solve, n_fact = self.factorize(y0, h)
            rho = solve(phi)
            rho_norm = float(np.max(np.abs(rho)))
            z = z + rho
            iters += 1
            phi, g = self.residual(y0, z, h, n)
            phi_norm = float(np.max(np.abs(phi)))
            if not (np.isfinite(phi_norm) and np.isfinite(rho_norm)):
                raise NewtonDivergedError("newton diverged: non-finite iterate")
            grown = grown + 1 if phi_norm > DIVERGENCE_FACTOR * phi0 else 0
            if grown >= 2:
                raise NewtonDivergedError(f"newton diverged: residual {phi_norm:.3e} from {phi0:.3e}")
            converged = rho_norm <= tol
        self._n = n
        st = StageState(z, y0, self.nodes)
        rep = StepReport(iters, rho_norm, self.mode, n_fact, time.perf_counter() - t_start, phi_norm, 2 * n)
        return st, rep, g

    def step(self, y0, z_init=None, h=None):
        """Advance one step; returns (y1, StepReport, StageState)."""
        t_start = time.perf_counter()
        h = self.cfg.h if h is None else float(h)
        st, rep, g = self.newton_solve(y0, z_init, h)
        y1 = self.update(st.base, st.stage_values, g, h)
        rep.wall_time = time.perf_counter() - t_start
        return y1, rep, st


def newton_solve(sys: PoissonSystem, tab: PcsrkTableau, y0, cfg: StepConfig):
    """Solve the stage equations of one step; returns (StageState, StepReport)."""
    with Stepper(sys, tab, cfg) as stp:
        st, rep, _ = stp.newton_solve(y0)
    return st, rep


def residual(sys: PoissonSystem, tab: PcsrkTableau, st: StageState, cfg: StepConfig) -> np.ndarray:
    """Stacked stage residual Phi(Y) (length s*d)."""
    with Stepper(sys, tab, cfg) as stp:
        phi, _ = stp.residual(np.asarray(st.base, float), np.asarray(st.stage_values, float), cfg.h)
    return phi.reshape(-1)


def step(sys: PoissonSystem, tab: PcsrkTableau, y0, cfg: StepConfig):
    """One step of the method; returns (y1, StepReport)."""
    with Stepper(sys, tab, cfg) as stp:
        y1, rep, _ = stp.step(y0)
    return y1, rep


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    invariants: dict
    reports: list
    error: Optional[BaseException] = None
    steps_requested: int = 0

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _safe(fn, y) -> float:
    try:
        return float(fn(y))
    except ValueError:
        return float("nan")


def n_steps_for(h: float, t_end: float) -> int:
    """Number of fixed steps of size h covering [0, t_end]; must be integral."""
    if h == 0:
        if t_end == 0:
            return 0
        raise ValueError("h = 0 cannot reach t_end != 0")
    n = t_end / h
    k = int(round(n))
    if k < 0 or abs(k - n) > 1e-9 * max(1.0, abs(n)):
        raise ValueError(f"t_end/h = {n!r} is not a non-negative integer")
    return k


def integrate(sys: PoissonSystem, tab: PcsrkTableau, y0, h: float, t_end: float, cfg: Optional[StepConfig] = None):
    """Fixed-step integration over [0, t_end].

    On a failed step the trajectory up to the last successful state is
    returned with ``error`` set.
    """
    cfg = replace(cfg, h=h) if cfg is not None else StepConfig(h=h)
    y = sys.check_state(y0)
    n = n_steps_for(h, t_end)
    states = [y]
    reports = []
    error = None
    z_guess = None
    with Stepper(sys, tab, cfg) as stp:
        for k in range(n):
            try:
                y_new, rep, st = stp.step(y, z_guess)
            except (SolverError, ArithmeticError, ValueError) as exc:
                error = exc
                break
            if cfg.warm_start:
                z_guess = st.dense_eval(1.0 + stp.nodes[1:])
            y = y_new
            states.append(y)
            reports.append(rep)
    states = np.array(states)
    times = h * np.arange(len(states))
    energy = np.array([_safe(sys.energy, x) for x in states])
    invariants = {name: np.array([_safe(fn, x) for x in states]) for name, fn in sys.invariants.items()}
    return Trajectory(times, states, energy, invariants, reports, error, n)


# --------------------------------------------------------------- CSRK oracle


def csrk_step(sys: PoissonSystem, m, y0, h: float, tol: float = 1e-14) -> np.ndarray:
    """One step of the plain CSRK method with matrix M, written independently.

    ``Y_tau = y0 + sum_p a_p tau^p`` with ``a_p = (h/p) sum_q M[p-1, q] int sigma^q
    f(Y_sigma)``, ``f = S grad H`` evaluated along the continuous stage; the
    coefficients are found by a general nonlinear solver. Used as an oracle for
    the constant-S reduction of PCSRK methods.
    """
    m = np.asarray(m, dtype=float)
    s = m.shape[0]
    y0 = np.asarray(y0, dtype=float)
    d = y0.size
    rule = gauss_legendre(32)
    powers = rule.nodes[:, None] ** np.arange(s + 1)

    def stage(a):
        return y0 + powers[:, 1:] @ a

    def eqs(flat):
        a = flat.reshape(s, d)
        ys = stage(a)
        f = np.array([sys.vector_field(y) for y in ys])
        mom = np.einsum("n,nq,nd->qd", rule.weights, powers[:, :s], f)
        rhs = h * (m @ mom) / np.arange(1, s + 1)[:, None]
        return (a - rhs).reshape(-1)

    sol = sopt.root(eqs, np.zeros(s * d), method="hybr", tol=tol)
    # hybr may stall at rounding level without reporting success
    scale = max(1.0, float(np.max(np.abs(y0))))
    if not sol.success and not np.max(np.abs(eqs(sol.x))) <= 1e-13 * scale:
        raise SolverError(f"csrk oracle failed: {sol.message}")
    return y0 + sol.x.reshape(s, d).sum(axis=0)
