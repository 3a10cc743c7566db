"""Poisson systems dy/dt = S(y) grad H(y) and the shipped test problems.

All evaluation functions of the shipped problems broadcast over leading axes,
so ``grad_h`` can be called on a stack of states of shape ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

SKEW_TOL = 1e-12
CASIMIR_TOL = 1e-10


class DomainError(ValueError):
    """State outside the domain of a problem (e.g. log of a non-positive entry)."""


class InvariantCheckError(ValueError):
    """A candidate invariant failed its numerical self-check."""


@dataclass(frozen=True)
class PoissonSystem:
    dim: int
    s_matrix: Callable[[np.ndarray], np.ndarray]
    grad_h: Callable[[np.ndarray], np.ndarray]
    energy: Callable[[np.ndarray], float]
    hess_h: Optional[Callable[[np.ndarray], np.ndarray]] = None
    invariants: Mapping[str, Callable[[np.ndarray], float]] = field(default_factory=dict)
    name: str = "custom"
    vectorized: bool = False

    def vector_field(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.s_matrix(y) @ self.grad_h(y)

    def hessian(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.hess_h is not None:
            return np.asarray(self.hess_h(y), dtype=float)
        return fd_hessian(self, y)

    def check_state(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dim,):
            raise ValueError(f"state must have shape ({self.dim},), got {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("state has non-finite entries")
        return y


def fd_hessian(sys: PoissonSystem, y, step: Optional[float] = None) -> np.ndarray:
    """Symmetrized central-difference Hessian of ``sys.energy`` from ``grad_h``."""
    y = np.asarray(y, dtype=float)
    if step is None:
        step = np.cbrt(np.finfo(float).eps) * max(1.0, float(np.linalg.norm(y)))
    if step <= 0:
        raise ValueError("step must be positive")
    d = y.size
    out = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        gp = np.asarray(sys.grad_h(y + e), dtype=float)
        gm = np.asarray(sys.grad_h(y - e), dtype=float)
        if not (np.all(np.isfinite(gp)) and np.all(np.isfinite(gm))):
            raise FloatingPointError("non-finite gradient during finite differencing")
        out[:, j] = (gp - gm) / (2.0 * step)
    return 0.5 * (out + out.T)


def skew_residual(s: np.ndarray) -> float:
    """max |S + S^T| relative to max(1, max |S|)."""
    s = np.asarray(s, dtype=float)
    return float(np.max(np.abs(s + np.swapaxes(s, -1, -2))) / max(1.0, np.max(np.abs(s))))


def lotka_volterra(a=-2.0, b=-1.0, c=-0.5, nu=1.0, mu=2.0, relaxed_domain=False) -> PoissonSystem:
    """Three-species Lotka-Volterra system in Poisson form.

    Registers the Casimir ``-ln(y1)/c - b ln(y2) + ln(y3)`` as the invariant
    ``"casimir"`` after checking numerically that it annihilates S(y). For
    ``abc = -1`` (the default parameters) this is ``ab ln y1 - b ln y2 + ln y3``.

    ``grad H`` only involves ``1/y2`` and ``1/y3``. With ``relaxed_domain`` it is
    evaluated wherever those are nonzero, so intermediate stage paths may leave
    the positive octant (large steps); states and invariants stay guarded.
    """
    a, b, c, nu, mu = (float(v) for v in (a, b, c, nu, mu))
    if not all(np.isfinite([a, b, c, nu, mu])):
        raise ValueError("parameters must be finite")
    if c == 0.0:
        raise ValueError("c must be nonzero")

    def guard(y, need_y1=False):
        y = np.asarray(y, dtype=float)
        if np.any(y[..., 1] <= 0) or np.any(y[..., 2] <= 0):
            raise DomainError("Lotka-Volterra requires y2 > 0 and y3 > 0")
        if need_y1 and np.any(y[..., 0] <= 0):
            raise DomainError("Casimir requires y1 > 0")
        return y

    def s_matrix(y):
        y = np.asarray(y, dtype=float)
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        out = np.zeros(y.shape[:-1] + (3, 3))
        out[..., 0, 1] = c * y1 * y2
        out[..., 0, 2] = b * c * y1 * y3
        out[..., 1, 2] = -y2 * y3
        out[..., 1, 0] = -out[..., 0, 1]
        out[..., 2, 0] = -out[..., 0, 2]
        out[..., 2, 1] = -out[..., 1, 2]
        return out

    def energy(y):
        y = guard(y)
        return a * b * y[..., 0] + y[..., 1] - a * y[..., 2] + nu * np.log(y[..., 1]) - mu * np.log(y[..., 2])

    def field_guard(y):
        if not relaxed_domain:
            return guard(y)
        y = np.asarray(y, dtype=float)
        if np.any(y[..., 1] == 0) or np.any(y[..., 2] == 0):
            raise DomainError("Lotka-Volterra gradient is singular at y2 = 0 or y3 = 0")
        return y

    def grad_h(y):
        y = field_guard(y)
        g = np.empty(y.shape)
        g[..., 0] = a * b
        g[..., 1] = 1.0 + nu / y[..., 1]
        g[..., 2] = -a - mu / y[..., 2]
        return g

    def hess_h(y):
        y = field_guard(y)
        out = np.zeros(y.shape[:-1] + (3, 3))
        out[..., 1, 1] = -nu / y[..., 1] ** 2
        out[..., 2, 2] = mu / y[..., 2] ** 2
        return out

    def casimir(y):
        y = guard(y, need_y1=True)
        return -np.log(y[..., 0]) / c - b * np.log(y[..., 1]) + np.log(y[..., 2])

    def casimir_grad(y):
        y = guard(y, need_y1=True)
        return np.stack([-1.0 / (c * y[..., 0]), -b / y[..., 1], 1.0 / y[..., 2]], axis=-1)

    rng = np.random.default_rng(12345)
    ys = rng.uniform(0.1, 5.0, size=(100, 3))
    flow = np.einsum("nij,nj->ni", s_matrix(ys), grad_h(ys))
    ratio = np.abs(np.sum(casimir_grad(ys) * flow, axis=-1)) / np.linalg.norm(grad_h(ys), axis=-1)
    if np.max(ratio) > CASIMIR_TOL:
        raise InvariantCheckError(f"Casimir candidate fails: max ratio {np.max(ratio):.3e}")

    return PoissonSystem(
        dim=3,
        s_matrix=s_matrix,
        grad_h=grad_h,
        energy=energy,
        hess_h=hess_h,
        invariants={"casimir": casimir},
        name="lotka-volterra",
        vectorized=True,
    )


def constant_s_quadratic(S, A, b=None) -> PoissonSystem:
    """H(y) = y^T A y / 2 + b^T y with a constant skew-symmetric structure matrix."""
    S = np.array(S, dtype=float)
    A = np.array(A, dtype=float)
    d = S.shape[0]
    b = np.zeros(d) if b is None else np.array(b, dtype=float)
    if S.shape != (d, d) or A.shape != (d, d) or b.shape != (d,):
        raise ValueError("inconsistent shapes")
    if np.max(np.abs(S + S.T)) > 1e-14 * max(1.0, np.max(np.abs(S))):
        raise ValueError("S is not skew-symmetric")
    if np.max(np.abs(A - A.T)) > 1e-14 * max(1.0, np.max(np.abs(A))):
        raise ValueError("A is not symmetric")
    for arr in (S, A, b):
        arr.setflags(write=False)

    def s_matrix(y):
        y = np.asarray(y)
        return np.broadcast_to(S, y.shape[:-1] + (d, d))

    def grad_h(y):
        return np.asarray(y, dtype=float) @ A + b

    def energy(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", y, A, y) + y @ b

    def hess_h(y):
        y = np.asarray(y)
        return np.broadcast_to(A, y.shape[:-1] + (d, d)).copy()

    return PoissonSystem(d, s_matrix, grad_h, energy, hess_h, {}, "quadratic", True)


def synthetic_quartic(dim: int, seed: int = 0, quartic: float = 0.1) -> PoissonSystem:
    """Dense random test problem: constant skew S, H = y^T A y / 2 + quartic * sum(y^4) / 4."""
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((dim, dim))
    A = (Q + Q.T) / (2.0 * np.sqrt(dim)) + 2.0 * np.eye(dim)
    R = rng.standard_normal((dim, dim))
    S = (R - R.T) / (2.0 * np.sqrt(dim))
    for arr in (A, S):
        arr.setflags(write=False)

    def s_matrix(y):
        y = np.asarray(y)
        return np.broadcast_to(S, y.shape[:-1] + (dim, dim))

    def grad_h(y):
        y = np.asarray(y, dtype=float)
        return y @ A + quartic * y**3

    def energy(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", y, A, y) + 0.25 * quartic * np.sum(y**4, axis=-1)

    def hess_h(y):
        y = np.asarray(y, dtype=float)
        return A + np.diag(3.0 * quartic * y**2)

    return PoissonSystem(dim, s_matrix, grad_h, energy, hess_h, {}, "synthetic", True)


def _parse_matrix(text: str) -> np.ndarray:
    rows = [[float(x) for x in row.split(",")] for row in text.split(";")]
    return np.array(rows)


def make_problem(name: str, params: Optional[Mapping[str, str]] = None) -> PoissonSystem:
    """Build a shipped problem from its name and ``key=value`` style parameters.

    ``quadratic`` takes ``S``, ``A`` as ``;``-separated rows of ``,``-separated
    numbers and optional ``b``; it defaults to the harmonic oscillator.
    """
    params = dict(params or {})
    if name == "lotka-volterra":
        relaxed = params.pop("relaxed_domain", "false").strip().lower()
        if relaxed not in ("true", "false", "1", "0"):
            raise ValueError(f"relaxed_domain must be true or false, got {relaxed!r}")
        allowed = {"a", "b", "c", "nu", "mu"}
        unknown = set(params) - allowed
        if unknown:
            raise ValueError(f"unknown lotka-volterra parameters: {sorted(unknown)}")
        kw = {k: float(v) for k, v in params.items()}
        return lotka_volterra(**kw, relaxed_domain=relaxed in ("true", "1"))
    if name == "quadratic":
        S = _parse_matrix(params.pop("S", "0,-1;1,0"))
        A = _parse_matrix(params.pop("A", "1,0;0,1"))
        b = params.pop("b", None)
        if params:
            raise ValueError(f"unknown quadratic parameters: {sorted(params)}")
        b = None if b is None else np.array([float(x) for x in b.split(",")])
        return constant_s_quadratic(S, A, b)
    if name == "synthetic":
        dim = int(params.pop("dim", 300))
        seed = int(params.pop("seed", 0))
        quartic = float(params.pop("quartic", 0.1))
        if params:
            raise ValueError(f"unknown synthetic parameters: {sorted(params)}")
        return synthetic_quartic(dim, seed, quartic)
    raise ValueError(f"unknown problem {name!r}")


DEFAULT_INITIAL = {
    "lotka-volterra": (1.0, 1.9, 0.5),
    "quadratic": (1.0, 0.0),
}


def default_initial_state(sys: PoissonSystem) -> np.ndarray:
    if sys.name in DEFAULT_INITIAL and len(DEFAULT_INITIAL[sys.name]) == sys.dim:
        return np.array(DEFAULT_INITIAL[sys.name], dtype=float)
    rng = np.random.default_rng(1)
    return 0.5 * rng.standard_normal(sys.dim) / np.sqrt(sys.dim)
