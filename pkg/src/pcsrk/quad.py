"""Gauss-Legendre quadrature on [0, 1] with adaptive node doubling."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

DEFAULT_TOL = 1e-12
DEFAULT_START = 8
MAX_NODES = 64


class QuadratureError(ArithmeticError):
    """Raised when doubling reaches the node cap without meeting the tolerance."""

    def __init__(self, estimate: np.ndarray, gap: float, n: int):
        self.estimate = estimate
        self.gap = gap
        self.n = n
        super().__init__(f"quadrature not converged: gap {gap:.3e} at n={n}")


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum over the leading (node) axis of ``values``."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule mapped to [0, 1] (exact for degree 2n-1)."""
    if not 1 <= n <= MAX_NODES:
        raise ValueError(f"number of nodes must be in [1, {MAX_NODES}], got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


def _estimate(f: Callable, n: int, vectorized: bool) -> np.ndarray:
    rule = gauss_legendre(n)
    if vectorized:
        vals = np.asarray(f(rule.nodes), dtype=float)
    else:
        vals = np.array([np.asarray(f(x), dtype=float) for x in rule.nodes])
    return rule.apply(vals)


def integrate_fixed(f: Callable, n: int, vectorized: bool = False) -> np.ndarray:
    """Integrate ``f`` over [0, 1] with the n-point rule (no error control)."""
    return _estimate(f, n, vectorized)


def adaptive_rule(
    f: Callable,
    tol: float = DEFAULT_TOL,
    n_start: int = DEFAULT_START,
    n_max: int = MAX_NODES,
    vectorized: bool = False,
):
    """Like :func:`integrate_vec` but also returns the node count of the accepted estimate."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n_max = min(n_max, MAX_NODES)
    n = max(1, min(n_start, n_max))
    coarse = _estimate(f, n, vectorized)
    gap = np.inf
    while 2 * n <= n_max:
        n *= 2
        fine = _estimate(f, n, vectorized)
        gap = float(np.max(np.abs(fine - coarse))) if fine.size else 0.0
        if not np.isfinite(gap):
            break
        if gap <= tol:
            return fine, n
        coarse = fine
    raise QuadratureError(coarse, gap, n)


def integrate_vec(
    f: Callable,
    tol: float = DEFAULT_TOL,
    n_start: int = DEFAULT_START,
    n_max: int = MAX_NODES,
    vectorized: bool = False,
) -> np.ndarray:
    """Integrate a vector-valued ``f`` over [0, 1].

    The rule is doubled from ``n_start`` until two successive estimates agree
    to ``tol`` in the max norm; the finer estimate is returned.

    Parameters
    ----------
    f : callable
        ``f(sigma) -> array``; with ``vectorized=True`` it receives the whole
        node array and must return values stacked along axis 0.
    tol : float
        Absolute max-norm gap accepted between successive estimates.
    """
    return adaptive_rule(f, tol, n_start, n_max, vectorized)[0]
