"""CSRK / PCSRK tableaux, the fourth-order three-degree family, and the E matrix.

A degree-``s`` kernel is stored through matrices ``M_j`` with

    A_{tau, j, sigma} = [tau, tau^2/2, ..., tau^s/s] M_j [1, sigma, ..., sigma^(s-1)]^T.

Family construction is done in the arithmetic of the parameters: pass
:class:`fractions.Fraction` values for exact rational tableaux, ``HP.mpf``
values for high-precision ones (the optimal parameters involve sqrt(15)), or
plain floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional, Sequence

import mpmath
import numpy as np

# high-precision context shared by exact-ish computations
HP = mpmath.MPContext()
HP.dps = 50

SYM_TOL = 1e-12
PARALLEL_THRESHOLD = (2 ** (2 / 3)) / 6 + 5 * (2 ** (1 / 3)) / 24 + 0.25
DEFECTIVE_COND = 1e8

Matrix = list  # nested list of scalars


class DefectiveSpectrumError(ArithmeticError):
    """Eigenvector matrix of E is too ill-conditioned for the block solver."""


def to_hp(x):
    """Convert a Fraction, int, float or mpf to a 50-digit ``HP.mpf``."""
    if isinstance(x, Fraction):
        return HP.mpf(x.numerator) / x.denominator
    return HP.mpf(x)


def _to_float_array(m) -> np.ndarray:
    return np.array([[float(x) for x in row] for row in m], dtype=float)


def _matmul(a: Matrix, b: Matrix) -> Matrix:
    return [[sum((a[i][k] * b[k][j] for k in range(len(b))), 0 * a[0][0]) for j in range(len(b[0]))]
            for i in range(len(a))]


def _transpose(a: Matrix) -> Matrix:
    return [list(r) for r in zip(*a)]


def _add(*ms: Matrix) -> Matrix:
    return [[sum((m[i][j] for m in ms[1:]), ms[0][i][j]) for j in range(len(ms[0][0]))]
            for i in range(len(ms[0]))]


def _scale(k, m: Matrix) -> Matrix:
    return [[k * x for x in row] for row in m]


def _sub(a: Matrix, b: Matrix) -> Matrix:
    return _add(a, _scale(-1, b))


def _one(x):
    """Multiplicative unit in the arithmetic of ``x``."""
    return x * 0 + 1


@dataclass(frozen=True)
class CsrkMatrix:
    s: int
    m: np.ndarray
    exact: Optional[tuple] = field(default=None, compare=False, repr=False)

    @property
    def energy_preserving(self) -> bool:
        return bool(np.max(np.abs(self.m - self.m.T)) <= SYM_TOL)


def alpha_from_tilde(alpha_tilde):
    """alpha = (1/alpha_tilde + 7)/36."""
    return (1 / alpha_tilde + 7) / 36


def _alpha_matrix(at) -> Matrix:
    return [
        [at + 4, -6 * at - 6, 6 * at],
        [-6 * at - 6, 36 * at + 12, -36 * at],
        [6 * at, -36 * at, 36 * at],
    ]


def csrk_alpha_family(alpha_tilde) -> CsrkMatrix:
    """Order-four, degree-three energy-preserving CSRK matrix in the alpha-tilde chart."""
    if alpha_tilde == 0 or not math.isfinite(float(alpha_tilde)):
        raise ValueError("alpha_tilde must be finite and nonzero")
    exact = _alpha_matrix(alpha_tilde)
    return CsrkMatrix(3, _to_float_array(exact), tuple(tuple(r) for r in exact))


def hilbert_like(alpha) -> Matrix:
    one = _one(alpha)
    return [
        [one, one / 2, one / 3],
        [one / 2, one / 3, one / 4],
        [one / 3, one / 4, alpha],
    ]


@dataclass(frozen=True)
class FamilyParams:
    c1: Any
    gamma: tuple
    alpha_tilde: Any

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(self.gamma))
        if len(self.gamma) != 4:
            raise ValueError("gamma must have four entries")
        if not (self.c1 > 0 and self.c1 * 2 < 1):
            raise ValueError("c1 must lie strictly between 0 and 1/2")
        if self.alpha_tilde == 0:
            raise ValueError("alpha_tilde must be nonzero")

    @property
    def alpha(self):
        return alpha_from_tilde(self.alpha_tilde)

    @classmethod
    def optimal(cls, alpha_tilde=-234) -> "FamilyParams":
        """c1 = 1/2 - sqrt(15)/10 with the gamma choice making (A)-(H) exact.

        Values are high-precision ``HP.mpf`` numbers.
        """
        r15 = HP.sqrt(15)
        c1 = HP.mpf(1) / 2 - r15 / 10
        gamma = (
            HP.mpf(10) / 3 - 2 * r15 / 3,
            HP.mpf(23) / 2 - 2 * r15,
            -HP.mpf(20) / 3 + 2 * r15 / 3,
            HP.mpf(40) / 9,
        )
        return cls(c1, gamma, to_hp(alpha_tilde))

    def as_float(self) -> "FamilyParams":
        return FamilyParams(float(self.c1), tuple(float(g) for g in self.gamma), float(self.alpha_tilde))


@dataclass(frozen=True)
class PcsrkTableau:
    """Degree-``s`` PCSRK method: matrices M_1..M_s and nodes c_1 < ... < c_s.

    ``exact_m`` / ``exact_c`` hold the same data in exact or high-precision
    arithmetic when available; tree weights are computed from them.
    """

    s: int
    m_list: tuple
    c: np.ndarray
    params: Optional[FamilyParams] = None
    name: str = "pcsrk"
    exact_m: Optional[tuple] = field(default=None, compare=False, repr=False)
    exact_c: Optional[tuple] = field(default=None, compare=False, repr=False)
    m_sum: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        m_list = tuple(np.array(m, dtype=float) for m in self.m_list)
        c = np.array(self.c, dtype=float)
        if len(m_list) != self.s or c.shape != (self.s,):
            raise ValueError("need s matrices and s nodes")
        if any(m.shape != (self.s, self.s) for m in m_list):
            raise ValueError("each M_j must be s x s")
        if np.any(np.diff(c) <= 0) or c[0] < 0 or c[-1] > 1:
            raise ValueError("nodes must be strictly increasing in [0, 1]")
        for m in m_list:
            m.setflags(write=False)
        c.setflags(write=False)
        m_sum = m_list[0].copy()
        for m in m_list[1:]:
            m_sum = m_sum + m
        m_sum.setflags(write=False)
        object.__setattr__(self, "m_list", m_list)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "m_sum", m_sum)

    @property
    def energy_preserving(self) -> bool:
        return all(np.max(np.abs(m - m.T)) <= SYM_TOL for m in self.m_list)

    def exact_data(self):
        """(matrices, nodes) in exact arithmetic; floats are converted exactly to Fraction."""
        if self.exact_m is not None:
            return self.exact_m, self.exact_c
        ms = tuple(tuple(tuple(Fraction(float(x)) for x in row) for row in m) for m in self.m_list)
        return ms, tuple(Fraction(float(x)) for x in self.c)

    def kernel(self, tau, j: int, sigma) -> float:
        """A_{tau, j, sigma} for 0-based partition index ``j``."""
        return float(r_vec(tau, self.s) @ self.m_list[j] @ v_vec(sigma, self.s))

    def b_weight(self, j: int, sigma) -> float:
        return self.kernel(1.0, j, sigma)


def r_vec(tau, s: int) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    k = np.arange(1, s + 1)
    return tau[..., None] ** k / k


def v_vec(sigma, s: int) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    return sigma[..., None] ** np.arange(s)


def _exactify(x):
    if isinstance(x, float):
        return Fraction(x)
    if isinstance(x, int):
        return Fraction(x)
    return x


def make_tableau(m_list, c, name="pcsrk", params=None) -> PcsrkTableau:
    """Tableau from matrices given in any scalar type (exact data kept alongside)."""
    exact_m = tuple(tuple(tuple(_exactify(x) for x in row) for row in m) for m in m_list)
    exact_c = tuple(_exactify(x) for x in c)
    return PcsrkTableau(
        len(m_list),
        tuple(_to_float_array(m) for m in m_list),
        np.array([float(x) for x in c]),
        params=params,
        name=name,
        exact_m=exact_m,
        exact_c=exact_c,
    )


def classic_tableau(kind: str) -> PcsrkTableau:
    """``avf2``: midpoint-S AVF method (order 2); ``avf4``: the Cohen-Hairer s=2 method (order 4)."""
    if kind == "avf2":
        return make_tableau([[[Fraction(1)]]], [Fraction(1, 2)], name="avf2")
    if kind == "avf4":
        r3 = HP.sqrt(3)
        m1 = [[2 + r3, -(3 + r3)], [-(3 + r3), HP.mpf(6)]]
        m2 = [[2 - r3, r3 - 3], [r3 - 3, HP.mpf(6)]]
        c = [HP.mpf(1) / 2 - r3 / 6, HP.mpf(1) / 2 + r3 / 6]
        return make_tableau([m1, m2], c, name="avf4")
    raise ValueError(f"unknown classic tableau {kind!r}")


G_MATRICES = (
    [[1, -3, 3], [-3, 0, 0], [3, 0, 0]],
    [[1, -2, 0], [-2, 4, 0], [0, 0, 0]],
    [[3, -5, 0], [-5, 0, 6], [0, 6, 0]],
    [[2, -3, 0], [-3, 0, 0], [0, 0, 9]],
)
REFLECT = [[1, 1, 1], [0, -1, -2], [0, 0, 1]]


def family_m3(c1, gamma) -> Matrix:
    d = 2 * c1 - 1
    zero = 0 * d
    base = [
        [1 / (6 * d * d) + 1 / d, -1 / d, zero],
        [-1 / d, zero, zero],
        [zero, zero, zero],
    ]
    return _add(base, *(_scale(g, gm) for g, gm in zip(gamma, G_MATRICES)))


def reflect(m3: Matrix) -> Matrix:
    """P M P^T with the node-reflection matrix P."""
    return _matmul(_matmul(REFLECT, m3), _transpose(REFLECT))


def fourth_order_family(p: FamilyParams) -> PcsrkTableau:
    """Three-degree, order-four, symmetric, energy-preserving PCSRK method."""
    c1 = _exactify(p.c1)
    gamma = tuple(_exactify(g) for g in p.gamma)
    at = _exactify(p.alpha_tilde)
    if c1 * 2 == 1:
        raise ValueError("c1 = 1/2 is singular")
    m3 = family_m3(c1, gamma)
    m1 = reflect(m3)
    m2 = _sub(_sub(_alpha_matrix(at), m1), m3)
    half = _one(c1) / 2
    return make_tableau([m1, m2, m3], [c1, half, 1 - c1], name="family", params=p)


def csrk_as_pcsrk(m, c=None) -> PcsrkTableau:
    """Put a CSRK matrix M in PCSRK form: M_1 = M, the other M_j zero.

    For a constant structure matrix only the sum of the M_j matters, so this
    reproduces the CSRK method.
    """
    m = [list(r) for r in (m.exact if isinstance(m, CsrkMatrix) and m.exact else np.asarray(m).tolist())]
    s = len(m)
    if c is None:
        c = [Fraction(2 * i + 1, 2 * s) for i in range(s)]
    zero = [[0 * m[0][0]] * s for _ in range(s)]
    return make_tableau([m] + [zero] * (s - 1), c, name="csrk")


# ---------------------------------------------------------------- validation


@dataclass
class Check:
    name: str
    residual: Optional[float]
    passed: Optional[bool]
    note: str = ""


@dataclass
class ValidationReport:
    checks: dict

    def __getitem__(self, key) -> Check:
        return self.checks[key]

    @property
    def ok(self) -> bool:
        return all(c.passed is not False for c in self.checks.values())

    def max_residual(self) -> float:
        vals = [c.residual for c in self.checks.values() if c.residual is not None]
        return max(vals) if vals else 0.0


def _field(values):
    """Values as Fractions when all are rational or float, else as 50-digit numbers."""
    values = list(values)
    if all(isinstance(v, (Fraction, int, float)) for v in values):
        return [Fraction(v) for v in values]
    return [to_hp(v) for v in values]


def _exact_view(t: PcsrkTableau):
    """(M_j as nested lists, nodes, alpha_tilde or None) in one exact arithmetic."""
    ms, cs = t.exact_data()
    flat = [x for m in ms for row in m for x in row] + list(cs)
    at = None if t.params is None else t.params.alpha_tilde
    if at is not None:
        flat.append(at)
    vals = _field(flat)
    s = t.s
    out, k = [], 0
    for _ in range(s):
        out.append([vals[k + i * s:k + (i + 1) * s] for i in range(s)])
        k += s * s
    return out, vals[k:k + s], (vals[k + s] if at is not None else None)


def _det3(m):
    return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))


def validate(t: PcsrkTableau, tol: float = SYM_TOL) -> ValidationReport:
    """Residuals of the sufficient conditions for order four, symmetry and energy preservation.

    Evaluated on the exact data of the tableau (rational, or 50-digit when the
    data involve irrationals), so residuals of valid methods are rounding-free.
    Symmetry of each M_i is measured as the sum of absolute entries of M_i - M_i^T.
    Conditions specific to three-degree methods are marked not applicable otherwise.
    """
    checks = {}
    ms, cs, at = _exact_view(t)

    def add(name, residual, note=""):
        residual = float(residual)
        checks[name] = Check(name, residual, residual <= tol, note)

    def amax(xs):
        return max(abs(x) for x in xs)

    add("method1-1", max(sum(abs(x) for row in _sub(m, _transpose(m)) for x in row) for m in ms))
    if t.s == 3:
        m1, m2, m3 = ms
        c1, c2, c3 = cs
        one = _one(c1)
        msum = _add(m1, m2, m3)
        if at is not None:
            alpha = alpha_from_tilde(at)
        else:
            det = _det3(msum)
            alpha = (msum[0][0] * msum[1][1] - msum[0][1] * msum[1][0]) / det if det != 0 else None
        if alpha is None:
            checks["method1-2"] = Check("method1-2", None, False, "sum of M_j is singular")
        else:
            res = _sub(_matmul(hilbert_like(alpha), msum), [[one * (i == j) for j in range(3)] for i in range(3)])
            add("method1-2", amax(x for row in res for x in row))
        add("method1-3", amax(x for row in _sub(reflect(m3), m1) for x in row))
        add("method1-4", max(abs(c1 + c3 - 1), abs(c2 - one / 2)))
        w = [one, one / 2, one / 3]
        comb = _add(_scale(c1, m1), _scale(c2, m2), _scale(c3, m3))
        vec = [sum((comb[i][k] * w[k] for k in range(3)), 0 * one) - (one if i == 1 else 0 * one) for i in range(3)]
        checks["method1-5"] = Check("method1-5", float(amax(vec)), bool(amax(vec) <= tol),
                                    f"vector residual {[float(v) for v in vec]}")
        comb2 = _add(_scale(c1 * c1, m1), _scale(c2 * c2, m2), _scale(c3 * c3, m3))
        val = sum((w[i] * comb2[i][k] * w[k] for i in range(3) for k in range(3)), 0 * one) - one / 3
        add("method1-6", abs(val))
    else:
        for name in ("method1-2", "method1-3", "method1-4", "method1-5", "method1-6"):
            checks[name] = Check(name, None, None, f"not applicable (s={t.s}, conditions are for s=3)")
    sym = kernel_symmetry_polynomial(t)
    add("kernel-symmetry", max(abs(x) for poly in sym for x in poly.ravel()))
    return ValidationReport(checks)


def _binom_poly_shift(coeffs_2d):
    """Coefficients of p(1 - tau, 1 - zeta) from those of p(tau, zeta) (object arrays ok)."""
    n, m = coeffs_2d.shape
    out = np.zeros((n, m), dtype=object)
    out[:, :] = 0
    for a in range(n):
        for b in range(m):
            c = coeffs_2d[a, b]
            if c == 0:
                continue
            for i in range(a + 1):
                for k in range(b + 1):
                    out[i, k] += c * math.comb(a, i) * math.comb(b, k) * (-1) ** (i + k)
    return out


def kernel_coefficients(m) -> np.ndarray:
    """Coefficient array C[p, q] of tau^p zeta^q for the kernel defined by ``m``."""
    s = len(m)
    out = np.zeros((s + 1, s), dtype=object)
    out[:, :] = 0
    for p in range(1, s + 1):
        for q in range(s):
            out[p, q] = m[p - 1][q] / p
    return out


def kernel_symmetry_polynomial(t: PcsrkTableau) -> list:
    """Coefficient arrays of A_{1-tau, s+1-j, 1-zeta} + A_{tau, j, zeta} - B_{j, zeta}, one per j."""
    ms, _ = t.exact_data()
    s = t.s
    out = []
    for j in range(s):
        cj = kernel_coefficients(ms[j])
        cr = _binom_poly_shift(kernel_coefficients(ms[s - 1 - j]))
        b = np.zeros_like(cj)
        b[:, :] = 0
        b[0, :] = cj.sum(axis=0)
        out.append(cr + cj - b)
    return out


# ------------------------------------------------------ simplifying assumptions


def _poly_int01(p: np.polynomial.Polynomial) -> float:
    c = p.coef
    return float(np.sum(c / np.arange(1, len(c) + 1)))


def _poly_r(t: PcsrkTableau, x: np.ndarray) -> np.polynomial.Polynomial:
    """r(tau)^T x as a polynomial in tau."""
    coef = np.zeros(t.s + 1)
    coef[1:] = x / np.arange(1, t.s + 1)
    return np.polynomial.Polynomial(coef)


def _poly_v(t: PcsrkTableau, x: np.ndarray) -> np.polynomial.Polynomial:
    """x^T v(sigma) as a polynomial in sigma."""
    return np.polynomial.Polynomial(np.asarray(x, dtype=float))


def _moments(t: PcsrkTableau, p: np.polynomial.Polynomial) -> np.ndarray:
    """Vector of integrals of sigma^q p(sigma) over [0, 1], q < s."""
    out = np.empty(t.s)
    for q in range(t.s):
        out[q] = _poly_int01(p * np.polynomial.Polynomial([0] * q + [1]))
    return out


def stage_abscissa(t: PcsrkTableau) -> np.polynomial.Polynomial:
    """C_tau = sum_j int A_{tau,j,sigma} d sigma (independent of the stage index)."""
    return _poly_r(t, t.m_sum @ (1.0 / np.arange(1, t.s + 1)))


def simplifying_residual(t: PcsrkTableau, kind: str, k: int, l: int, n_grid: int = 21) -> float:
    """Max residual of one simplifying assumption B, C, Chat, D or Dhat at (k, l).

    C_hat_i is taken as C evaluated at node c_i. The right-hand side of D and Dhat
    uses the continuous abscissa C_sigma of the column stage.
    """
    if k < 1 or l < 0:
        raise ValueError("need k >= 1 and l >= 0")
    P = np.polynomial.Polynomial
    s = t.s
    C = stage_abscissa(t)
    chat = [float(C(ci)) for ci in t.c]
    one = P([1.0])
    grid = np.linspace(0.0, 1.0, n_grid)
    if kind == "B":
        total = 0.0
        for i in range(s):
            b_i = _poly_v(t, r_vec(1.0, s) @ t.m_list[i])
            total += _poly_int01(b_i * C ** (k - 1)) * chat[i] ** l
        return abs(total - 1.0 / (k + l))
    if kind in ("C", "Chat"):
        # sum_j int A_{tau,j,sigma} C_sigma^(k-1) chat_j^l d sigma - C_tau^(k+l)/(k+l)
        x = np.zeros(s)
        for j in range(s):
            x += chat[j] ** l * (t.m_list[j] @ _moments(t, C ** (k - 1)))
        lhs = _poly_r(t, x)
        res = lhs - C ** (k + l) / (k + l)
        pts = grid if kind == "C" else t.c
        return float(np.max(np.abs(res(pts))))
    if kind in ("D", "Dhat"):
        worst = 0.0
        for j in range(s):
            # lhs(sigma) = sum_i int B_i(tau) C_tau^(k-1) chat_i^l A_{tau_or_ci, j, sigma} d tau
            x = np.zeros(s)
            for i in range(s):
                b_i = _poly_v(t, r_vec(1.0, s) @ t.m_list[i]) * C ** (k - 1) * chat[i] ** l
                if kind == "D":
                    x += t.m_list[j].T @ _moments_r(t, b_i)
                else:
                    x += _poly_int01(b_i) * (r_vec(t.c[i], s) @ t.m_list[j])
            lhs = _poly_v(t, x)
            b_j = _poly_v(t, r_vec(1.0, s) @ t.m_list[j])
            rhs = b_j * (one - C ** (k + l)) / (k + l)
            worst = max(worst, float(np.max(np.abs((lhs - rhs)(grid)))))
        return worst
    raise ValueError(f"unknown simplifying assumption {kind!r}")


def _moments_r(t: PcsrkTableau, p: np.polynomial.Polynomial) -> np.ndarray:
    """Vector of integrals of tau^(q+1)/(q+1) p(tau), q < s (the r(tau) moments)."""
    out = np.empty(t.s)
    for q in range(t.s):
        out[q] = _poly_int01(p * np.polynomial.Polynomial([0] * (q + 1) + [1])) / (q + 1)
    return out


# ------------------------------------------------------------- E and spectrum


@dataclass(frozen=True)
class SpectralData:
    e: np.ndarray
    eigenvalues: np.ndarray
    t: np.ndarray
    t_inv: np.ndarray
    real_distinct: bool
    condition_estimate: float


def lagrange_basis(nodes: Sequence[float]) -> list:
    """Lagrange polynomials over ``nodes`` (numpy Polynomial objects)."""
    P = np.polynomial.Polynomial
    out = []
    for i, ci in enumerate(nodes):
        p = P([1.0])
        for j, cj in enumerate(nodes):
            if j != i:
                p = p * P([-cj, 1.0]) / (ci - cj)
        out.append(p)
    return out


def e_matrix_hp(t: PcsrkTableau):
    """E in 50-digit arithmetic from the exact data of the tableau (mpmath matrix)."""
    ms, cs, _ = _exact_view(t)
    s = t.s
    ms = [[[to_hp(x) for x in row] for row in m] for m in ms]
    cs = [to_hp(c) for c in cs]
    msum = _add(*ms)
    nodes = [HP.mpf(0)] + cs
    vinv = HP.inverse(HP.matrix([[x**m for m in range(s + 1)] for x in nodes]))
    # w[q][j] = int_0^1 sigma^q l_j(sigma) d sigma for the Lagrange basis over {0, c}
    w = [[HP.fsum(vinv[m, j + 1] / (q + m + 1) for m in range(s + 1)) for j in range(s)] for q in range(s)]
    e = HP.matrix(s, s)
    for i in range(s):
        r = [cs[i] ** (p + 1) / (p + 1) for p in range(s)]
        for j in range(s):
            e[i, j] = HP.fsum(r[p] * msum[p][q] * w[q][j] for p in range(s) for q in range(s))
    return e


def e_matrix_only(t: PcsrkTableau) -> np.ndarray:
    """E_ij = int_0^1 (sum_k A_{c_i,k,sigma}) l_j(sigma) d sigma over nodes {0, c_1..c_s}."""
    e = e_matrix_hp(t)
    return np.array([[float(e[i, j]) for j in range(t.s)] for i in range(t.s)])


def _poly_roots_closed_form(coeffs) -> np.ndarray:
    """Roots of a monic polynomial of degree <= 3: x^n + coeffs[0] x^(n-1) + ..."""
    n = len(coeffs)
    if n == 1:
        return np.array([-coeffs[0]], dtype=complex)
    if n == 2:
        b, c = coeffs
        disc = b * b - 4 * c
        if disc >= 0:
            r = math.sqrt(disc)
            q = -0.5 * (b + math.copysign(r, b))
            roots = [q, c / q] if q != 0 else [0.0, 0.0]
            return np.array(sorted(roots), dtype=complex)
        r = math.sqrt(-disc)
        return np.array([complex(-b / 2, -r / 2), complex(-b / 2, r / 2)])
    if n == 3:
        a, b, c = coeffs
        p = b - a * a / 3
        q = 2 * a**3 / 27 - a * b / 3 + c
        shift = -a / 3
        disc = (q / 2) ** 2 + (p / 3) ** 3
        if disc <= 0 and p < 0:
            # three real roots: trigonometric form
            m = 2 * math.sqrt(-p / 3)
            arg = 3 * q / (p * m)
            arg = max(-1.0, min(1.0, arg))
            theta = math.acos(arg) / 3
            roots = [m * math.cos(theta - 2 * math.pi * k / 3) + shift for k in range(3)]
            return np.array(sorted(roots), dtype=complex)
        if p == 0 and q == 0:
            return np.array([shift] * 3, dtype=complex)
        # one real root: Cardano
        sd = math.sqrt(max(disc, 0.0))
        u = np.cbrt(-q / 2 + sd)
        v = np.cbrt(-q / 2 - sd)
        x1 = u + v
        re = -(u + v) / 2
        im = (u - v) * math.sqrt(3) / 2
        return np.array([x1 + shift, complex(re + shift, -abs(im)), complex(re + shift, abs(im))])
    raise ValueError("closed-form roots implemented for degree <= 3")


def _char_poly(e: np.ndarray) -> list:
    s = e.shape[0]
    if s == 1:
        return [-e[0, 0]]
    if s == 2:
        return [-np.trace(e), np.linalg.det(e)]
    if s == 3:
        minors = (e[0, 0] * e[1, 1] - e[0, 1] * e[1, 0]
                  + e[0, 0] * e[2, 2] - e[0, 2] * e[2, 0]
                  + e[1, 1] * e[2, 2] - e[1, 2] * e[2, 1])
        det = (e[0, 0] * (e[1, 1] * e[2, 2] - e[1, 2] * e[2, 1])
               - e[0, 1] * (e[1, 0] * e[2, 2] - e[1, 2] * e[2, 0])
               + e[0, 2] * (e[1, 0] * e[2, 1] - e[1, 1] * e[2, 0]))
        return [-np.trace(e), minors, -det]
    raise ValueError("closed-form spectrum implemented for s <= 3")


def _null_vector(b: np.ndarray) -> np.ndarray:
    s = b.shape[0]
    if s == 1:
        return np.ones(1, dtype=b.dtype)
    if s == 2:
        cands = [np.array([-b[i, 1], b[i, 0]]) for i in range(2)]
    else:
        cands = [np.cross(b[i], b[j]) for i, j in ((0, 1), (0, 2), (1, 2))]
    v = max(cands, key=lambda x: np.linalg.norm(x))
    if np.linalg.norm(v) == 0:
        v = np.zeros(s, dtype=b.dtype)
        v[0] = 1
    return v / np.linalg.norm(v)


def _refine(e: np.ndarray, lam, v: np.ndarray, steps: int = 2) -> np.ndarray:
    """Inverse-iteration polish of an eigenvector."""
    s = e.shape[0]
    scale = max(1.0, float(np.max(np.abs(e))))
    shift = lam + 1e-10 * scale
    for _ in range(steps):
        try:
            w = np.linalg.solve(e - shift * np.eye(s), v)
        except np.linalg.LinAlgError:
            return v
        nrm = np.linalg.norm(w)
        if not np.isfinite(nrm) or nrm == 0:
            return v
        v = w / nrm
    return v


def spectral_decomposition(e: np.ndarray) -> SpectralData:
    e = np.asarray(e, dtype=float)
    s = e.shape[0]
    lam = _poly_roots_closed_form(_char_poly(e))
    scale = max(float(np.max(np.abs(e))), np.finfo(float).tiny)
    imag_tol = 1e-9 * scale
    is_real = bool(np.all(np.abs(lam.imag) <= imag_tol))
    if is_real:
        lam = np.sort(lam.real)
        gaps = np.diff(lam)
        distinct = bool(np.all(gaps > 1e-9 * scale)) if s > 1 else True
        cols = [_refine(e, l, _null_vector(e - l * np.eye(s))) for l in lam]
        t = np.array(cols).T
    else:
        distinct = False
        cols = [_refine(e.astype(complex), l, _null_vector(e.astype(complex) - l * np.eye(s))) for l in lam]
        t = np.array(cols).T
    cond = float(np.linalg.cond(t))
    if not np.isfinite(cond) or cond > DEFECTIVE_COND:
        raise DefectiveSpectrumError(f"defective or near-defective spectrum (cond(T) = {cond:.3e})")
    return SpectralData(e, lam, t, np.linalg.inv(t), is_real and distinct, cond)


def e_matrix(t: PcsrkTableau) -> SpectralData:
    """The Newton coupling matrix E of a tableau together with its eigendecomposition.

    E and its eigenpairs are computed in 50-digit arithmetic and rounded, so
    the spectrum is accurate even when E is assembled from large entries.
    """
    e_hp = e_matrix_hp(t)
    s = t.s
    lam_hp, vec_hp = HP.eig(e_hp)
    lam = np.array([complex(x) for x in lam_hp])
    vecs = np.array([[complex(vec_hp[i, k]) for k in range(s)] for i in range(s)])
    e = np.array([[float(e_hp[i, j]) for j in range(s)] for i in range(s)])
    scale = max(float(np.max(np.abs(e))), np.finfo(float).tiny)
    is_real = bool(np.all(np.abs(lam.imag) <= 1e-9 * scale))
    order = np.lexsort((lam.imag, lam.real))
    lam, vecs = lam[order], vecs[:, order]
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    if is_real:
        lam, vecs = lam.real, vecs.real
        distinct = bool(np.all(np.diff(lam) > 1e-9 * scale)) if s > 1 else True
    else:
        distinct = False
    cond = float(np.linalg.cond(vecs))
    if not np.isfinite(cond) or cond > DEFECTIVE_COND:
        raise DefectiveSpectrumError(f"defective or near-defective spectrum (cond(T) = {cond:.3e})")
    return SpectralData(e, lam, vecs, np.linalg.inv(vecs), is_real and distinct, cond)


def is_parallelizable(alpha_tilde) -> bool:
    """True iff E of the fourth-order family has real distinct eigenvalues."""
    return bool(-float(alpha_tilde) / 300.0 > PARALLEL_THRESHOLD)
