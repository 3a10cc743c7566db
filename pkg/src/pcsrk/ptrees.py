"""Order verification over bi-coloured rooted trees with black roots.

Trees are canonical: children are kept sorted by their string key, so two
trees are isomorphic exactly when their keys agree. Keys look like
``b[b[]w[b[]]]`` (colour letter followed by the bracketed children).

Elementary weights are computed from a tableau's exact data (``Fraction``)
or high-precision data (``HP.mpf``); no double rounding is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from math import prod
from typing import Optional, Union

from .tableau import HP, FamilyParams, PcsrkTableau, classic_tableau, fourth_order_family, to_hp as _to_hp

Weight = Union[Fraction, "HP.mpf"]

BLACK, WHITE = "b", "w"
MAX_ORDER = 6
HP_EQ_TOL = 1e-20


@dataclass(frozen=True)
class BiColouredTree:
    colour: str
    children: tuple = ()
    key: str = field(init=False, compare=False, repr=False)
    order: int = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.colour not in (BLACK, WHITE):
            raise ValueError(f"bad colour {self.colour!r}")
        kids = tuple(sorted(self.children, key=lambda t: t.key))
        object.__setattr__(self, "children", kids)
        object.__setattr__(self, "key", self.colour + "[" + "".join(k.key for k in kids) + "]")
        object.__setattr__(self, "order", 1 + sum(k.order for k in kids))

    def __eq__(self, other):
        return isinstance(other, BiColouredTree) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __str__(self):
        return self.key

    @property
    def shape_key(self) -> str:
        """Colour-blind key."""
        return "[" + "".join(sorted(k.shape_key for k in self.children)) + "]"

    @property
    def n_white(self) -> int:
        return (self.colour == WHITE) + sum(k.n_white for k in self.children)

    def recoloured(self, colour: str) -> "BiColouredTree":
        return BiColouredTree(colour, self.children)

    @classmethod
    def from_key(cls, key: str) -> "BiColouredTree":
        tree, pos = _parse(key, 0)
        if pos != len(key):
            raise ValueError(f"trailing characters in tree key {key!r}")
        return tree


def _parse(key: str, pos: int):
    colour = key[pos]
    if colour not in (BLACK, WHITE) or key[pos + 1] != "[":
        raise ValueError(f"malformed tree key {key!r}")
    pos += 2
    kids = []
    while key[pos] != "]":
        kid, pos = _parse(key, pos)
        kids.append(kid)
    return BiColouredTree(colour, tuple(kids)), pos + 1


def enumerate_black_rooted(max_order: int) -> list:
    """All black-rooted bi-coloured trees with at most ``max_order`` vertices."""
    if not 1 <= max_order <= MAX_ORDER:
        raise ValueError(f"max_order must be in [1, {MAX_ORDER}]")
    level = {BiColouredTree(BLACK).key: BiColouredTree(BLACK)}
    found = dict(level)
    for _ in range(max_order - 1):
        nxt = {}
        for t in level.values():
            for colour in (BLACK, WHITE):
                for grown in _grow(t, colour):
                    nxt.setdefault(grown.key, grown)
        found.update(nxt)
        level = nxt
    return sorted(found.values(), key=lambda t: (t.order, t.key))


def _grow(t: BiColouredTree, colour: str):
    """Every tree obtained by attaching one leaf of ``colour`` somewhere in ``t``."""
    yield BiColouredTree(t.colour, t.children + (BiColouredTree(colour),))
    for i, kid in enumerate(t.children):
        for g in _grow(kid, colour):
            yield BiColouredTree(t.colour, t.children[:i] + (g,) + t.children[i + 1:])


def exact_coefficient(t: BiColouredTree) -> Fraction:
    """Coefficient of the exact flow, 1/gamma(t); colours are ignored."""
    return Fraction(1, t.order) * prod((exact_coefficient(k) for k in t.children), start=Fraction(1))


# ------------------------------------------------------------------ weights
# polynomials in tau are coefficient lists, lowest degree first


def _pmul(a, b):
    out = [a[0] * 0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] = out[i + j] + x * y
    return out


def _peval(p, x):
    acc = p[-1]
    for c in reversed(p[:-1]):
        acc = acc * x + c
    return acc


class WeightEvaluator:
    """Memoized elementary weights g(t; tau) for one tableau."""

    def __init__(self, tab: PcsrkTableau):
        self.tab = tab
        self.m, self.c = tab.exact_data()
        self.s = tab.s
        self.one = self.m[0][0][0] * 0 + 1
        self._cache = {}

    def stage_poly(self, t: BiColouredTree):
        """g(t; tau) as a coefficient list; the colour of the root of ``t`` is ignored."""
        key = t.recoloured(BLACK).key if t.colour == WHITE else t.key
        if key in self._cache:
            return self._cache[key]
        s, one = self.s, self.one
        black = [k for k in t.children if k.colour == BLACK]
        white = [k for k in t.children if k.colour == WHITE]
        p_sigma = [one]
        for b in black:
            p_sigma = _pmul(p_sigma, self.stage_poly(b))
        # u[q] = int_0^1 sigma^q p(sigma) d sigma
        u = [sum((ck / (q + k + 1) for k, ck in enumerate(p_sigma)), 0 * one) for q in range(s)]
        white_polys = [self.stage_poly(w) for w in white]
        x = [0 * one] * s
        for j in range(s):
            wf = one
            for wp in white_polys:
                wf = wf * _peval(wp, self.c[j])
            mj = self.m[j]
            for p in range(s):
                x[p] = x[p] + wf * sum((mj[p][q] * u[q] for q in range(s)), 0 * one)
        # r(tau)^T x
        poly = [0 * one] + [x[p] / (p + 1) for p in range(s)]
        self._cache[key] = poly
        return poly

    def weight(self, t: BiColouredTree):
        if t.colour != BLACK:
            raise ValueError("elementary weights are defined for black-rooted trees")
        return sum(self.stage_poly(t), 0 * self.one)


def elementary_weight(t: BiColouredTree, tab: PcsrkTableau):
    return WeightEvaluator(tab).weight(t)


def _eq(a, b) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(_to_hp(a) - _to_hp(b)) <= HP_EQ_TOL


def certified_order(tab: PcsrkTableau, max_order: int = 5) -> int:
    """Largest p <= max_order with phi(t) = e(t) for every black-rooted tree of order <= p."""
    ev = WeightEvaluator(tab)
    trees = enumerate_black_rooted(max_order)
    for p in range(1, max_order + 1):
        for t in trees:
            if t.order == p and not _eq(ev.weight(t), exact_coefficient(t)):
                return p - 1
    return max_order


def order_violations(tab: PcsrkTableau, order: int) -> list:
    """(tree, phi, e) for every black-rooted tree of the given order with phi != e."""
    ev = WeightEvaluator(tab)
    out = []
    for t in enumerate_black_rooted(order):
        if t.order == order:
            w = ev.weight(t)
            e = exact_coefficient(t)
            if not _eq(w, e):
                out.append((t, w, e))
    return out


# ------------------------------------------------------ tabulated quantities


# all-black trees whose tabulated coefficient involves theta, with the signed
# denominator of the tabulated difference phi - e = (60 theta + 1) / den
THETA_TREES = {
    "b[b[]b[b[]b[]]]": 360,
    "b[b[]b[b[b[]]]]": 720,
    "b[b[b[b[]b[]]]]": -360,
    "b[b[b[b[b[]]]]]": -720,
}
THETA_DIFFERENCE_ROW = "difference-row"
THETA_PROPOSED_ROW = "proposed-row"


@dataclass
class QuantityTable:
    """Values of (A)-(H) and theta for one parameter set.

    ``theta_candidates`` holds the two readings of theta: ``-alpha_tilde/300``
    (difference row) and ``-alpha_tilde/3000`` (proposed row, first column).
    ``theta_confirmed`` names the one for which every theta-governed tree
    satisfies ``phi - e = (60 theta + 1) / den``, or is None; ``values["theta"]``
    holds the confirmed value (the difference-row reading if none confirms).
    """

    values: dict
    theta_candidates: dict
    theta_confirmed: Optional[str]

    def __getitem__(self, name):
        return self.values[name]


def table_quantities(p: FamilyParams) -> QuantityTable:
    """Evaluate the quantities (A)-(H) and theta governing the order-five coefficients.

    Rational parameters give ``Fraction`` values; anything else is evaluated in
    50-digit arithmetic.
    """
    raw = (p.c1, *p.gamma, p.alpha_tilde)
    if all(isinstance(x, (Fraction, int, float)) for x in raw):
        nums = [Fraction(x) for x in raw]
        one = Fraction(1)
    else:
        nums = [_to_hp(x) for x in raw]
        one = HP.mpf(1)
    c1, g, at = nums[0], tuple(nums[1:5]), nums[5]
    d = 2 * c1 - 1
    cc = c1 * (c1 - 1)
    vals = {
        "A": d * d * (g[0] + g[2] + g[3]) / 120,
        "B": c1 * c1 / 12 - c1 / 12 + 5 * one / 24,
        "C": 5 * one / 72 - at / 1800,
        "D": cc * at / 180,
        "E": d * (2 * g[2] + 3 * g[3]) / 1440,
        "F": cc * d * (2 * g[2] + 3 * g[3]) / 144,
        "G": cc * d * d * (g[0] + g[2] + g[3]) / 24,
        "H": d * d * (4 * g[1] + 12 * g[2] + 9 * g[3]) / 288,
    }
    cands = {THETA_DIFFERENCE_ROW: -at / 300, THETA_PROPOSED_ROW: -at / 3000}
    ev = WeightEvaluator(fourth_order_family(FamilyParams(c1, g, at)))
    diffs = {}
    for key, den in THETA_TREES.items():
        t = BiColouredTree.from_key(key)
        diffs[key] = (ev.weight(t) - exact_coefficient(t)) * den
    confirmed = None
    for name, theta in cands.items():
        if all(_eq(v, 60 * theta + 1) for v in diffs.values()):
            confirmed = name
            break
    vals["theta"] = cands[confirmed or THETA_DIFFERENCE_ROW]
    return QuantityTable(vals, cands, confirmed)


# ------------------------------------------------------------ appendix check


@lru_cache(maxsize=1)
def appendix_data() -> dict:
    with resources.files("pcsrk.data").joinpath("appendix.json").open() as fh:
        return json.load(fh)


def _formula_value(formula: dict, symbols: dict):
    acc = Fraction(formula["const"])
    terms = [(Fraction(c), symbols[name]) for name, c in formula["coef"].items()]
    if not terms:
        return acc
    total = sum((c.numerator * v / c.denominator for c, v in terms), 0 * terms[0][1])
    return total + acc


@dataclass
class AppendixRow:
    table: str
    column: int
    tree: str
    exact: Fraction
    computed: object
    tabulated: object
    governed_by: tuple
    avf4_computed: object
    avf4_tabulated: Fraction

    @property
    def matches(self) -> bool:
        return _eq(self.computed, self.tabulated)

    @property
    def avf4_matches(self) -> bool:
        return _eq(self.avf4_computed, self.avf4_tabulated)

    @property
    def difference(self):
        return self.computed - self.tabulated

    @property
    def is_exact(self) -> bool:
        return _eq(self.computed, self.exact)


@dataclass
class TableReport:
    rows: list
    untabulated: list
    theta: QuantityTable
    difference_row_consistent: bool

    @property
    def mismatches(self) -> list:
        return [r for r in self.rows if not r.matches]

    @property
    def avf4_mismatches(self) -> list:
        return [r for r in self.rows if not r.avf4_matches]


def verify_appendix(p: FamilyParams) -> TableReport:
    """Compare oracle weights with every tabulated order-five coefficient.

    ``difference_row_consistent`` tells whether the all-black "difference"
    rows agree with the oracle.
    """
    q = table_quantities(p)
    symbols = q.values
    fam = WeightEvaluator(fourth_order_family(p))
    avf4 = WeightEvaluator(classic_tableau("avf4"))
    data = appendix_data()
    rows = []
    diff_ok = True
    for entry in data["black"] + data["coloured"]:
        t = BiColouredTree.from_key(entry["tree"])
        gov = tuple(sorted(k for k in entry["proposed"]["coef"] if k in ("C", "D", "theta")))
        row = AppendixRow(
            table=entry["table"],
            column=entry["column"],
            tree=t.key,
            exact=exact_coefficient(t),
            computed=fam.weight(t),
            tabulated=_formula_value(entry["proposed"], symbols),
            governed_by=gov,
            avf4_computed=avf4.weight(t),
            avf4_tabulated=Fraction(entry["avf4"]["const"]),
        )
        rows.append(row)
        if "proposed_difference" in entry:
            diff_val = _formula_value(entry["proposed_difference"], symbols)
            diff_ok = diff_ok and _eq(row.computed - row.exact, diff_val)
    listed = {r.tree for r in rows}
    untabulated = [t.key for t in enumerate_black_rooted(5) if t.order == 5 and t.key not in listed]
    return TableReport(rows, untabulated, q, diff_ok)
