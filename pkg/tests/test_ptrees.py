import json
from collections import Counter
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GENERIC, family_params
from pcsrk.cli import main
from pcsrk.ptrees import (
    THETA_DIFFERENCE_ROW,
    BiColouredTree,
    WeightEvaluator,
    certified_order,
    elementary_weight,
    enumerate_black_rooted,
    exact_coefficient,
    order_violations,
    table_quantities,
    verify_appendix,
)
from pcsrk.tableau import HP, FamilyParams, classic_tableau, fourth_order_family

GOLDEN = Path(__file__).parent / "golden"

# weights from an independent symbolic integration of the stage recursion
SYMBOLIC_AVF4 = {
    "b[b[]w[]]": Fraction(1, 3),
    "b[b[b[]]b[b[]]]": Fraction(1, 20),
    "b[b[b[]]w[b[]]]": Fraction(7, 144),
    "b[b[]b[b[]b[]]]": Fraction(5, 72),
    "b[b[]b[]b[]w[]]": Fraction(1, 5),
    "b[w[b[]b[w[]]]]": Fraction(1, 40),
    "b[w[b[w[]]w[]]]": Fraction(1, 36),
    "b[w[w[]w[b[]]]]": Fraction(1, 36),
}
SYMBOLIC_GENERIC = {
    "b[b[]w[]]": Fraction(1, 3),
    "b[b[b[]]b[b[]]]": Fraction(1, 20),
    "b[b[b[]]w[b[]]]": Fraction(971, 19800),
    "b[b[]b[b[]b[]]]": Fraction(359, 1800),
    "b[b[]b[]b[]w[]]": Fraction(1, 5),
    "b[w[b[]b[w[]]]]": Fraction(1, 40),
    "b[w[b[w[]]w[]]]": Fraction(2147, 79200),
    "b[w[w[]w[b[]]]]": Fraction(71, 2400),
}


@st.composite
def trees(draw, depth=3):
    colour = draw(st.sampled_from("bw"))
    if depth == 0:
        return BiColouredTree(colour)
    kids = draw(st.lists(trees(depth=depth - 1), max_size=3))
    return BiColouredTree(colour, tuple(kids))


def test_counts_by_order():
    counts = Counter(t.order for t in enumerate_black_rooted(6))
    # half the number of two-coloured rooted trees
    assert dict(counts) == {1: 1, 2: 2, 3: 7, 4: 26, 5: 107, 6: 458}


def test_order_five_shapes():
    assert len({t.shape_key for t in enumerate_black_rooted(5) if t.order == 5}) == 9


def test_enumeration_limits():
    for bad in (0, 7):
        with pytest.raises(ValueError):
            enumerate_black_rooted(bad)


def test_canonical_keys_are_unique():
    ts = enumerate_black_rooted(5)
    assert len({t.key for t in ts}) == len(ts)
    assert all(t.colour == "b" for t in ts)


@given(trees())
def test_key_round_trip(t):
    assert BiColouredTree.from_key(t.key) == t
    assert BiColouredTree.from_key(t.key).order == t.order


@given(trees(), st.randoms())
def test_key_ignores_child_order(t, rnd):
    kids = list(t.children)
    rnd.shuffle(kids)
    assert BiColouredTree(t.colour, tuple(kids)).key == t.key


@pytest.mark.parametrize("key", ["x[]", "b[", "b[]]", "b[w[]", "b"])
def test_malformed_keys(key):
    with pytest.raises((ValueError, IndexError)):
        BiColouredTree.from_key(key)


def test_tree_properties():
    t = BiColouredTree.from_key("b[w[b[]]w[]]")
    assert t.order == 4 and t.n_white == 2
    assert t.shape_key == "[[[]][]]" or t.shape_key == "[[][[]]]"
    assert t.recoloured("w").key == "w[w[]w[b[]]]"
    assert str(t) == t.key


def test_exact_coefficients():
    assert exact_coefficient(BiColouredTree.from_key("b[]")) == 1
    assert exact_coefficient(BiColouredTree.from_key("b[b[]b[]b[]b[]]")) == Fraction(1, 5)
    assert exact_coefficient(BiColouredTree.from_key("b[w[b[w[b[]]]]]")) == Fraction(1, 120)
    assert exact_coefficient(BiColouredTree.from_key("b[b[b[]]w[b[]]]")) == Fraction(1, 20)


@pytest.mark.parametrize("key,value", SYMBOLIC_AVF4.items())
def test_avf4_weights(avf4, key, value):
    w = elementary_weight(BiColouredTree.from_key(key), avf4)
    assert abs(w - HP.mpf(value.numerator) / value.denominator) <= 1e-25


@pytest.mark.parametrize("key,value", SYMBOLIC_GENERIC.items())
def test_generic_family_weights_are_exact(key, value):
    w = elementary_weight(BiColouredTree.from_key(key), fourth_order_family(GENERIC))
    assert isinstance(w, Fraction) and w == value


def test_certified_orders(avf2, avf4):
    assert certified_order(avf2) == 2
    assert certified_order(avf4) == 4
    assert certified_order(fourth_order_family(GENERIC)) == 4
    assert certified_order(fourth_order_family(FamilyParams.optimal(-234))) == 4
    assert certified_order(fourth_order_family(FamilyParams.optimal(Fraction(5))), max_order=5) == 5


@pytest.mark.slow
def test_alpha_tilde_five_reaches_order_six():
    assert certified_order(fourth_order_family(FamilyParams.optimal(Fraction(5))), max_order=6) == 6


def test_order_violations(avf2):
    bad = order_violations(avf2, 3)
    assert bad and all(t.order == 3 and phi != e for t, phi, e in bad)
    assert order_violations(avf2, 2) == []
    assert order_violations(fourth_order_family(GENERIC), 4) == []


@settings(max_examples=15, deadline=None)
@given(family_params())
def test_random_rational_family_is_order_four(p):
    assert certified_order(fourth_order_family(p), max_order=4) == 4


def test_weight_evaluator_caches():
    ev = WeightEvaluator(fourth_order_family(GENERIC))
    t = BiColouredTree.from_key("b[w[b[]]b[]]")
    assert ev.weight(t) == ev.weight(t) == Fraction(1, 8)


def test_quantities_at_optimum():
    q = table_quantities(FamilyParams.optimal(-234))
    expected = {"A": Fraction(1, 180), "B": Fraction(1, 5), "D": Fraction(13, 100), "E": Fraction(-1, 360),
                "F": Fraction(1, 360), "G": Fraction(-1, 360), "H": Fraction(1, 80), "theta": Fraction(78, 100)}
    for name, value in expected.items():
        assert abs(q[name] - HP.mpf(value.numerator) / value.denominator) <= 1e-25, name
    assert abs(q["C"] - (HP.mpf(5) / 72 + HP.mpf(234) / 1800)) <= 1e-25
    assert q.theta_confirmed == THETA_DIFFERENCE_ROW


def test_quantities_rational():
    q = table_quantities(GENERIC)
    assert all(isinstance(v, Fraction) for v in q.values.values())
    assert q["B"] == Fraction(9, 100) / 12 - Fraction(3, 10) / 12 + Fraction(5, 24)
    assert q["theta"] == Fraction(78, 100) and q.theta_confirmed == THETA_DIFFERENCE_ROW
    assert q.theta_candidates["proposed-row"] == Fraction(78, 1000)


def test_appendix_at_optimum():
    rep = verify_appendix(FamilyParams.optimal(-234))
    assert len(rep.rows) == 115
    assert rep.difference_row_consistent
    assert rep.untabulated == ["b[b[w[]]b[w[]]]"]
    # one misprinted theta coefficient in the all-black table
    assert [(r.table, r.column, r.tree) for r in rep.mismatches] == [("black", 2, "b[b[]b[b[]b[]]]")]
    for r in rep.rows:
        if not r.governed_by:
            assert r.is_exact, r.tree


def test_appendix_avf4_column():
    rep = verify_appendix(FamilyParams.optimal(-234))
    assert {(r.table, r.column, r.tree) for r in rep.avf4_mismatches} == {
        ("9-1", 1, "b[b[]b[]b[]w[]]"),
        ("9-7", 7, "b[w[b[]b[w[]]]]"),
    }
    tab = {r.tree: r.avf4_tabulated for r in rep.rows}
    assert tab["b[b[b[]]w[b[]]]"] == Fraction(7, 144)
    assert tab["b[b[]b[b[]b[]]]"] == Fraction(5, 72)
    assert tab["b[w[b[w[]]w[]]]"] == Fraction(1, 36)


def test_appendix_generic_columns_swapped():
    rep = verify_appendix(GENERIC)
    got = {(r.table, r.column): (r.computed, r.tabulated) for r in rep.mismatches}
    assert got[("9-7", 3)] == (Fraction(2147, 79200), Fraction(71, 2400))
    assert got[("9-7", 4)] == (Fraction(71, 2400), Fraction(2147, 79200))


@pytest.mark.parametrize("name,args", [
    ("verify_trees_optimal.json", []),
    ("verify_trees_generic.json", ["--c1", "3/10", "--gamma", "1/3,-2/7,5/11,1/2"]),
])
def test_verify_trees_golden(tmp_path, capsys, name, args):
    out = tmp_path / name
    assert main(["verify-trees", "--format", "json", "--out", str(out), *args]) == 0
    assert json.loads(out.read_text()) == json.loads((GOLDEN / name).read_text())


def _row(rep, table, column, tree):
    return next(r for r in rep.rows if (r.table, r.column, r.tree) == (table, column, tree))


def test_tabulated_examples():
    opt = verify_appendix(FamilyParams.optimal(-234))
    five = verify_appendix(FamilyParams.optimal(Fraction(5)))
    # (A) + 7/36 with (A) = 1/180
    assert abs(_row(opt, "9-1", 1, "b[b[]b[]b[]w[]]").computed - HP.mpf(1) / 5) <= 1e-40
    # (B)/2 with (B) = 1/5
    assert abs(_row(opt, "9-2", 1, "b[b[]b[b[]]w[]]").computed - HP.mpf(1) / 10) <= 1e-40
    # -(C) + 1/12 is exact only when (C) = 1/15, i.e. alpha_tilde = 5
    row = _row(five, "9-8", 1, "b[w[b[b[]b[]]]]")
    assert row.governed_by == ("C",) and row.is_exact and row.exact == Fraction(1, 60)
    assert not _row(opt, "9-8", 1, "b[w[b[b[]b[]]]]").is_exact
    assert _row(opt, "9-5", 1, "b[b[b[]]w[b[]]]").avf4_tabulated == Fraction(7, 144)
    assert not five.mismatches[1:] and five.difference_row_consistent


def test_no_degeneracy_at_alpha_tilde_minus_five():
    # alpha = 1/5 is excluded for the CSRK family; the partitioned family keeps order four there
    p = FamilyParams(GENERIC.c1, GENERIC.gamma, Fraction(-5))
    assert certified_order(fourth_order_family(p)) == 4
