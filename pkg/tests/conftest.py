from fractions import Fraction

import numpy as np
import pytest
from hypothesis import strategies as st

from pcsrk.model import lotka_volterra
from pcsrk.tableau import FamilyParams, classic_tableau, fourth_order_family

LV_Y0 = np.array([1.0, 1.9, 0.5])
GENERIC = FamilyParams(Fraction(3, 10), (Fraction(1, 3), Fraction(-2, 7), Fraction(5, 11), Fraction(1, 2)), Fraction(-234))


@pytest.fixture(scope="session")
def lv():
    return lotka_volterra()


@pytest.fixture(scope="session")
def y0():
    return LV_Y0.copy()


@pytest.fixture(scope="session")
def optimal():
    return fourth_order_family(FamilyParams.optimal(-234).as_float())


@pytest.fixture(scope="session")
def avf4():
    return classic_tableau("avf4")


@pytest.fixture(scope="session")
def avf2():
    return classic_tableau("avf2")


def rationals(lo, hi, max_den=50):
    return st.fractions(min_value=lo, max_value=hi, max_denominator=max_den)


@st.composite
def family_params(draw):
    c1 = draw(rationals(Fraction(1, 50), Fraction(12, 25)))
    gamma = tuple(draw(rationals(-5, 5)) for _ in range(4))
    at = draw(rationals(-400, 400).filter(lambda x: x != 0))
    return FamilyParams(c1, gamma, at)


# acceptance criteria report: one line per criterion, printed in the terminal summary
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
