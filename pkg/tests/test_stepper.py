from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcsrk.model import PoissonSystem, constant_s_quadratic, lotka_volterra, synthetic_quartic
from pcsrk.quad import QuadratureError
from pcsrk.stepper import (
    MaxIterationsError,
    NewtonDivergedError,
    StageState,
    StepConfig,
    Stepper,
    csrk_step,
    dense_eval,
    integrate,
    lagrange_matrix,
    n_steps_for,
    newton_solve,
    residual,
    step,
)
from pcsrk.tableau import FamilyParams, classic_tableau, csrk_alpha_family, csrk_as_pcsrk, fourth_order_family

# one step of the default family from (1, 1.9, 0.5) with h = 0.05; block and full solvers agree
LV_Y1 = np.array([0.90612094, 2.08944162, 0.55375994])


@pytest.fixture(scope="module")
def quad_sys():
    return constant_s_quadratic([[0, -1, 0.5], [1, 0, -2], [-0.5, 2, 0]], [[2, 0.3, 0], [0.3, 1, 0.1], [0, 0.1, 3]],
                                [0.1, -0.2, 0.0])


@pytest.mark.parametrize("kw", [dict(h=np.nan), dict(h=0.1, newton_tol=0), dict(h=0.1, quad_tol=-1),
                                dict(h=0.1, max_newton_iters=0), dict(h=0.1, solver_mode="lu"),
                                dict(h=0.1, jacobian_refresh="never"), dict(h=0.1, threads=0),
                                dict(h=0.1, quad_max_nodes=65)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        StepConfig(**kw)


def test_lagrange_matrix_reproduces_nodes():
    nodes = np.array([0.0, 0.2, 0.5, 0.9])
    np.testing.assert_allclose(lagrange_matrix(nodes, nodes), np.eye(4), atol=1e-14)
    np.testing.assert_allclose(lagrange_matrix(nodes, np.linspace(0, 2, 7)).sum(axis=1), 1.0, atol=1e-12)


def test_dense_output_interpolates(lv, y0, optimal):
    st, _ = newton_solve(lv, optimal, y0, StepConfig(h=0.05))
    np.testing.assert_array_equal(dense_eval(st, 0.0), y0)
    for i, c in enumerate(optimal.c):
        np.testing.assert_allclose(st.dense_eval(c), st.stage_values[i], atol=1e-15)
    assert st.dense_eval(np.array([0.1, 0.7])).shape == (2, 3)


def test_zero_step(lv, y0, optimal):
    y1, rep = step(lv, optimal, y0, StepConfig(h=0.0))
    np.testing.assert_array_equal(y1, y0)
    assert rep.iterations == 0


def test_residual_vanishes_at_solution(lv, y0, optimal):
    cfg = StepConfig(h=0.05)
    st, rep = newton_solve(lv, optimal, y0, cfg)
    assert np.max(np.abs(residual(lv, optimal, st, cfg))) <= 1e-13
    assert rep.final_residual_norm <= 1e-13 * 1.9
    bad = StageState(st.stage_values + 1e-3, st.base, st.nodes)
    assert np.max(np.abs(residual(lv, optimal, bad, cfg))) > 1e-4


def test_single_step_value(lv, y0, optimal):
    y1, rep = step(lv, optimal, y0, StepConfig(h=0.05))
    np.testing.assert_allclose(y1, LV_Y1, atol=1e-8)
    assert rep.solver_mode_used == "block"
    assert rep.factorization_count == 3
    assert abs(lv.energy(y1) - lv.energy(y0)) <= 1e-13


def test_block_equals_full(lv, y0, optimal):
    a, ra = step(lv, optimal, y0, StepConfig(h=0.05, solver_mode="block"))
    b, rb = step(lv, optimal, y0, StepConfig(h=0.05, solver_mode="full"))
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))
    assert (ra.solver_mode_used, rb.solver_mode_used) == ("block", "full")
    assert rb.factorization_count == 1


def test_auto_falls_back_to_full(lv, y0):
    tab = fourth_order_family(FamilyParams.optimal(5).as_float())
    _, rep = step(lv, tab, y0, StepConfig(h=0.05))
    assert rep.solver_mode_used == "full"


def test_complex_block_mode_matches_full(lv, y0, avf4):
    a, _ = step(lv, avf4, y0, StepConfig(h=0.05, solver_mode="block"))
    b, _ = step(lv, avf4, y0, StepConfig(h=0.05, solver_mode="full"))
    np.testing.assert_allclose(a, b, rtol=1e-12)
    assert np.isrealobj(a)


def test_threads_do_not_change_result(lv, y0, optimal):
    a, _ = step(lv, optimal, y0, StepConfig(h=0.05, threads=1))
    b, _ = step(lv, optimal, y0, StepConfig(h=0.05, threads=3))
    np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(0.3, 3.0)), st.floats(0.005, 0.08))
def test_energy_and_symmetry(y, h):
    sys = lotka_volterra()
    tab = fourth_order_family(FamilyParams.optimal(-234).as_float())
    with Stepper(sys, tab, StepConfig(h=h)) as stp:
        y1, _, _ = stp.step(y)
        back, _, _ = stp.step(y1, h=-h)
    assert abs(sys.energy(y1) - sys.energy(y)) <= 1e-12 * max(1.0, abs(sys.energy(y)))
    assert np.linalg.norm(back - y) <= 1e-10 * np.linalg.norm(y)


def test_quadratic_converges_fast(quad_sys, optimal):
    _, rep = step(quad_sys, optimal, np.array([1.0, 0.5, -0.3]), StepConfig(h=0.1))
    # linear problem: one Newton update is exact up to rounding, the second confirms it
    assert rep.iterations <= 2


@pytest.mark.parametrize("alpha_tilde", [-234, -100, 5])
def test_constant_s_collapse(quad_sys, alpha_tilde):
    y = np.array([1.0, 0.5, -0.3])
    tab = fourth_order_family(FamilyParams.optimal(alpha_tilde).as_float())
    y1, _ = step(quad_sys, tab, y, StepConfig(h=0.1, solver_mode="full"))
    ref = csrk_step(quad_sys, csrk_alpha_family(float(alpha_tilde)).m, y, 0.1)
    np.testing.assert_allclose(y1, ref, atol=1e-12)
    ref2, _ = step(quad_sys, csrk_as_pcsrk(csrk_alpha_family(Fraction(alpha_tilde))), y,
                   StepConfig(h=0.1, solver_mode="full"))
    np.testing.assert_allclose(y1, ref2, atol=1e-12)


def test_plain_csrk_loses_energy_for_varying_s(lv, y0, optimal):
    # with S depending on y the CSRK step is only accurate, not energy preserving
    y1 = csrk_step(lv, csrk_alpha_family(-234.0).m, y0, 0.05)
    assert abs(lv.energy(y1) - lv.energy(y0)) > 1e-8
    np.testing.assert_allclose(y1, LV_Y1, atol=1e-5)


def test_non_vectorized_system(y0, optimal):
    base = lotka_volterra()
    sys = PoissonSystem(3, lambda y: base.s_matrix(y), lambda y: base.grad_h(y), base.energy,
                        hess_h=base.hessian, vectorized=False)
    a, _ = step(sys, optimal, y0, StepConfig(h=0.05))
    np.testing.assert_allclose(a, LV_Y1, atol=1e-8)


def test_max_iterations(lv, y0, optimal):
    with pytest.raises(MaxIterationsError):
        step(lv, optimal, y0, StepConfig(h=0.05, max_newton_iters=2))


def test_divergence_detected(optimal):
    # stiff exponential energy: the simplified Newton map blows up
    s = np.array([[0.0, 1.0], [-1.0, 0.0]])
    sys = PoissonSystem(2, lambda y: np.broadcast_to(s, y.shape[:-1] + (2, 2)),
                        lambda y: np.stack([8 * np.exp(8 * y[..., 0]), y[..., 1]], axis=-1),
                        lambda y: np.exp(8 * y[..., 0]) + 0.5 * y[..., 1] ** 2,
                        hess_h=lambda y: np.diag([64 * np.exp(8 * y[0]), 1.0]))
    with pytest.raises((NewtonDivergedError, MaxIterationsError)):
        step(sys, optimal, np.array([0.5, 3.0]), StepConfig(h=1.0))


def test_quadrature_cap(lv, y0, optimal):
    with pytest.raises(QuadratureError):
        step(lv, optimal, y0, StepConfig(h=0.05, quad_max_nodes=4))


def test_n_steps():
    assert n_steps_for(0.05, 10.0) == 200
    assert n_steps_for(0.0, 0.0) == 0
    for h, t in [(0.3, 1.0), (0.0, 1.0), (0.1, -1.0)]:
        with pytest.raises(ValueError):
            n_steps_for(h, t)


def test_integrate_records_trajectory(lv, y0, optimal):
    tr = integrate(lv, optimal, y0, 0.05, 1.0)
    assert tr.ok and len(tr.states) == 21 and tr.steps_requested == 20
    assert tr.times[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(tr.states[1], LV_Y1, atol=1e-8)
    assert np.max(np.abs(tr.energy - tr.energy[0])) <= 1e-13
    assert set(tr.invariants) == {"casimir"}


def test_integrate_keeps_partial_trajectory(lv, y0, optimal):
    tr = integrate(lv, optimal, y0, 0.25, 1.0)
    assert not tr.ok
    assert 1 <= len(tr.states) <= 4 and tr.steps_requested == 4
    assert len(tr.reports) == len(tr.states) - 1


def test_warm_start_and_frozen_jacobian(lv, y0, optimal):
    cold = integrate(lv, optimal, y0, 0.05, 1.0)
    warm = integrate(lv, optimal, y0, 0.05, 1.0, StepConfig(h=0.05, warm_start=True))
    frozen = integrate(lv, optimal, y0, 0.05, 1.0, StepConfig(h=0.05, jacobian_refresh="frozen"))
    np.testing.assert_allclose(warm.final, cold.final, atol=1e-12)
    np.testing.assert_allclose(frozen.final, cold.final, atol=1e-12)
    assert sum(r.iterations for r in warm.reports) < sum(r.iterations for r in cold.reports)
    assert sum(r.factorization_count for r in frozen.reports) == 3


def test_synthetic_block_full(optimal):
    sys = synthetic_quartic(40, seed=1)
    y = np.linspace(-1, 1, 40)
    a, _ = step(sys, optimal, y, StepConfig(h=0.05, solver_mode="block"))
    b, _ = step(sys, optimal, y, StepConfig(h=0.05, solver_mode="full"))
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))


def test_avf2_midpoint(lv, y0):
    y1, _ = step(lv, classic_tableau("avf2"), y0, StepConfig(h=0.05))
    assert abs(lv.energy(y1) - lv.energy(y0)) <= 1e-13
