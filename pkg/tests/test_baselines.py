import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ffed.baselines import AVFC, EEI, BaselineConfig, avf_step, avfc_step, eei_step, implicit_euler_step
from ffed.integrators import Method, integrate
from ffed.numkit import FixedPointConfig, expm
from ffed.systems import get_problem, make_linear, make_random_quadratic, make_rotcubic

NEWTON = FixedPointConfig(solver="newton", tolerance=1e-13, max_iterations=50)
BC = BaselineConfig(fp=NEWTON)


def _gauss_rk_amplification(z):
    # oracle: two-stage Gauss Butcher tableau, R(z) = 1 + z b.(I - zA)^{-1} 1
    s3 = math.sqrt(3)
    A = np.array([[0.25, 0.25 - s3 / 6], [0.25 + s3 / 6, 0.25]])
    b = np.array([0.5, 0.5])
    return 1 + z * b @ np.linalg.solve(np.eye(2) - z * A, np.ones(2))


def test_implicit_euler_amplification():
    assert implicit_euler_step(make_linear(1.0).system, BC, 1.0, [1.0]).y1[0] == pytest.approx(0.5, abs=1e-14)


def test_avf_amplification():
    assert avf_step(make_linear(1.0).system, BC, 1.0, [1.0]).y1[0] == pytest.approx(1 / 3, abs=1e-14)


@pytest.mark.parametrize("z", [0.1, 1.0, 5.0, 40.0])
def test_avfc_is_gauss_collocation_on_linear_problems(z):
    y1 = avfc_step(make_linear(z).system, BC, 1.0, [1.0]).y1[0]
    assert y1 == pytest.approx(_gauss_rk_amplification(-z), abs=1e-13)
    assert y1 == pytest.approx((1 - z / 2 + z * z / 12) / (1 + z / 2 + z * z / 12), abs=1e-13)


@pytest.mark.parametrize("z", [40.0, 1e3, 1e6])
def test_avf_does_not_damp_stiff_modes(z):
    assert abs(avf_step(make_linear(z).system, BC, 1.0, [1.0]).y1[0]) > 0.9


def test_eei_exact_for_linear_problems():
    p = make_random_quadratic(d=4, seed=3)
    A = p.system.stiff_split.A
    y1 = eei_step(p.system, None, 0.7, p.y0).y1
    np.testing.assert_allclose(y1, expm(-0.7 * A) @ p.y0, atol=1e-12)


def test_eei_respects_metric():
    p = get_problem("quadcubic")
    res = EEI(p.system).step(0.01, p.y0)
    ref = Method("avfc", BC)
    y_ref = integrate(p.with_horizon(0.01), ref, 0.01).states[-1]
    np.testing.assert_allclose(res.y1, y_ref, atol=1e-9)


def test_eei_requires_split():
    with pytest.raises(ValueError, match="split"):
        EEI(get_problem("metric2d").system)


def test_eei_stable_where_explicit_rk_blows_up():
    # the linear part is solved exactly, so h |lambda| >> 1 is fine
    p = get_problem("stiffdemo:norm=1e6")
    traj = integrate(p.with_horizon(1.0), "eei", 0.1)
    assert np.all(np.isfinite(traj.states)) and np.max(np.abs(traj.states)) < 2


@given(seed=st.integers(0, 1000), h=st.floats(0.01, 2.0))
def test_avf_preserves_energy_decay(seed, h):
    p = make_random_quadratic(d=3, seed=seed, scale=5.0)
    res = avf_step(p.system, BC, h, p.y0)
    assert res.energy_after <= res.energy_before + 1e-12


def test_avfc_s1_equals_avf():
    p = make_rotcubic()
    a = avfc_step(p.system, BaselineConfig(fp=NEWTON, s=1), 0.05, p.y0).y1
    b = avf_step(p.system, BC, 0.05, p.y0).y1
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_avfc_stage_values_are_returned():
    p = make_rotcubic()
    res = AVFC(p.system, BC).step(0.05, p.y0)
    assert res.stages.shape == (3, 2)
    np.testing.assert_array_equal(res.stages[0], p.y0)
    np.testing.assert_array_equal(res.stages[-1], res.y1)


def test_baseline_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(s=0)


def _no_linear_part():
    from ffed.systems import GradientSystem, Problem, StiffSplit

    def V(y):
        y = np.asarray(y, dtype=float)
        return 0.25 * np.sum(y ** 4, axis=-1) + 0.5 * y[..., 0] * y[..., 1]

    def gradV(y):
        y = np.asarray(y, dtype=float)
        return y ** 3 + 0.5 * y[..., ::-1]

    sys = GradientSystem.constant_metric(np.eye(2), V, gradV, vectorized=True,
                                         stiff_split=StiffSplit(np.zeros((2, 2)), V, gradV))
    return Problem(sys, [1.0, -0.5], 1.0, "quartic")


def test_eei_without_linear_part_is_fourth_order():
    from ffed.harness import compute_reference, fit_order

    p = _no_linear_part()
    ref = compute_reference(p).endpoint
    hs = [0.1 / 2 ** i for i in range(1, 5)]
    errs = [np.linalg.norm(integrate(p, "eei", h).states[-1] - ref) for h in hs]
    assert fit_order(hs, errs) == pytest.approx(4.0, abs=0.25)


def test_eei_stable_where_classical_rk4_overflows():
    from ffed.harness import _rk4

    p = get_problem("stiffdemo", epsilon=1e-2)
    f = lambda y: p.system.vector_field(y)
    with np.errstate(over="ignore", invalid="ignore"):
        rk = _rk4(f, p.y0, 0.01, 100, 100)
    assert not np.all(np.isfinite(rk[-1]))
    traj = integrate(p.with_horizon(1.0), "eei", 0.01)
    assert np.all(np.isfinite(traj.states)) and np.max(np.abs(traj.states)) <= 1.0


def test_zero_gradient_baselines():
    from ffed.systems import GradientSystem

    flat = GradientSystem.constant_metric(np.eye(2), lambda y: 0.0, lambda y: np.zeros_like(y))
    y0 = np.array([0.4, 0.1])
    for step in (implicit_euler_step, avf_step, avfc_step):
        np.testing.assert_array_equal(step(flat, BaselineConfig(), 0.5, y0).y1, y0)


def test_avfc_matches_general_metric_ffed_with_identity_metric():
    from ffed.integrators import MethodConfig, ffed_step_general

    p = get_problem("rotcubic-sym")
    a = avfc_step(p.system, BC, 0.1, p.y0).y1
    b = ffed_step_general(p.system, MethodConfig(r=2, fp=NEWTON), 0.1, p.y0).y1
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_avfc_lowers_rotcubic_energy():
    p = make_rotcubic()
    res = avfc_step(p.system, BC, 0.1, p.y0)
    assert res.energy_after < res.energy_before
