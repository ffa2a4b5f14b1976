import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_psd, random_spd
from ffed.basis import fitted_generators
from ffed.errors import StepFailure
from ffed.harness import compute_reference
from ffed.integrators import (
    Method,
    MethodConfig,
    effed_step,
    ffed_step_constant,
    ffed_step_general,
    integrate,
    make_stepper,
    time_grid,
)
from ffed.numkit import FixedPointConfig, gauss_legendre
from ffed.systems import GradientSystem, StiffSplit, get_problem, make_linear, make_rotcubic

NEWTON = FixedPointConfig(solver="newton", tolerance=1e-13, max_iterations=50)


def cfg(r=2, **kw):
    kw.setdefault("fp", NEWTON)
    return MethodConfig(r=r, **kw)


def _quartic_system(rng, d, A=None, M=None):
    """U = y.A.y/2 + sum(y^4)/4 + c.y with a constant SPD metric."""
    A = random_psd(rng, d, scale=3.0) if A is None else A
    M = random_spd(rng, d) if M is None else M
    c = rng.standard_normal(d)

    def V(y):
        y = np.asarray(y, dtype=float)
        return 0.25 * np.sum(y ** 4, axis=-1) + y @ c

    def gradV(y):
        return np.asarray(y, dtype=float) ** 3 + c

    def U(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", y, A, y) + V(y)

    def gradU(y):
        return np.asarray(y, dtype=float) @ A + gradV(y)

    return GradientSystem.constant_metric(M, U, gradU, stiff_split=StiffSplit(A, V, gradV),
                                          vectorized=True)


def test_r1_scalar_quadratic_step():
    # r = 1 on U = y^2/2 is the trapezoidal rule: y1 = (1 - h/2) / (1 + h/2)
    res = ffed_step_constant(np.eye(1), make_linear(1.0).system, cfg(1), 1.0, [1.0])
    assert res.y1[0] == pytest.approx(1 / 3, abs=1e-14)


def test_r2_scalar_quadratic_is_pade22():
    # r = 2 on a linear problem reproduces the (2,2) Pade approximant of exp(-z)
    z = 0.7
    res = ffed_step_constant(np.eye(1), make_linear(1.0).system, cfg(2), z, [1.0])
    assert res.y1[0] == pytest.approx((1 - z / 2 + z * z / 12) / (1 + z / 2 + z * z / 12), abs=1e-14)


def test_stationary_point_is_fixed():
    sys = make_rotcubic().system
    res = ffed_step_constant(None, sys, cfg(2, fp=FixedPointConfig()), 0.5, [0.0, 0.0])
    np.testing.assert_array_equal(res.y1, [0.0, 0.0])
    assert res.iterations == 1


def test_effed_scalar_exponential():
    res = effed_step(make_linear(2.0).system, None, cfg(2), 0.5, [1.0])
    assert res.y1[0] == pytest.approx(math.exp(-1), abs=1e-15)


def test_effed_huge_stiffness_underflows_to_zero():
    res = effed_step(make_linear(1e8).system, None, cfg(2), 1.0, [1.0])
    assert np.all(np.isfinite(res.y1)) and abs(res.y1[0]) < 1e-300


@pytest.mark.parametrize("r", [1, 2, 3])
def test_effed_with_zero_linear_part_equals_ffed(r, rng):
    sys = _quartic_system(rng, 3, A=np.zeros((3, 3)))
    y0 = rng.standard_normal(3)
    a = effed_step(sys, None, cfg(r), 0.2, y0).y1
    b = ffed_step_constant(None, sys, cfg(r), 0.2, y0).y1
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("r", [1, 2])
def test_general_metric_path_matches_constant(r, rng):
    sys = _quartic_system(rng, 3)
    y0 = rng.standard_normal(3)
    a = ffed_step_general(sys, cfg(r), 0.3, y0).y1
    b = ffed_step_constant(None, sys, cfg(r), 0.3, y0).y1
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_constant_metric_result_does_not_depend_on_nodes(rng):
    sys = _quartic_system(rng, 2)
    y0 = rng.standard_normal(2)
    ends = [ffed_step_constant(None, sys, cfg(3, nodes=n), 0.4, y0).y1
            for n in [None, (0, 1 / 3, 2 / 3, 1), (0, 0.1, 0.8, 1)]]
    for e in ends[1:]:
        np.testing.assert_allclose(e, ends[0], atol=1e-12)


def test_fitted_exponential_generator_is_exact_on_linear_problem():
    lam = 3.0
    gens = lambda h: fitted_generators([lambda t: np.exp(-lam * t)], h,
                                       antiderivatives=[lambda t: -np.exp(-lam * t) / lam])
    fine = cfg(1, generators=gens, quad=gauss_legendre(12))
    res = ffed_step_constant(None, make_linear(lam).system, fine, 0.8, [1.0])
    assert res.y1[0] == pytest.approx(math.exp(-lam * 0.8), abs=1e-13)


@pytest.mark.parametrize("stiffness", [1.0, 1e4, 1e8])
def test_fitted_effed_matches_monomial_effed_for_polynomial_generators(stiffness, rng):
    sys = _quartic_system(rng, 2, A=random_psd(rng, 2, scale=stiffness))
    y0 = rng.standard_normal(2)
    poly = lambda h: fitted_generators([lambda t: np.ones_like(t), lambda t: t], h,
                                       antiderivatives=[lambda t: t, lambda t: t * t / 2])
    a = effed_step(sys, None, cfg(2, generators=poly), 0.3, y0).y1
    b = effed_step(sys, None, cfg(2), 0.3, y0).y1
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_rotcubic_ten_steps_fourth_order():
    p = make_rotcubic().with_horizon(0.1)
    ref = compute_reference(p).endpoint
    method = Method("ffed", cfg(2))
    e1 = np.linalg.norm(integrate(p, method, 0.02).states[-1] - ref)
    e2 = np.linalg.norm(integrate(p, method, 0.01).states[-1] - ref)
    assert math.log2(e1 / e2) == pytest.approx(4.0, abs=0.25)


# -- energy -------------------------------------------------------------------

@given(seed=st.integers(0, 10_000), h=st.floats(0.01, 3.0), r=st.integers(1, 3))
def test_ffed_energy_never_increases(seed, h, r):
    rng = np.random.default_rng(seed)
    sys = _quartic_system(rng, 3)
    y0 = 2 * rng.standard_normal(3)
    res = ffed_step_constant(None, sys, cfg(r), h, y0)
    assert res.energy_after <= res.energy_before + 1e-10 * max(1.0, abs(res.energy_before))


@given(seed=st.integers(0, 10_000), h=st.floats(0.01, 3.0))
def test_effed_energy_never_increases(seed, h):
    rng = np.random.default_rng(seed)
    sys = _quartic_system(rng, 3, A=random_psd(rng, 3, scale=1e4))
    y0 = rng.standard_normal(3)
    res = effed_step(sys, None, cfg(2), h, y0)
    assert res.energy_after <= res.energy_before + 1e-10 * max(1.0, abs(res.energy_before))


@given(h=st.floats(0.01, 1.0))
def test_general_metric_energy_never_increases(h):
    p = get_problem("metric2d")
    res = ffed_step_general(p.system, cfg(2), h, p.y0)
    assert res.energy_after <= res.energy_before + 1e-12


def test_energy_decreases_along_nonsymmetric_metric_trajectory():
    traj = integrate(make_rotcubic().with_horizon(5.0), Method("ffed", cfg(2)), 0.1)
    assert traj.energy_increments.max() <= 1e-10


# -- driver -------------------------------------------------------------------

def test_time_grid_shortens_last_step():
    np.testing.assert_allclose(time_grid(1.0, 0.3), [0, 0.3, 0.6, 0.9, 1.0])
    g = time_grid(1.0, 0.1)
    assert len(g) == 11 and g[-1] == 1.0


def test_trajectory_shapes():
    p = make_rotcubic().with_horizon(0.5)
    traj = integrate(p, Method("ffed", cfg(2)), 0.1)
    assert traj.states.shape == (6, 2) and traj.energies.shape == (6,)
    assert traj.method == "ffed-r2" and traj.h == 0.1


def test_step_failure_carries_location():
    p = make_rotcubic().with_horizon(1.0)
    strict = Method("ffed", MethodConfig(r=2, fp=FixedPointConfig(max_iterations=3,
                                                                  on_nonconvergence="error")))
    with pytest.raises(StepFailure) as info:
        integrate(p, strict, 0.5)
    assert info.value.step_index == 0


def test_effed_requires_split():
    with pytest.raises(ValueError):
        make_stepper("effed", get_problem("metric2d").system)


def test_low_exactness_quadrature_warns():
    with pytest.warns(UserWarning, match="2r\\+2"):
        MethodConfig(r=2, quad=gauss_legendre(2))


def test_invalid_nodes():
    with pytest.raises(ValueError):
        MethodConfig(r=2, nodes=(0.0, 0.5, 0.9))
    with pytest.raises(ValueError):
        MethodConfig(r=2, nodes=(0.0, 1.0))


def _flat(d=2):
    return GradientSystem.constant_metric(np.eye(d), lambda y: 0.0, lambda y: np.zeros_like(y))


def test_zero_gradient_leaves_state_unchanged():
    y0 = np.array([0.3, -1.2])
    res = ffed_step_constant(None, _flat(), cfg(2, fp=FixedPointConfig()), 0.7, y0)
    np.testing.assert_array_equal(res.y1, y0)
    assert res.iterations == 1


@pytest.mark.parametrize("name", ["rotcubic", "rotcubic-sym"])
def test_one_step_from_initial_state_lowers_energy(name):
    p = get_problem(name)
    res = ffed_step_constant(None, p.system, cfg(2), 0.1, p.y0)
    assert res.energy_after < res.energy_before


def test_horizon_shorter_than_step():
    traj = integrate(make_linear(1.0).with_horizon(0.3), Method("ffed", cfg(2)), 1.0)
    np.testing.assert_array_equal(traj.times, [0.0, 0.3])
    assert traj.states[-1, 0] == pytest.approx((1 - 0.15 + 0.0075) / (1 + 0.15 + 0.0075), abs=1e-14)
