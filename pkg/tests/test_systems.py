import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ffed.systems import (
    GradientSystem,
    StiffSplit,
    epsilon_for_norm,
    get_problem,
    make_rotcubic,
    make_stiff_demo,
    stiff_demo_matrix,
    validate,
)

ALL = ["rotcubic", "rotcubic-sym", "stiffdemo", "quadcubic", "metric2d", "linear", "quadratic"]


def _fd_gradient(U, y, eps=1e-6):
    g = np.empty_like(y)
    for i in range(y.size):
        e = np.zeros_like(y)
        e[i] = eps
        g[i] = (U(y + e) - U(y - e)) / (2 * eps)
    return g


def test_rotcubic_energy_at_initial_state():
    p = make_rotcubic()
    theta = math.pi / 2 - 1e-4
    assert p.system.energy(p.y0) == pytest.approx(10 + math.cos(theta) / 6, rel=1e-15)


def test_rotcubic_metric_is_inverse_rotation():
    p = make_rotcubic(theta=0.3)
    R = np.array([[math.cos(0.3), math.sin(0.3)], [-math.sin(0.3), math.cos(0.3)]])
    np.testing.assert_allclose(p.system.metric_matrix @ R, np.eye(2), atol=1e-15)


@pytest.mark.parametrize("name", ALL)
@given(seed=st.integers(0, 10_000))
def test_gradient_matches_finite_differences(name, seed):
    sys = get_problem(name).system
    y = np.random.default_rng(seed).uniform(-1, 1, sys.d)
    g = np.atleast_1d(sys.gradient(y))
    fd = _fd_gradient(sys.potential, y)
    assert np.max(np.abs(fd - g)) <= 1e-5 * max(1.0, np.max(np.abs(g)))


@pytest.mark.parametrize("name", ["rotcubic", "stiffdemo", "quadcubic", "quadratic"])
def test_split_gradient_consistency(name):
    sys = get_problem(name).system
    A, gradV = sys.stiff_split.A, sys.stiff_split.gradV
    for y in np.random.default_rng(1).uniform(-1, 1, (20, sys.d)):
        np.testing.assert_allclose(A @ y + gradV(y), sys.gradient(y), atol=1e-10)


def test_stiffdemo_spectrum():
    n, eps = 8, 0.1
    ev = np.linalg.eigvalsh(stiff_demo_matrix(n, eps))
    k = np.arange(1, n + 1)
    np.testing.assert_allclose(ev, np.sort(4 * np.sin(k * np.pi / (2 * (n + 1))) ** 2 / eps ** 2), rtol=1e-12)


@pytest.mark.parametrize("norm", [1e2, 1e4, 1e6])
def test_epsilon_for_norm(norm):
    A = stiff_demo_matrix(8, epsilon_for_norm(8, norm))
    assert np.linalg.norm(A, 2) == pytest.approx(norm, rel=1e-12)


def test_problem_lookup_forms():
    assert get_problem("stiffdemo-n16").system.d == 16
    p = get_problem("stiffdemo:n=4,norm=1e6")
    assert p.system.d == 4 and np.linalg.norm(p.system.stiff_split.A, 2) == pytest.approx(1e6)
    assert get_problem("rotcubic", T=1.0).T == 1.0
    with pytest.raises(KeyError):
        get_problem("nope")


def test_problem_key_depends_on_content():
    assert make_rotcubic().key() == make_rotcubic().key()
    assert make_rotcubic().key() != make_rotcubic(r_param=10.0).key()
    assert make_stiff_demo().key() != make_stiff_demo(epsilon=0.01).key()


@pytest.mark.parametrize("name", ALL)
def test_validate_builtin_problems(name):
    assert validate(get_problem(name).system, samples=20).ok


def test_validate_flags_nonsymmetric_metric_as_informational():
    report = validate(make_rotcubic().system, samples=10)
    assert not report["metric_symmetry"].passed
    assert report["metric_symmetry"].informational
    assert report.ok


def test_validate_catches_wrong_sign_gradient():
    p = make_rotcubic()
    sys = GradientSystem.constant_metric(p.system.metric_matrix, p.system.potential,
                                         lambda y: -p.system.gradient(y))
    report = validate(sys, samples=10)
    assert not report["gradient_fd"].passed
    assert not report.ok


def test_validate_catches_indefinite_metric():
    sys = GradientSystem.constant_metric([[1.0, 0.0], [0.0, -1.0]], lambda y: y @ y / 2, lambda y: y)
    assert not validate(sys, samples=10)["metric_positive"].passed


def test_inconsistent_split_rejected():
    with pytest.raises(ValueError, match="split"):
        GradientSystem.constant_metric(np.eye(1), lambda y: y[0] ** 2, lambda y: 2 * y,
                                       stiff_split=StiffSplit([[1.0]], lambda y: 0.0, lambda y: 0 * y))


def test_stationary_points():
    np.testing.assert_array_equal(make_rotcubic().system.gradient(np.zeros(2)), [0.0, 0.0])
    split = make_stiff_demo().system.stiff_split
    np.testing.assert_array_equal(split.gradV(np.ones(8)), np.zeros(8))
    assert np.linalg.eigvalsh(split.A).min() > 0


def test_validate_identity_metric_system():
    sys = GradientSystem.constant_metric(np.eye(3), lambda y: 0.5 * y @ y, lambda y: y)
    report = validate(sys, samples=10)
    assert report["metric_symmetry"].passed and report["metric_positive"].passed
