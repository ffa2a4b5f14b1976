"""Reference integrators used for comparison.

Implicit Euler, the averaged vector field (AVF) method and AVF collocation
of degree ``s`` all treat the vector field ``f(y) = -G(y)^{-1} grad U(y)``.
The explicit exponential integrator (EEI) is a five-stage fourth-order
exponential Runge-Kutta method for split potentials.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Legendre

from .integrators import STEPPERS, StepResult, Stepper
from .numkit import FixedPointConfig, QuadratureRule, fixed_point_solve, gauss_legendre, phi_functions, solve

__all__ = [
    "BaselineConfig",
    "implicit_euler_step",
    "avf_step",
    "avfc_step",
    "eei_step",
]


@dataclass(frozen=True, eq=False)
class BaselineConfig:
    fp: FixedPointConfig = field(default_factory=FixedPointConfig)
    quad: QuadratureRule | None = None
    s: int = 2

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("s must be at least 1")
        if self.quad is None:
            object.__setattr__(self, "quad", gauss_legendre(4))


class _VectorFieldStepper(Stepper):
    def __init__(self, system, config: BaselineConfig):
        super().__init__(system, config)
        M = system.metric_matrix
        self._MinvT = None if M is None else solve(M, np.eye(M.shape[0])).T

    def field_rows(self, Y) -> np.ndarray:
        """``f`` evaluated row-wise on a stack of states."""
        g = self.system.grad_rows(Y)
        if self._MinvT is not None:
            return -g @ self._MinvT
        return -np.array([solve(np.atleast_2d(self.system.metric(y)), gy) for y, gy in zip(Y, g)])

    def _result(self, y0, y1, its, res, nodes=None, stages=None):
        if stages is None:
            nodes, stages = np.array([0.0, 1.0]), np.vstack([y0, y1])
        return StepResult(y1, nodes, stages, its, res,
                          self.system.energy(y0), self.system.energy(y1))

    @staticmethod
    def _guess(guess, shape, default):
        if guess is not None and np.shape(guess)[-1] == shape[-1]:
            return np.asarray(guess, dtype=float)[-1].reshape(shape)
        return default


class ImplicitEuler(_VectorFieldStepper):
    name = "ieuler"

    def step(self, h, y0, guess=None):
        y0 = np.asarray(y0, dtype=float)
        y1, its, res = fixed_point_solve(
            lambda y: y0 + h * self.field_rows(y[None])[0],
            self._guess(guess, y0.shape, y0), self.config.fp)
        return self._result(y0, y1, its, res)


class AVF(_VectorFieldStepper):
    name = "avf"

    def step(self, h, y0, guess=None):
        y0 = np.asarray(y0, dtype=float)
        q = self.config.quad
        xi = q.points[:, None]

        def fmap(y1):
            return y0 + h * q.integrate(self.field_rows((1 - xi) * y0 + xi * y1))

        y1, its, res = fixed_point_solve(fmap, self._guess(guess, y0.shape, y0), self.config.fp)
        return self._result(y0, y1, its, res)


class AVFC(_VectorFieldStepper):
    """``u' = h P_{s-1}[f(u)]`` with ``u`` of degree ``s``.

    The unknowns are the coefficients ``a_i`` of ``u'`` in the orthonormal
    shifted Legendre basis, so ``u(tau) = y0 + sum_i a_i int_0^tau p_i`` and
    ``a_i = h <p_i, f(u)>``.
    """

    name = "avfc"

    def __init__(self, system, config):
        super().__init__(system, config)
        s = config.s
        polys = [np.sqrt(2 * k + 1) * Legendre.basis(k, domain=[0.0, 1.0]) for k in range(s)]
        q = config.quad
        self._wp = np.array([p(q.points) for p in polys]) * q.weights      # (s, n)
        self._Pq = np.array([p.integ(lbnd=0.0)(q.points) for p in polys])  # (s, n)
        self._nodes = np.linspace(0.0, 1.0, s + 1)
        self._Pn = np.array([p.integ(lbnd=0.0)(self._nodes) for p in polys])

    def step(self, h, y0, guess=None):
        y0 = np.asarray(y0, dtype=float)
        s = self.config.s

        def fmap(a):
            u = y0 + self._Pq.T @ a
            return h * (self._wp @ self.field_rows(u))

        a, its, res = fixed_point_solve(fmap, np.zeros((s, y0.size)), self.config.fp)
        stages = y0 + self._Pn.T @ a
        stages[0] = y0
        return self._result(y0, stages[-1].copy(), its, res, self._nodes, stages)


class EEI(Stepper):
    """Explicit exponential Runge-Kutta method of order four.

    Five stages at ``c = (0, 1/2, 1/2, 1, 1/2)`` with coefficients built from
    ``phi_1..phi_3`` of ``-h K`` and ``-h K / 2``, ``K = M^{-1} A``; the
    nonlinearity is ``g(y) = -M^{-1} grad V(y)``.
    """

    name = "eei"

    def __init__(self, system, config=None):
        super().__init__(system, config)
        if system.stiff_split is None:
            raise ValueError("EEI needs a stiff split U = y.A.y/2 + V (it has no linear part otherwise)")
        if system.metric_matrix is None:
            raise ValueError("EEI needs a constant metric")
        self.Minv = solve(system.metric_matrix, np.eye(system.d))
        self.K = self.Minv @ system.stiff_split.A
        self._cache = {}

    def _coefficients(self, h):
        key = float(h)
        if key in self._cache:
            return self._cache[key]
        Z = -h * self.K
        e1, p1, p2, p3 = phi_functions(Z, 3)
        eh, q1, q2, q3 = phi_functions(Z / 2, 3)
        a52 = 0.5 * q2 - p3 + 0.25 * p2 - 0.5 * q3
        a54 = 0.25 * q2 - a52
        coeffs = {
            "e_half": eh, "e_full": e1,
            "a21": 0.5 * q1,
            "a31": 0.5 * q1 - q2, "a32": q2,
            "a41": p1 - 2 * p2, "a42": p2, "a43": p2,
            "a51": 0.5 * q1 - 2 * a52 - a54, "a52": a52, "a53": a52, "a54": a54,
            "b1": p1 - 3 * p2 + 4 * p3, "b4": -p2 + 4 * p3, "b5": 4 * p2 - 8 * p3,
        }
        self._cache[key] = coeffs
        return coeffs

    def step(self, h, y0, guess=None):
        y0 = np.asarray(y0, dtype=float)
        C = self._coefficients(h)
        Minv = self.Minv
        gradV = self.system.stiff_split.gradV

        def g(y):
            return -Minv @ np.asarray(gradV(y), dtype=float)

        eh0, e0 = C["e_half"] @ y0, C["e_full"] @ y0
        g1 = g(y0)
        U2 = eh0 + h * C["a21"] @ g1
        g2 = g(U2)
        U3 = eh0 + h * (C["a31"] @ g1 + C["a32"] @ g2)
        g3 = g(U3)
        U4 = e0 + h * (C["a41"] @ g1 + C["a42"] @ g2 + C["a43"] @ g3)
        g4 = g(U4)
        U5 = eh0 + h * (C["a51"] @ g1 + C["a52"] @ g2 + C["a53"] @ g3 + C["a54"] @ g4)
        g5 = g(U5)
        y1 = e0 + h * (C["b1"] @ g1 + C["b4"] @ g4 + C["b5"] @ g5)
        stages = np.vstack([y0, U2, U3, U4, U5])
        return StepResult(y1, np.array([0.0, 0.5, 0.5, 1.0, 0.5]), stages, 0, 0.0,
                          self.system.energy(y0), self.system.energy(y1))


def implicit_euler_step(system, cfg: BaselineConfig, h, y0) -> StepResult:
    return ImplicitEuler(system, cfg).step(h, y0)


def avf_step(system, cfg: BaselineConfig, h, y0) -> StepResult:
    return AVF(system, cfg).step(h, y0)


def avfc_step(system, cfg: BaselineConfig, h, y0) -> StepResult:
    return AVFC(system, cfg).step(h, y0)


def eei_step(system, M, h, y0) -> StepResult:
    stepper = EEI(system)
    if M is not None:
        stepper.Minv = solve(np.atleast_2d(M), np.eye(system.d))
        stepper.K = stepper.Minv @ system.stiff_split.A
    return stepper.step(h, y0)


STEPPERS.update({"ieuler": ImplicitEuler, "avf": AVF, "avfc": AVFC, "eei": EEI})
