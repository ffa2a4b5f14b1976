"""Dense numerical kernels shared by the integrators.

Gauss-Legendre rules on subintervals of [0, 1], the matrix exponential and
the associated phi-functions, guarded linear solves, and the stage-equation
driver used by every implicit method (plain/relaxed fixed point, or Newton
with a finite-difference Jacobian).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
import scipy.linalg

from .errors import (
    InvalidInterval,
    NonConvergence,
    NonConvergenceWarning,
    Overflow,
    SingularMatrix,
)

__all__ = [
    "QuadratureRule",
    "gauss_legendre",
    "expm",
    "phi_functions",
    "solve",
    "FixedPointConfig",
    "fixed_point_solve",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Interpolatory rule: ``sum_q weights[q] * f(points[q])``."""

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.points.shape != self.weights.shape or self.points.ndim != 1:
            raise ValueError("points and weights must be 1-D arrays of equal length")

    @property
    def n(self) -> int:
        return len(self.points)

    def integrate(self, values) -> np.ndarray:
        """Apply the rule to samples whose leading axis runs over the points."""
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))

    def on(self, a: float, b: float) -> "QuadratureRule":
        """The same rule affinely mapped from [0, 1] to [a, b]."""
        return QuadratureRule(a + (b - a) * self.points, (b - a) * self.weights,
                              self.exactness_degree)


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [a, b] ⊆ [0, 1], exact to degree 2n-1."""
    if n < 1:
        raise ValueError(f"need at least one point, got n={n}")
    if not (0.0 <= a < b <= 1.0):
        raise InvalidInterval(f"[{a}, {b}] is not a nonempty subinterval of [0, 1]")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(a + (b - a) * (x + 1.0) / 2.0, (b - a) * w / 2.0, 2 * n - 1)


def _as_matrix(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def expm(M) -> np.ndarray:
    """Matrix exponential (scaling and squaring with Padé approximants)."""
    M = _as_matrix(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    with np.errstate(over="ignore", invalid="ignore"):
        E = scipy.linalg.expm(M)
    if not np.all(np.isfinite(E)):
        raise Overflow("matrix exponential overflowed")
    return E


def phi_functions(M, k_max: int) -> list[np.ndarray]:
    r"""Return ``[phi_0(M), ..., phi_{k_max}(M)]``.

    ``phi_0(M) = exp(M)`` and, for k >= 1,
    ``phi_k(M) = \int_0^1 exp((1-t) M) t^{k-1} / (k-1)! dt``.
    All of them come out of a single exponential of the block matrix
    ``[[M, I, 0, ...], [0, 0, I, ...], ..., [0, ..., 0]]`` whose first block
    row is ``[phi_0, phi_1, ..., phi_k]``.
    """
    M = _as_matrix(M)
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    d = M.shape[0]
    size = d * (k_max + 1)
    big = np.zeros((size, size))
    big[:d, :d] = M
    eye = np.eye(d)
    for k in range(k_max):
        big[k * d:(k + 1) * d, (k + 1) * d:(k + 2) * d] = eye
    E = expm(big)
    return [E[:d, k * d:(k + 1) * d].copy() for k in range(k_max + 1)]


def solve(M, b) -> np.ndarray:
    """``M^{-1} b``; raises :class:`SingularMatrix` instead of LinAlgError."""
    try:
        x = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("solve produced non-finite values")
    return x


@dataclass(frozen=True)
class FixedPointConfig:
    """Settings for the stage-equation driver.

    ``solver="fixed_point"`` iterates ``x <- x + relaxation * (map(x) - x)``;
    ``solver="newton"`` applies Newton's method to ``x - map(x) = 0`` with a
    forward-difference Jacobian, which is what large steps on stiff or
    strongly oscillatory problems need. The stopping test is on the max-norm
    of the increment in both cases.
    """

    tolerance: float = 1e-14
    max_iterations: int = 10
    on_nonconvergence: Literal["error", "warn_and_continue"] = "warn_and_continue"
    solver: Literal["fixed_point", "newton"] = "fixed_point"
    relaxation: float = 1.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.on_nonconvergence not in ("error", "warn_and_continue"):
            raise ValueError(f"unknown policy {self.on_nonconvergence!r}")
        if self.solver not in ("fixed_point", "newton"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")


def _give_up(cfg, iterations, residual):
    msg = (f"stage iteration did not converge in {iterations} iterations "
           f"(last increment {residual:.3e} > tol {cfg.tolerance:.1e})")
    if cfg.on_nonconvergence == "error":
        raise NonConvergence(msg, iterations, residual)
    warnings.warn(msg, NonConvergenceWarning, stacklevel=3)


def fixed_point_solve(fmap: Callable[[np.ndarray], np.ndarray], initial,
                      cfg: FixedPointConfig = FixedPointConfig()):
    """Solve ``x = fmap(x)`` starting from ``initial``.

    Returns ``(x, iterations, residual)`` where ``residual`` is the max-norm
    of the last increment.
    """
    x = np.array(initial, dtype=float)
    if cfg.solver == "newton":
        return _newton(fmap, x, cfg)
    residual = math.inf
    for it in range(1, cfg.max_iterations + 1):
        fx = np.asarray(fmap(x), dtype=float)
        step = fx - x
        if cfg.relaxation != 1.0:
            step = cfg.relaxation * step
        residual = float(np.max(np.abs(step))) if step.size else 0.0
        x = x + step
        if not np.isfinite(residual):
            break
        if residual <= cfg.tolerance:
            return x, it, residual
    _give_up(cfg, cfg.max_iterations, residual)
    return x, cfg.max_iterations, residual


def _jacobian(residual_of, v, F):
    eps = np.sqrt(np.finfo(float).eps)
    J = np.empty((v.size, v.size))
    for k in range(v.size):
        dv = eps * max(1.0, abs(v[k]))
        vk = v.copy()
        vk[k] += dv
        J[:, k] = (residual_of(vk) - F) / dv
    return J


def _newton(fmap, x, cfg):
    # Chord variant: the Jacobian is refreshed only when contraction stalls.
    shape = x.shape

    def residual_of(v):
        return v - np.asarray(fmap(v.reshape(shape)), dtype=float).ravel()

    v = x.ravel().copy()
    F = residual_of(v)
    residual = float(np.max(np.abs(F))) if v.size else 0.0
    if residual <= cfg.tolerance:
        return (v - F).reshape(shape), 1, residual
    lu = None
    previous = math.inf
    for it in range(1, cfg.max_iterations + 1):
        if lu is None:
            J = _jacobian(residual_of, v, F)
            if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e15:
                residual = math.inf
                break
            lu = scipy.linalg.lu_factor(J)
        delta = scipy.linalg.lu_solve(lu, -F)
        v = v + delta
        residual = float(np.max(np.abs(delta)))
        if not np.isfinite(residual):
            break
        if residual <= cfg.tolerance:
            return v.reshape(shape), it, residual
        if residual > 0.1 * previous:
            lu = None
        previous = residual
        F = residual_of(v)
    _give_up(cfg, cfg.max_iterations, residual)
    return v.reshape(shape), cfg.max_iterations, residual
