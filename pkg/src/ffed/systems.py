"""Gradient systems ``G(y) y' = -grad U(y)`` and the benchmark problems."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

__all__ = [
    "StiffSplit",
    "GradientSystem",
    "Problem",
    "make_rotcubic",
    "make_rotcubic_sym",
    "make_stiff_demo",
    "make_quadcubic",
    "make_metric_demo",
    "make_linear",
    "make_random_quadratic",
    "get_problem",
    "PROBLEMS",
    "CheckResult",
    "ValidationReport",
    "validate",
]


@dataclass(frozen=True, eq=False)
class StiffSplit:
    """``U(y) = y.A.y / 2 + V(y)``."""

    A: np.ndarray
    V: Callable
    gradV: Callable

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))


@dataclass(frozen=True, eq=False)
class GradientSystem:
    """The model ``G(y) y' = -grad U(y)``.

    Callables must be pure. ``metric_matrix`` is set when ``G`` does not
    depend on the state; integrators that need a constant metric use it.
    With ``vectorized=True`` the potential, gradient and ``gradV`` accept a
    stack of states of shape ``(n, d)`` and act row-wise.
    """

    d: int
    metric: Callable
    potential: Callable
    gradient: Callable
    stiff_split: StiffSplit | None = None
    gamma_floor: np.ndarray | None = None
    metric_matrix: np.ndarray | None = None
    vectorized: bool = False
    split_tolerance: float = 1e-8

    def __post_init__(self):
        if self.metric_matrix is not None:
            object.__setattr__(self, "metric_matrix",
                               np.atleast_2d(np.asarray(self.metric_matrix, dtype=float)))
        if self.stiff_split is not None:
            bad = _split_defect(self, np.random.default_rng(0), 5)
            if bad > self.split_tolerance:
                raise ValueError(f"stiff split inconsistent with U (relative defect {bad:.2e})")

    @classmethod
    def constant_metric(cls, M, potential, gradient, **kw) -> "GradientSystem":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(d=M.shape[0], metric=lambda y: M, potential=potential,
                   gradient=gradient, metric_matrix=M, **kw)

    def grad_rows(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if self.vectorized:
            return np.asarray(self.gradient(Y), dtype=float).reshape(Y.shape)
        return np.array([self.gradient(y) for y in Y], dtype=float).reshape(Y.shape)

    def gradV_rows(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        g = self.stiff_split.gradV
        if self.vectorized:
            return np.asarray(g(Y), dtype=float).reshape(Y.shape)
        return np.array([g(y) for y in Y], dtype=float).reshape(Y.shape)

    def energy(self, y) -> float:
        return float(self.potential(np.asarray(y, dtype=float)))

    def vector_field(self, y) -> np.ndarray:
        """``-G(y)^{-1} grad U(y)``."""
        y = np.asarray(y, dtype=float)
        return -np.linalg.solve(np.atleast_2d(self.metric(y)), np.atleast_1d(self.gradient(y)))


def _split_defect(sys: GradientSystem, rng, samples: int) -> float:
    split = sys.stiff_split
    worst = 0.0
    for _ in range(samples):
        y = rng.uniform(-1.0, 1.0, sys.d)
        u = sys.potential(y)
        u_split = 0.5 * y @ split.A @ y + split.V(y)
        g = np.atleast_1d(sys.gradient(y))
        g_split = split.A @ y + np.atleast_1d(split.gradV(y))
        scale_u = max(abs(u), 1.0)
        scale_g = max(np.max(np.abs(g)), 1.0)
        worst = max(worst, abs(u - u_split) / scale_u, np.max(np.abs(g - g_split)) / scale_g)
    return worst


@dataclass(frozen=True, eq=False)
class Problem:
    system: GradientSystem
    y0: np.ndarray
    T: float
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        object.__setattr__(self, "y0", y0)
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if not np.all(np.isfinite(y0)):
            raise ValueError("initial value must be finite")
        if y0.shape != (self.system.d,):
            raise ValueError(f"y0 has shape {y0.shape}, expected ({self.system.d},)")

    def with_horizon(self, T: float) -> "Problem":
        return Problem(self.system, self.y0, T, self.name, dict(self.params))

    def key(self) -> str:
        """Content hash of the problem definition (name, parameters, y0, T)."""
        payload = {"name": self.name, "params": self.params,
                   "y0": [float.hex(float(v)) for v in self.y0], "T": float.hex(float(self.T))}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- problem constructors ---------------------------------------------------

def _rotcubic_parts(theta, r_param):
    s, c = math.sin(theta), math.cos(theta)

    def V(y):
        y1, y2 = y[..., 0], y[..., 1]
        return -0.5 * s * (y1 * y2**2 - y1**3 / 3) + 0.5 * c * (-y1**2 * y2 + y2**3 / 3)

    def gradV(y):
        y1, y2 = y[..., 0], y[..., 1]
        return np.stack([-0.5 * s * (y2**2 - y1**2) - c * y1 * y2,
                         -s * y1 * y2 + 0.5 * c * (y2**2 - y1**2)], axis=-1)

    def U(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * r_param * np.sum(y**2, axis=-1) + V(y)

    def gradU(y):
        y = np.asarray(y, dtype=float)
        return r_param * y + gradV(y)

    split = StiffSplit(r_param * np.eye(2), V, gradV)
    return U, gradU, split


def make_rotcubic(theta: float = math.pi / 2 - 1e-4, r_param: float = 20.0,
                  y0=(0.0, 1.0), T: float = 100.0) -> Problem:
    """Two-dimensional cubic potential with a rotation metric.

    ``G`` is the inverse of ``[[cos t, sin t], [-sin t, cos t]]``; it is not
    symmetric, but its symmetric part ``cos(t) I`` is positive definite, so
    ``v.G.v >= 0`` still holds.
    """
    s, c = math.sin(theta), math.cos(theta)
    G = np.linalg.inv(np.array([[c, s], [-s, c]]))
    U, gradU, split = _rotcubic_parts(theta, r_param)
    system = GradientSystem.constant_metric(G, U, gradU, stiff_split=split,
                                            gamma_floor=c * np.eye(2), vectorized=True)
    return Problem(system, y0, T, "rotcubic", {"theta": theta, "r": r_param})


def make_rotcubic_sym(theta: float = math.pi / 2 - 1e-4, r_param: float = 20.0,
                      y0=(0.0, 1.0), T: float = 100.0) -> Problem:
    """The rotcubic potential with the identity metric (a true gradient flow)."""
    U, gradU, split = _rotcubic_parts(theta, r_param)
    system = GradientSystem.constant_metric(np.eye(2), U, gradU, stiff_split=split,
                                            gamma_floor=np.eye(2), vectorized=True)
    return Problem(system, y0, T, "rotcubic-sym", {"theta": theta, "r": r_param})


def stiff_demo_matrix(n: int, epsilon: float) -> np.ndarray:
    return (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / epsilon**2


def make_stiff_demo(n: int = 8, epsilon: float = 0.1, T: float = 10.0) -> Problem:
    """Semidiscrete Allen-Cahn-type problem ``y' = -A y - (y^3 - y)``.

    ``A`` is the scaled second-difference matrix; its norm grows like
    ``4 / epsilon**2``, so small ``epsilon`` makes the system arbitrarily stiff.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    A = stiff_demo_matrix(n, epsilon)

    def V(y):
        return 0.25 * np.sum((np.asarray(y) ** 2 - 1.0) ** 2, axis=-1)

    def gradV(y):
        y = np.asarray(y, dtype=float)
        return y**3 - y

    def U(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", y, A, y) + V(y)

    def gradU(y):
        y = np.asarray(y, dtype=float)
        return y @ A + gradV(y)

    x = np.arange(1, n + 1) / (n + 1)
    system = GradientSystem.constant_metric(np.eye(n), U, gradU,
                                            stiff_split=StiffSplit(A, V, gradV),
                                            gamma_floor=np.eye(n), vectorized=True)
    return Problem(system, np.sin(np.pi * x), T, f"stiffdemo-n{n}",
                   {"n": n, "epsilon": epsilon})


def epsilon_for_norm(n: int, norm: float) -> float:
    """The ``epsilon`` giving ``||A||_2 == norm`` for the stiff demo."""
    return math.sqrt(4 * math.sin(n * math.pi / (2 * (n + 1))) ** 2 / norm)


_QC_M = np.array([[2.0, 0.5], [0.5, 1.0]])
_QC_A = np.array([[3.0, 1.0], [1.0, 2.0]])


def make_quadcubic(y0=(0.5, -0.3), T: float = 1.0) -> Problem:
    """Smooth nonstiff d=2 problem: SPD constant metric, quadratic plus cubic potential."""

    def V(y):
        y1, y2 = y[..., 0], y[..., 1]
        return y1**3 / 3 - 0.5 * y1 * y2**2 + y2**3 / 6

    def gradV(y):
        y1, y2 = y[..., 0], y[..., 1]
        return np.stack([y1**2 - 0.5 * y2**2, -y1 * y2 + 0.5 * y2**2], axis=-1)

    def U(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", y, _QC_A, y) + V(y)

    def gradU(y):
        y = np.asarray(y, dtype=float)
        return y @ _QC_A + gradV(y)

    system = GradientSystem.constant_metric(_QC_M, U, gradU,
                                            stiff_split=StiffSplit(_QC_A, V, gradV),
                                            gamma_floor=0.5 * np.eye(2), vectorized=True)
    return Problem(system, y0, T, "quadcubic", {})


def make_metric_demo(y0=(1.0, 0.5), T: float = 1.0) -> Problem:
    """d=2 problem with a state-dependent SPD metric."""

    def G(y):
        y1, y2 = y
        return np.array([[1.0 + y1**2, 0.3 * y1 * y2], [0.3 * y1 * y2, 1.0 + y2**2]])

    def U(y):
        y = np.asarray(y, dtype=float)
        y1, y2 = y[..., 0], y[..., 1]
        return 0.5 * y1**2 + y2**2 + 0.25 * y1**4 + 0.5 * y1 * y2**2

    def gradU(y):
        y = np.asarray(y, dtype=float)
        y1, y2 = y[..., 0], y[..., 1]
        return np.stack([y1 + y1**3 + 0.5 * y2**2, 2 * y2 + y1 * y2], axis=-1)

    system = GradientSystem(d=2, metric=G, potential=U, gradient=gradU,
                            gamma_floor=0.7 * np.eye(2), vectorized=True)
    return Problem(system, y0, T, "metric2d", {})


def make_linear(lam: float = 1.0, y0: float = 1.0, T: float = 1.0, M: float = 1.0) -> Problem:
    """Scalar test equation ``M y' = -lam y`` (``U = lam y^2 / 2``, ``V = 0``)."""

    def zero(y):
        return np.zeros(np.shape(y)[:-1])

    def U(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * lam * y[..., 0] ** 2

    def gradU(y):
        return lam * np.asarray(y, dtype=float)

    system = GradientSystem.constant_metric([[M]], U, gradU,
                                            stiff_split=StiffSplit([[lam]], zero, np.zeros_like),
                                            vectorized=True)
    return Problem(system, [y0], T, "linear", {"lam": lam, "M": M})


def make_random_quadratic(d: int = 4, seed: int = 0, scale: float = 10.0,
                          T: float = 1.0) -> Problem:
    """``U = y.A.y / 2`` with a random symmetric positive semi-definite ``A``, identity metric."""
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    A = scale * (B @ B.T) / d

    def zero(y):
        return np.zeros(np.shape(y)[:-1])

    def U(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", y, A, y)

    def gradU(y):
        return np.asarray(y, dtype=float) @ A

    system = GradientSystem.constant_metric(np.eye(d), U, gradU,
                                            stiff_split=StiffSplit(A, zero, np.zeros_like),
                                            vectorized=True)
    return Problem(system, rng.standard_normal(d), T, "quadratic",
                   {"d": d, "seed": seed, "scale": scale})


PROBLEMS: dict[str, Callable[..., Problem]] = {
    "rotcubic": make_rotcubic,
    "rotcubic-sym": make_rotcubic_sym,
    "stiffdemo": make_stiff_demo,
    "quadcubic": make_quadcubic,
    "metric2d": make_metric_demo,
    "linear": make_linear,
    "quadratic": make_random_quadratic,
}

_INT_PARAMS = {"n", "d", "seed"}


def _coerce(key: str, value: Any):
    if not isinstance(value, str):
        return value
    if key in _INT_PARAMS:
        return int(value)
    if key == "y0":
        return [float(v) for v in value.replace(";", " ").split()]
    return float(value)


def get_problem(spec: str, **params) -> Problem:
    """Look a problem up by name.

    Accepted forms: ``"rotcubic"``, ``"stiffdemo-n8"`` and
    ``"family:key=value,key=value"`` (e.g. ``"stiffdemo:n=8,epsilon=1e-3"``).
    Keyword arguments override parameters given in the string.
    """
    name, _, rest = spec.partition(":")
    kwargs: dict[str, Any] = {}
    if name.startswith("stiffdemo-n"):
        kwargs["n"] = int(name[len("stiffdemo-n"):])
        name = "stiffdemo"
    if rest:
        for item in rest.split(","):
            k, _, v = item.partition("=")
            kwargs[k.strip()] = v.strip()
    kwargs.update(params)
    if name not in PROBLEMS:
        raise KeyError(f"unknown problem {spec!r}; known: {', '.join(sorted(PROBLEMS))}")
    if "norm" in kwargs and name == "stiffdemo":
        norm = float(kwargs.pop("norm"))
        kwargs["epsilon"] = epsilon_for_norm(int(kwargs.get("n", 8)), norm)
    return PROBLEMS[name](**{k: _coerce(k, v) for k, v in kwargs.items()})


# -- validation ---------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    informational: bool = False


@dataclass
class ValidationReport:
    checks: list[CheckResult]

    @property
    def ok(self) -> bool:
        return all(c.passed or c.informational for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate(system: GradientSystem, samples: int = 100, seed: int = 0,
             scale: float = 1.0, fd_step: float = 1e-6) -> ValidationReport:
    """Spot-check the model assumptions at random states.

    Metric symmetry is informational only: no integrator here relies on it.
    """
    rng = np.random.default_rng(seed)
    sym = grad = 0.0
    floor_ok = True
    min_quad = math.inf
    for _ in range(samples):
        y = rng.uniform(-scale, scale, system.d)
        v = rng.standard_normal(system.d)
        G = np.atleast_2d(system.metric(y))
        sym = max(sym, float(np.max(np.abs(G - G.T))))
        q = float(v @ G @ v)
        min_quad = min(min_quad, q / float(v @ v))
        if system.gamma_floor is not None and q < float(v @ system.gamma_floor @ v) - 1e-12:
            floor_ok = False
        g = np.atleast_1d(system.gradient(y))
        fd = np.empty(system.d)
        for i in range(system.d):
            e = np.zeros(system.d)
            e[i] = fd_step
            fd[i] = (system.potential(y + e) - system.potential(y - e)) / (2 * fd_step)
        grad = max(grad, float(np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1.0)))
    checks = [
        CheckResult("metric_symmetry", sym <= 1e-12, sym, informational=True),
        CheckResult("metric_positive", min_quad > 0 and floor_ok, min_quad),
        CheckResult("gradient_fd", grad <= 1e-5, grad),
    ]
    if system.stiff_split is not None:
        defect = _split_defect(system, rng, samples)
        checks.append(CheckResult("split_consistency", defect <= 1e-8, defect))
    return ValidationReport(checks)
