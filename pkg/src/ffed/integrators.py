"""Functionally fitted energy-diminishing integrators.

Each step looks for ``u(tau) = sum_m y_{c_m} l_m(tau)`` in ``X_h`` with
``u(0) = y0``. Its derivative is tied to the L2 projection of the gradient
onto ``Y_h``. The stage values ``y_{c_j}`` (j = 2..r+1, the last one being
the step result) are found by iteration. Three variants:

* ``ffed_step_constant``: constant metric ``M``;
* ``ffed_step_general``: state-dependent metric ``G(y)``;
* ``effed_step``: split potential ``U = y.A.y/2 + V``. The linear part is
  integrated exactly with matrix exponentials, so stiff modes are fully
  damped.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Chebyshev, Polynomial

from .basis import (
    GeneratorSet,
    default_quadrature,
    lagrange_basis,
    lobatto_nodes,
    monomial_generators,
    orthonormalize,
)
from .errors import SingularMetric, StepFailure
from .numkit import (
    FixedPointConfig,
    QuadratureRule,
    fixed_point_solve,
    gauss_legendre,
    phi_functions,
    solve,
)
from .systems import GradientSystem, Problem

__all__ = [
    "MethodConfig",
    "StepResult",
    "Trajectory",
    "Method",
    "ffed_step_constant",
    "ffed_step_general",
    "effed_step",
    "make_stepper",
    "integrate",
    "STEPPERS",
]


@dataclass(frozen=True, eq=False)
class MethodConfig:
    """h-independent parameters of an FFED/EFFED method (order ``2r``).

    ``generators`` maps a step size to the rescaled generator set; ``None``
    means monomials. ``exp_degree`` is the polynomial degree used to fit
    non-monomial basis functions inside the exponentially weighted integrals
    of EFFED (``None`` picks it adaptively).
    """

    r: int = 2
    nodes: tuple | None = None
    quad: QuadratureRule | None = None
    fp: FixedPointConfig = field(default_factory=FixedPointConfig)
    generators: Callable[[float], GeneratorSet] | None = None
    exp_degree: int | None = None
    warm_start: bool = False

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be at least 1")
        nodes = lobatto_nodes(self.r) if self.nodes is None else self.nodes
        nodes = tuple(float(c) for c in nodes)
        if len(nodes) != self.r + 1:
            raise ValueError(f"need r+1={self.r + 1} nodes, got {len(nodes)}")
        if nodes[0] != 0.0 or nodes[-1] != 1.0 or any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise ValueError("nodes must satisfy 0 = c_1 < ... < c_{r+1} = 1")
        object.__setattr__(self, "nodes", nodes)
        if self.quad is None:
            object.__setattr__(self, "quad", default_quadrature(self.r))
        elif self.quad.exactness_degree < 2 * self.r + 2:
            warnings.warn(f"quadrature exact to degree {self.quad.exactness_degree} "
                          f"< 2r+2 = {2 * self.r + 2}; expect reduced order", stacklevel=3)

    @property
    def monomial(self) -> bool:
        return self.generators is None

    def generator_set(self, h: float) -> GeneratorSet:
        return monomial_generators(self.r) if self.generators is None else self.generators(h)


@dataclass
class StepResult:
    y1: np.ndarray
    nodes: np.ndarray
    stages: np.ndarray          # (r+1, d); stages[0] is the step's y0
    iterations: int
    residual: float
    energy_before: float
    energy_after: float


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    energies: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    method: str = ""
    h: float = math.nan

    def __len__(self):
        return len(self.times)

    @property
    def energy_increments(self) -> np.ndarray:
        return np.diff(self.energies)


# -- state-independent step data ----------------------------------------------

@dataclass(frozen=True, eq=False)
class _Tableau:
    nodes: np.ndarray           # (r+1,)
    weights: np.ndarray         # quadrature weights (n,)
    interp_q: np.ndarray        # l_m(sigma_q), (r+1, n)
    wpsi: np.ndarray            # w_q psi_i(sigma_q), (r, n)
    node_integrals: np.ndarray  # int_0^{c_j} psi_i, (r+1, r)
    interp_tau: np.ndarray      # l_m(c_j sigma_q), (r+1, r+1, n)
    psi_tau: np.ndarray         # psi_i(c_j sigma_q), (r+1, r, n)
    basis_coeffs: np.ndarray    # psi in terms of the generators, (r, r)


@functools.lru_cache(maxsize=256)
def _tableau(cfg: MethodConfig, h_key) -> _Tableau:
    gen = cfg.generator_set(1.0 if h_key is None else h_key)
    quad = cfg.quad
    basis = orthonormalize(gen, quad)
    interp = lagrange_basis(gen, np.array(cfg.nodes))
    c = interp.nodes
    psi_q = basis.values(quad.points)
    # int_0^1 psi_i(xi c_j) d xi, by the same rule, scaled by c_j
    node_integrals = np.array([cj * (basis.values(cj * quad.points) @ quad.weights) for cj in c])
    tau = c[:, None] * quad.points[None, :]
    interp_tau = np.stack([interp.values(t) for t in tau])
    psi_tau = np.stack([basis.values(t) for t in tau])
    return _Tableau(c, quad.weights, interp.values(quad.points), psi_q * quad.weights,
                    node_integrals, interp_tau, psi_tau, basis.coeffs)


def tableau(cfg: MethodConfig, h: float) -> _Tableau:
    return _tableau(cfg, None if cfg.monomial else float(h))


def _finish(system, tab, y0, stages_int, its, res) -> StepResult:
    Y = np.vstack([y0, stages_int])
    return StepResult(Y[-1].copy(), tab.nodes, Y, its, res,
                      system.energy(y0), system.energy(Y[-1]))


def _initial_stages(y0, r, guess):
    if guess is not None:
        return np.array(guess, dtype=float)
    return np.tile(y0, (r, 1))


# -- steppers -------------------------------------------------------------------

class Stepper:
    """A one-step map ``(h, y0) -> StepResult`` with per-``h`` caches."""

    name = ""

    def __init__(self, system: GradientSystem, config):
        self.system = system
        self.config = config

    def step(self, h: float, y0, guess=None) -> StepResult:
        raise NotImplementedError


class FFEDConstant(Stepper):
    name = "ffed"

    def __init__(self, system, config: MethodConfig, M=None):
        super().__init__(system, config)
        M = system.metric_matrix if M is None else np.atleast_2d(np.asarray(M, dtype=float))
        if M is None:
            raise ValueError("system has no constant metric; use ffed_step_general")
        self.M = M
        self.Minv = solve(M, np.eye(M.shape[0]))

    def step(self, h, y0, guess=None):
        cfg, sys = self.config, self.system
        tab = tableau(cfg, h)
        y0 = np.asarray(y0, dtype=float)
        # y_{c_j} = y0 - h M^{-1} sum_i (int_0^{c_j} psi_i) b_i
        coef = h * tab.node_integrals[1:]                 # (r, r)
        MinvT = self.Minv.T

        def stage_map(Yint):
            Y = np.vstack([y0, Yint])
            b = tab.wpsi @ sys.grad_rows(tab.interp_q.T @ Y)
            return y0 - (coef @ b) @ MinvT

        Yint, its, res = fixed_point_solve(stage_map, _initial_stages(y0, cfg.r, guess), cfg.fp)
        return _finish(sys, tab, y0, Yint, its, res)


class FFEDGeneral(Stepper):
    name = "ffed-general"

    def step(self, h, y0, guess=None):
        cfg, sys = self.config, self.system
        tab = tableau(cfg, h)
        y0 = np.asarray(y0, dtype=float)
        c, w = tab.nodes, tab.weights

        def stage_map(Yint):
            Y = np.vstack([y0, Yint])
            b = tab.wpsi @ sys.grad_rows(tab.interp_q.T @ Y)       # (r, d)
            out = np.empty_like(Yint)
            for j in range(1, len(c)):
                u_tau = tab.interp_tau[j].T @ Y                    # (n, d)
                p_tau = tab.psi_tau[j].T @ b                       # projected gradient
                acc = np.zeros_like(y0)
                for q in range(len(w)):
                    G = np.atleast_2d(sys.metric(u_tau[q]))
                    try:
                        acc += w[q] * np.linalg.solve(G, p_tau[q])
                    except np.linalg.LinAlgError as exc:
                        raise SingularMetric(f"G singular at tau={c[j]:.3g}*node {q}") from exc
                out[j - 1] = y0 - h * c[j] * acc
            return out

        Yint, its, res = fixed_point_solve(stage_map, _initial_stages(y0, cfg.r, guess), cfg.fp)
        return _finish(sys, tab, y0, Yint, its, res)


def _power_coeffs(f, degree=None, tol=1e-13) -> np.ndarray:
    """Power-series coefficients in ``xi`` of a Chebyshev interpolant of ``f`` on [0, 1].

    With ``degree=None`` the degree grows until the fit is within ``tol``
    (relative) at a set of check points.
    """
    check = np.linspace(0.0, 1.0, 41)
    fc = np.asarray(f(check), dtype=float)
    scale = max(1.0, float(np.max(np.abs(fc))))
    for deg in ([degree] if degree else range(4, 31, 2)):
        cheb = Chebyshev.interpolate(f, deg, domain=[0.0, 1.0])
        if degree or np.max(np.abs(cheb(check) - fc)) <= tol * scale:
            break
    else:
        warnings.warn("basis function not resolved by a degree-30 polynomial; "
                      "EFFED weights may be inaccurate", stacklevel=4)
    return cheb.convert(kind=Polynomial, domain=[-1.0, 1.0], window=[-1.0, 1.0]).coef


class EFFED(Stepper):
    name = "effed"

    def __init__(self, system, config: MethodConfig, M=None):
        super().__init__(system, config)
        if system.stiff_split is None:
            raise ValueError("EFFED needs a system with a stiff split U = y.A.y/2 + V")
        M = system.metric_matrix if M is None else np.atleast_2d(np.asarray(M, dtype=float))
        if M is None:
            raise ValueError("EFFED needs a constant metric")
        self.M = M
        self.Minv = solve(M, np.eye(M.shape[0]))
        self.K = self.Minv @ system.stiff_split.A
        self._cache: dict = {}

    def _exponentials(self, h):
        key = float(h)
        if key not in self._cache:
            self._cache[key] = self._build(h)
        return self._cache[key]

    def _build(self, h):
        cfg = self.config
        tab = tableau(cfg, h)
        d, r = self.K.shape[0], cfg.r
        E0 = np.empty((r + 1, d, d))
        W = np.zeros((r + 1, r, d, d))
        for j, cj in enumerate(tab.nodes):
            Z = -cj * h * self.K
            if cfg.monomial:
                # int_0^1 e^{(1-xi)Z} xi^k dxi = k! phi_{k+1}(Z)
                phis = phi_functions(Z, r)
                E0[j] = phis[0]
                for i in range(r):
                    Eij = sum(tab.basis_coeffs[i, k] * cj**k * math.factorial(k) * phis[k + 1]
                              for k in range(r))
                    W[j, i] = cj * h * Eij @ self.Minv
            else:
                # fit psi_i(xi c_j) by a polynomial in xi, then use the phi closed form
                gen = cfg.generator_set(h)
                coeffs = [_power_coeffs(lambda xi, i=i: tab.basis_coeffs[i] @ gen.values(cj * xi),
                                        cfg.exp_degree) for i in range(r)]
                m = max(len(a) for a in coeffs)
                phis = phi_functions(Z, m)
                E0[j] = phis[0]
                for i, a in enumerate(coeffs):
                    Eij = sum(a[k] * math.factorial(k) * phis[k + 1] for k in range(len(a)))
                    W[j, i] = cj * h * Eij @ self.Minv
        return E0, W

    def step(self, h, y0, guess=None):
        cfg, sys = self.config, self.system
        tab = tableau(cfg, h)
        y0 = np.asarray(y0, dtype=float)
        E0, W = self._exponentials(h)
        lin = E0[1:] @ y0                                  # (r, d)
        W = W[1:]

        def stage_map(Yint):
            Y = np.vstack([y0, Yint])
            b = tab.wpsi @ sys.gradV_rows(tab.interp_q.T @ Y)     # (r, d)
            return lin - np.einsum("jiab,ib->ja", W, b)

        Yint, its, res = fixed_point_solve(stage_map, _initial_stages(y0, cfg.r, guess), cfg.fp)
        return _finish(sys, tab, y0, Yint, its, res)


def ffed_step_constant(M, system: GradientSystem, cfg: MethodConfig, h: float, y0) -> StepResult:
    return FFEDConstant(system, cfg, M).step(h, y0)


def ffed_step_general(system: GradientSystem, cfg: MethodConfig, h: float, y0) -> StepResult:
    return FFEDGeneral(system, cfg).step(h, y0)


def effed_step(system: GradientSystem, M, cfg: MethodConfig, h: float, y0) -> StepResult:
    return EFFED(system, cfg, M).step(h, y0)


# -- method registry and trajectory driver ------------------------------------

def _ffed_auto(system, config):
    if system.metric_matrix is not None:
        return FFEDConstant(system, config)
    return FFEDGeneral(system, config)


STEPPERS: dict[str, Callable[[GradientSystem, object], Stepper]] = {
    "ffed": _ffed_auto,
    "ffed-general": FFEDGeneral,
    "effed": EFFED,
}


@dataclass(frozen=True, eq=False)
class Method:
    """A method name plus its configuration (MethodConfig or BaselineConfig)."""

    name: str
    config: object = None

    @classmethod
    def from_options(cls, name: str, r: int = 2, quad_points: int | None = None,
                     fp_tol: float = 1e-14, fp_maxiter: int = 10, solver: str = "fixed_point",
                     nodes: Sequence[float] | None = None,
                     policy: str = "warn_and_continue") -> "Method":
        """Build a method from the flat option set used by the CLI."""
        from .baselines import BaselineConfig

        fp = FixedPointConfig(tolerance=fp_tol, max_iterations=fp_maxiter,
                              solver=solver, on_nonconvergence=policy)
        if name in ("ffed", "ffed-general", "effed"):
            quad = gauss_legendre(quad_points) if quad_points else None
            return cls(name, MethodConfig(r=r, nodes=nodes, quad=quad, fp=fp))
        if name in STEPPERS or name in ("ieuler", "avf", "avfc", "eei"):
            quad = gauss_legendre(quad_points) if quad_points else None
            return cls(name, BaselineConfig(fp=fp, quad=quad, s=r))
        raise KeyError(f"unknown method {name!r}")

    def label(self) -> str:
        r = getattr(self.config, "r", None) or getattr(self.config, "s", None)
        return f"{self.name}-r{r}" if self.name in ("ffed", "ffed-general", "effed", "avfc") else self.name


def make_stepper(method: Method | str, system: GradientSystem) -> Stepper:
    from . import baselines  # noqa: F401  (registers the baseline steppers)

    if isinstance(method, str):
        method = Method.from_options(method)
    if method.name not in STEPPERS:
        raise KeyError(f"unknown method {method.name!r}; known: {', '.join(sorted(STEPPERS))}")
    config = method.config
    if config is None:
        config = Method.from_options(method.name).config
    return STEPPERS[method.name](system, config)


def time_grid(T: float, h: float) -> np.ndarray:
    """``0, h, 2h, ...`` ending exactly at ``T`` (last step shortened if needed)."""
    if not h > 0:
        raise ValueError("h must be positive")
    ratio = T / h
    n = round(ratio)
    if n >= 1 and abs(ratio - n) <= 1e-9 * max(ratio, 1.0):
        times = np.arange(n + 1) * h
    else:
        n = math.floor(ratio)
        times = np.append(np.arange(n + 1) * h, T)
    times[-1] = T
    return times


def integrate(problem: Problem, method: Method | str, h: float, T: float | None = None,
              stepper: Stepper | None = None) -> Trajectory:
    """Step ``problem`` from ``y0`` to the horizon with a fixed step ``h``."""
    T = problem.T if T is None else T
    if isinstance(method, str):
        method = Method.from_options(method)
    stepper = stepper or make_stepper(method, problem.system)
    warm = getattr(method.config, "warm_start", False)
    times = time_grid(T, h)
    n = len(times) - 1
    states = np.empty((n + 1, problem.system.d))
    energies = np.empty(n + 1)
    iterations = np.zeros(n + 1, dtype=int)
    residuals = np.zeros(n + 1)
    states[0] = problem.y0
    energies[0] = problem.system.energy(problem.y0)
    guess = None
    for k in range(n):
        dt = times[k + 1] - times[k]
        try:
            res = stepper.step(dt, states[k], guess)
        except Exception as exc:
            raise StepFailure(k, times[k], exc) from exc
        states[k + 1] = res.y1
        energies[k + 1] = res.energy_after
        iterations[k + 1] = res.iterations
        residuals[k + 1] = res.residual
        if warm and res.stages.shape[0] > 1:
            guess = res.stages[1:] - res.stages[0] + res.y1
    return Trajectory(times, states, energies, iterations, residuals, method.label(), h)
