"""Function spaces on the unit step interval.

A step of size ``h`` is parametrised by ``tau in [0, 1]``. The space ``Y_h``
is spanned by the rescaled generators ``phi_i(tau * h)``; ``X_h`` holds the
constants plus their antiderivatives. This module orthonormalises the
generators in L2[0, 1], exposes the projection onto ``Y_h`` and its kernel,
and builds the nodal (generalized Lagrange) basis of ``X_h``.
"""
from __future__ import annotations

import warnings

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
from numpy.polynomial import Legendre, Polynomial

from .errors import DegenerateBasis, SingularNodeMatrix
from .numkit import QuadratureRule, gauss_legendre

__all__ = [
    "GeneratorSet",
    "OrthonormalBasis",
    "InterpolationBasis",
    "monomial_generators",
    "fitted_generators",
    "default_quadrature",
    "orthonormalize",
    "projection_kernel",
    "project",
    "lagrange_basis",
    "lobatto_nodes",
    "uniform_nodes",
]

CONDITION_CAP = 1e12


def _evaluate(f: Callable, tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    try:
        out = np.asarray(f(tau), dtype=float)
    except (TypeError, ValueError):
        out = None
    if out is None or out.shape != tau.shape:
        out = np.broadcast_to(np.vectorize(f, otypes=[float])(tau), tau.shape)
    return np.array(out, dtype=float)


def default_quadrature(r: int) -> QuadratureRule:
    """Gauss-Legendre with ``max(4, r + 2)`` points."""
    return gauss_legendre(max(4, r + 2))


@dataclass(frozen=True, eq=False)
class GeneratorSet:
    """Rescaled generators ``phi_i(tau h)`` of ``Y_h`` and their antiderivatives.

    ``phi_antiderivatives[i](tau)`` must return ``int_0^tau phi[i](s) ds``.
    ``monomial`` marks the polynomial family ``tau**k``, which unlocks
    closed-form shortcuts downstream.
    """

    phi: tuple
    phi_antiderivatives: tuple
    monomial: bool = False

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(self.phi))
        object.__setattr__(self, "phi_antiderivatives", tuple(self.phi_antiderivatives))
        if self.r < 1:
            raise ValueError("need at least one generator")
        if len(self.phi_antiderivatives) != self.r:
            raise ValueError("one antiderivative per generator is required")
        gram = gram_matrix(self, gauss_legendre(max(8, 2 * self.r)))
        if np.linalg.cond(gram) > CONDITION_CAP:
            raise DegenerateBasis("generators are (numerically) linearly dependent")

    @property
    def r(self) -> int:
        return len(self.phi)

    def values(self, tau) -> np.ndarray:
        """Generator values, shape ``(r,) + shape(tau)``."""
        return np.stack([_evaluate(f, tau) for f in self.phi])

    def antiderivative_values(self, tau) -> np.ndarray:
        return np.stack([_evaluate(f, tau) for f in self.phi_antiderivatives])

    def x_values(self, tau) -> np.ndarray:
        """Basis ``{1, int phi_0, ..., int phi_{r-1}}`` of ``X_h``, shape ``(r+1,) + shape(tau)``."""
        tau = np.asarray(tau, dtype=float)
        return np.concatenate([np.ones((1,) + tau.shape), self.antiderivative_values(tau)])


def _power(k):
    return lambda tau: np.asarray(tau, dtype=float) ** k


def _power_integral(k):
    return lambda tau: np.asarray(tau, dtype=float) ** (k + 1) / (k + 1)


def monomial_generators(r: int) -> GeneratorSet:
    """``tau**k`` for k < r.

    For monomials ``phi_k(t) = t**k`` the rescaled functions ``(tau h)**k``
    only differ by the constant ``h**k``, so the span (and everything built
    from it) does not depend on ``h``.
    """
    if r < 1:
        raise ValueError("r must be at least 1")
    return GeneratorSet([_power(k) for k in range(r)],
                        [_power_integral(k) for k in range(r)], monomial=True)


def fitted_generators(funcs: Sequence[Callable], h: float,
                      antiderivatives: Sequence[Callable] | None = None) -> GeneratorSet:
    """Rescale user generators ``phi_i(t)`` to a step of size ``h``.

    ``antiderivatives[i](t)`` should be ``int_0^t phi_i(s) ds``; when omitted
    the integrals are computed by adaptive quadrature.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    phi = [lambda tau, f=f: _evaluate(f, np.asarray(tau) * h) for f in funcs]
    if antiderivatives is not None:
        if len(antiderivatives) != len(funcs):
            raise ValueError("one antiderivative per generator is required")
        anti = [lambda tau, F=F: (_evaluate(F, np.asarray(tau) * h) - _evaluate(F, 0.0)) / h
                for F in antiderivatives]
    else:
        def make(f):
            def scalar(tau):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", scipy.integrate.IntegrationWarning)
                    return scipy.integrate.quad(lambda s: float(f(s * h)), 0.0, tau,
                                                epsabs=1e-15, epsrel=1e-14)[0]
            return np.vectorize(scalar, otypes=[float])
        anti = [make(f) for f in funcs]
    return GeneratorSet(phi, anti)


def gram_matrix(gen: GeneratorSet, quad: QuadratureRule) -> np.ndarray:
    V = gen.values(quad.points)
    return (V * quad.weights) @ V.T


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """``psi_i = sum_k coeffs[i, k] * phi_k``, orthonormal in L2[0, 1]."""

    generators: GeneratorSet
    coeffs: np.ndarray
    quadrature: QuadratureRule

    @property
    def r(self) -> int:
        return self.coeffs.shape[0]

    @property
    def psi(self) -> list:
        return [lambda tau, i=i: self.values(tau)[i] for i in range(self.r)]

    def values(self, tau) -> np.ndarray:
        """``psi_i(tau)``, shape ``(r,) + shape(tau)``."""
        return np.tensordot(self.coeffs, self.generators.values(tau), axes=1)

    def antiderivative_values(self, tau) -> np.ndarray:
        """``int_0^tau psi_i``, shape ``(r,) + shape(tau)``."""
        return np.tensordot(self.coeffs, self.generators.antiderivative_values(tau), axes=1)


def _shifted_legendre_coeffs(r: int) -> np.ndarray:
    C = np.zeros((r, r))
    for k in range(r):
        p = Legendre.basis(k, domain=[0.0, 1.0]).convert(kind=Polynomial)
        C[k, :k + 1] = np.sqrt(2 * k + 1) * p.coef
    return C


def orthonormalize(gen: GeneratorSet, quad: QuadratureRule | None = None,
                   condition_cap: float = CONDITION_CAP) -> OrthonormalBasis:
    """Orthonormalise the generators under ``<f, g> = int_0^1 f g``.

    Modified Gram-Schmidt with one reorthogonalization pass, carried out on
    coefficient vectors against the Gram matrix. Monomial generators take
    the closed form ``sqrt(2k+1) P_k(2 tau - 1)`` instead.
    """
    quad = quad or default_quadrature(gen.r)
    r = gen.r
    gram = gram_matrix(gen, quad)
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > condition_cap:
        raise DegenerateBasis("Gram matrix is singular or too ill-conditioned")
    if gen.monomial and quad.exactness_degree >= 2 * r - 2:
        return OrthonormalBasis(gen, _shifted_legendre_coeffs(r), quad)

    Q = np.zeros((r, r))
    for k in range(r):
        v = np.zeros(r)
        v[k] = 1.0
        for _ in range(2):
            for j in range(k):
                v -= (Q[j] @ gram @ v) * Q[j]
        norm2 = v @ gram @ v
        if norm2 <= 0:
            raise DegenerateBasis(f"generator {k} lies in the span of the previous ones")
        Q[k] = v / np.sqrt(norm2)
    return OrthonormalBasis(gen, Q, quad)


def projection_kernel(basis: OrthonormalBasis, tau, sigma):
    """``P(tau, sigma) = sum_i psi_i(tau) psi_i(sigma)`` (broadcasts)."""
    tau, sigma = np.broadcast_arrays(np.asarray(tau, float), np.asarray(sigma, float))
    out = np.sum(basis.values(tau) * basis.values(sigma), axis=0)
    return out if out.ndim else float(out)


def project(basis: OrthonormalBasis, w: Callable, quad: QuadratureRule | None = None) -> Callable:
    """L2[0, 1] projection of ``w`` onto ``Y_h``, componentwise.

    ``w`` maps a scalar ``tau`` to a scalar or a vector. The inner products
    with ``psi_i`` are taken with ``quad`` (the basis' own rule by default).
    """
    quad = quad or basis.quadrature
    samples = np.array([np.asarray(w(float(s)), dtype=float) for s in quad.points])
    psi_q = basis.values(quad.points)                     # (r, n)
    coeffs = np.tensordot(psi_q * quad.weights, samples, axes=(1, 0))  # (r, ...)

    def projected(tau):
        vals = basis.values(tau)                          # (r,) + shape(tau)
        out = np.tensordot(vals, coeffs, axes=(0, 0))
        return out if np.ndim(out) else float(out)

    projected.coefficients = coeffs
    return projected


@dataclass(frozen=True, eq=False)
class InterpolationBasis:
    """Nodal basis ``l_i`` of ``X_h`` with ``l_i(c_j) = delta_ij``."""

    generators: GeneratorSet
    nodes: np.ndarray
    lambda_inv: np.ndarray

    @property
    def lagrange(self) -> list:
        return [lambda tau, i=i: self.values(tau)[i] for i in range(len(self.nodes))]

    def values(self, tau) -> np.ndarray:
        """``l_i(tau)``, shape ``(r+1,) + shape(tau)``."""
        X = self.generators.x_values(tau)
        return np.tensordot(self.lambda_inv.T, X, axes=1)


def lobatto_nodes(r: int) -> np.ndarray:
    """r+1 Gauss-Lobatto points on [0, 1] (both endpoints included)."""
    if r < 1:
        raise ValueError("r must be at least 1")
    interior = Legendre.basis(r, domain=[0.0, 1.0]).deriv().roots() if r > 1 else []
    return np.concatenate([[0.0], np.sort(np.real(interior)), [1.0]])


def uniform_nodes(r: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, r + 1)


def lagrange_basis(gen: GeneratorSet, nodes=None) -> InterpolationBasis:
    """Generalized Lagrange functions ``(l_1..l_{r+1}) = (Phi_1..Phi_{r+1}) Lambda^{-1}``."""
    r = gen.r
    nodes = lobatto_nodes(r) if nodes is None else np.asarray(nodes, dtype=float)
    if nodes.shape != (r + 1,):
        raise ValueError(f"need {r + 1} nodes for r={r}, got {nodes.size}")
    if nodes[0] != 0.0 or nodes[-1] != 1.0:
        raise ValueError("nodes must start at 0 and end at 1")
    if np.any(np.diff(nodes) <= 0):
        raise SingularNodeMatrix("nodes must be strictly increasing (duplicates give a singular system)")
    Lam = gen.x_values(nodes).T                            # Lam[j, k] = Phi_k(c_j)
    try:
        if np.linalg.cond(Lam) > CONDITION_CAP:
            raise np.linalg.LinAlgError("ill-conditioned")
        Lam_inv = np.linalg.inv(Lam)
    except np.linalg.LinAlgError as exc:
        raise SingularNodeMatrix(f"node matrix is singular: {exc}") from exc
    return InterpolationBasis(gen, nodes, Lam_inv)
