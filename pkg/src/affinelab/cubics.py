"""Root utilities for the two cubics that control the holonomy asymptotics.

Two polynomials show up over and over:

* the spectral cubic  mu^3 - 3*mu - 2*cos(3*theta) = 0, whose three real
  roots 2*cos(theta - 2*pi*k/3) set the exponential growth rates
  exp(lambda^(1/3) * mu_i * L) of holonomy eigenvalues along a flat
  geodesic of direction theta and length L;

* the barrier cubic  p(x) = x^3 - sigma*x^2 - c, whose unique positive
  root fixes the constant supersolution of Wang's equation.

Everything here is closed form or bracketed root finding with explicit
residual checks; no iteration is trusted without one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "MuTriple",
    "SupersolutionRoot",
    "SpectralTriple",
    "mu_roots",
    "supersolution_root",
    "predicted_log_spectrum",
]

_MU_RESIDUAL_TOL = 1e-12
_ROOT_RESIDUAL_TOL = 1e-10
_TWO_THIRDS_PI = 2.0 * math.pi / 3.0


@dataclass(frozen=True)
class MuTriple:
    """Descending real roots of mu^3 - 3*mu - 2*cos(3*theta) = 0."""

    mu1: float
    mu2: float
    mu3: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mu1, self.mu2, self.mu3])

    def __iter__(self):
        return iter((self.mu1, self.mu2, self.mu3))


@dataclass(frozen=True)
class SupersolutionRoot:
    """Positive root r of x^3 - sigma*x^2 - lam^2 = 0 (sigma >= 0, lam > 0)."""

    sigma: float
    lam: float
    r: float

    def relative_residual(self) -> float:
        p = self.r**3 - self.sigma * self.r**2 - self.lam**2
        return abs(p) / (self.r**3 + self.sigma * self.r**2 + self.lam**2)


@dataclass(frozen=True)
class SpectralTriple:
    """Ordered log-eigenvalue triple (l1 >= l2 >= l3) with l1 + l2 + l3 = 0."""

    l1: float
    l2: float
    l3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.l1, self.l2, self.l3])

    def __iter__(self):
        return iter((self.l1, self.l2, self.l3))


def mu_residual(mu: float, theta: float) -> float:
    """Value of the spectral cubic at mu."""
    return mu**3 - 3.0 * mu - 2.0 * math.cos(3.0 * theta)


def mu_roots(theta: float) -> MuTriple:
    """All three (real) roots of mu^3 - 3*mu - 2*cos(3*theta), descending.

    Substituting mu = 2*cos(phi) turns the cubic into cos(3*phi) = cos(3*theta),
    so the roots are 2*cos(theta - 2*pi*k/3) for k = 0, 1, 2.  Double roots at
    theta in (pi/3)*Z are returned as (numerically) repeated values; nothing is
    perturbed.
    """
    if not math.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta!r}")
    mus = sorted((2.0 * math.cos(theta - _TWO_THIRDS_PI * k) for k in range(3)), reverse=True)
    for mu in mus:
        res = mu_residual(mu, theta)
        if abs(res) > _MU_RESIDUAL_TOL:
            raise ArithmeticError(f"spectral cubic residual {res:.3e} at mu={mu!r}, theta={theta!r}")
    return MuTriple(mus[0], mus[1], mus[2], theta)


def supersolution_root(sigma: float, lam: float) -> SupersolutionRoot:
    """Unique positive root of p(x) = x^3 - sigma*x^2 - lam^2.

    The root is bracketed in [max(sigma, lam^(2/3)), sigma + lam^(2/3) + 1]
    (p <= 0 at the left end, p > 0 at the right end), located with Brent's
    method and polished with two Newton steps.  Relative residual < 1e-10
    is enforced.
    """
    if not (math.isfinite(sigma) and math.isfinite(lam)):
        raise ValueError("sigma and lam must be finite")
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma!r}")
    if lam <= 0.0:
        raise ValueError(f"lam must be > 0, got {lam!r}")

    lam23 = lam ** (2.0 / 3.0)
    lo = max(sigma, lam23)
    hi = sigma + lam23 + 1.0

    def p(x: float) -> float:
        return x**3 - sigma * x**2 - lam**2

    if not (p(lo) <= 0.0 < p(hi)):
        raise ArithmeticError(f"bracket [{lo}, {hi}] does not straddle the root")
    r = brentq(p, lo, hi, xtol=1e-14, rtol=8.9e-16)
    for _ in range(2):
        dp = 3.0 * r**2 - 2.0 * sigma * r
        if dp != 0.0:
            r -= p(r) / dp
    root = SupersolutionRoot(sigma, lam, r)
    if root.relative_residual() > _ROOT_RESIDUAL_TOL:
        raise ArithmeticError(f"supersolution root residual {root.relative_residual():.3e}")
    return root


def predicted_log_spectrum(lam: float, theta: float, length: float) -> SpectralTriple:
    """Predicted log-eigenvalues (lambda^(1/3) * mu_i * L) of the holonomy.

    Entries sum to zero because the mu_i do; the triple scales linearly in L
    and as lambda^(1/3) in lambda.
    """
    if lam <= 0.0 or not math.isfinite(lam):
        raise ValueError(f"lam must be positive and finite, got {lam!r}")
    if length < 0.0 or not math.isfinite(length):
        raise ValueError(f"length must be >= 0 and finite, got {length!r}")
    c = np.cbrt(lam) * length
    mu = mu_roots(theta)
    return SpectralTriple(c * mu.mu1, c * mu.mu2, c * mu.mu3)
