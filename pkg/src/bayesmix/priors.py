"""Prior densities over parameter space (nats, w.r.t. Lebesgue measure).

Log-densities return ``-inf`` off the (open) support, which is how boundary
points are flagged.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np
from scipy import integrate

from .errors import DomainError


class PriorDensity(ABC):
    kind = "prior"
    d: int
    support = ""
    # Whether the density is unbounded at the ends of a 1-d support; quadrature
    # mixtures then switch to arcsine nodes.
    endpoint_singular = False

    @abstractmethod
    def log_density(self, theta) -> float: ...

    def density(self, theta) -> float:
        return math.exp(self.log_density(theta))

    def interval(self):
        """Bounded 1-d support used by quadrature mixtures."""
        raise DomainError(f"{self.kind} prior has no bounded 1-d support")

    def spec(self) -> dict:
        return {"kind": self.kind}


class DirichletPrior(PriorDensity):
    """Symmetric Dirichlet(alpha) on the open simplex, in coordinates ``theta_1..theta_d``."""

    kind = "dirichlet"
    support = "open simplex {theta_k > 0, sum theta_k < 1}"

    def __init__(self, d, alpha=0.5):
        if int(d) < 1:
            raise DomainError("dimension must be at least 1")
        if alpha <= 0:
            raise DomainError("Dirichlet concentration must be positive")
        self.d = int(d)
        self.alpha = float(alpha)
        k = self.d + 1
        self._log_norm = math.lgamma(k * self.alpha) - k * math.lgamma(self.alpha)
        self.endpoint_singular = self.alpha < 1

    def log_density(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.d,):
            raise DomainError(f"expected a {self.d}-vector, got shape {theta.shape}")
        full = np.concatenate([[1.0 - theta.sum()], theta])
        if np.any(full <= 0):
            return -math.inf
        return self._log_norm + (self.alpha - 1) * float(np.sum(np.log(full)))

    def interval(self):
        if self.d != 1:
            return super().interval()
        return 0.0, 1.0

    def spec(self):
        return {"kind": self.kind, "d": self.d, "alpha": self.alpha}


class JeffreysCategorical(DirichletPrior):
    """Jeffreys prior for i.i.d. categorical sources.

    ``w(theta) = Gamma((d+1)/2) pi^{-(d+1)/2} sqrt(prod_k 1/theta_k)``, i.e. the
    symmetric Dirichlet(1/2).
    """

    kind = "jeffreys-categorical"

    def __init__(self, d):
        super().__init__(d, 0.5)
        k = self.d + 1
        self._log_norm = math.lgamma(k / 2) - (k / 2) * math.log(math.pi)

    def spec(self):
        return {"kind": self.kind, "d": self.d}


def jeffreys_categorical(d) -> JeffreysCategorical:
    return JeffreysCategorical(d)


class ProductDirichletMarkov(PriorDensity):
    """Independent Dirichlet(alpha) prior on every row of an N-state transition matrix."""

    kind = "product-dirichlet-markov"
    support = "rows in the open simplex"

    def __init__(self, n_states, alpha=0.5):
        if n_states < 2:
            raise DomainError("need at least two states")
        self.n_states = int(n_states)
        self.alpha = float(alpha)
        self.d = self.n_states * (self.n_states - 1)
        self._row = DirichletPrior(self.n_states - 1, alpha)

    def log_density(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.d,):
            raise DomainError(f"expected a {self.d}-vector, got shape {theta.shape}")
        rows = theta.reshape(self.n_states, self.n_states - 1)
        return float(sum(self._row.log_density(r) for r in rows))

    def spec(self):
        return {"kind": self.kind, "n_states": self.n_states, "alpha": self.alpha}


def _stationary_two_state(a, b):
    # a = P(0 -> 0), b = P(1 -> 0)
    p01, p10 = 1.0 - a, b
    s = p01 + p10
    return p10 / s, p01 / s


class MarkovJeffreys2(PriorDensity):
    """Jeffreys density ``w propto sqrt(det I)`` for two-state chains.

    Uses the asymptotic determinant ``pi(0) pi(1) / prod theta``; the normaliser
    is computed numerically after the substitution ``theta = sin^2(phi)``,
    which removes the endpoint singularities.
    """

    kind = "markov-jeffreys"
    support = "open unit square of (P(0->0), P(1->0))"
    d = 2

    def __init__(self):
        def integrand(p2, p1):
            a, b = math.sin(p1) ** 2, math.sin(p2) ** 2
            s0, s1 = _stationary_two_state(a, b)
            return 4.0 * math.sqrt(s0 * s1)

        z, _ = integrate.dblquad(integrand, 0, math.pi / 2, 0, math.pi / 2, epsabs=1e-13, epsrel=1e-12)
        self.log_normaliser = math.log(z)

    def log_density(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (2,):
            raise DomainError("expected the two free parameters (P(0->0), P(1->0))")
        a, b = theta
        if not (0 < a < 1 and 0 < b < 1):
            return -math.inf
        s0, s1 = _stationary_two_state(a, b)
        log_det = math.log(s0) + math.log(s1) - math.log(a * (1 - a) * b * (1 - b))
        return 0.5 * log_det - self.log_normaliser


class GaussianPrior(PriorDensity):
    """Non-degenerate normal prior ``N(mean, cov)``."""

    kind = "gaussian"
    support = "R^d"

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DomainError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise DomainError("covariance must be symmetric")
        try:
            self._chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DomainError("covariance must be positive definite") from exc
        self.mean = mean
        self.cov = cov
        self.d = mean.size
        self._log_det = 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def log_density(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        z = np.linalg.solve(self._chol, theta - self.mean)
        return float(-0.5 * (self.d * math.log(2 * math.pi) + self._log_det + z @ z))

    def spec(self):
        return {"kind": self.kind, "mean": self.mean.tolist(), "cov": self.cov.tolist()}


class UniformPrior(PriorDensity):
    """Uniform density on the box ``[low, high]^d`` (closed)."""

    kind = "uniform"

    def __init__(self, low=0.0, high=1.0, d=1):
        if not high > low:
            raise DomainError("uniform prior needs high > low")
        self.low, self.high, self.d = float(low), float(high), int(d)
        self.support = f"[{self.low}, {self.high}]^{self.d}"
        self._log_value = -self.d * math.log(self.high - self.low)

    def log_density(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if np.any(theta < self.low) or np.any(theta > self.high):
            return -math.inf
        return self._log_value

    def interval(self):
        if self.d != 1:
            return super().interval()
        return self.low, self.high

    def spec(self):
        return {"kind": self.kind, "low": self.low, "high": self.high, "d": self.d}


class DiscreteMass(PriorDensity):
    """Probability mass ``w(i)`` over the members of a countable family."""

    kind = "discrete-mass"
    d = 0

    def __init__(self, mass):
        mass = np.asarray(mass, dtype=float)
        if mass.ndim != 1 or mass.size == 0 or np.any(mass <= 0) or abs(mass.sum() - 1) > 1e-12:
            raise DomainError("mass must be a positive probability vector")
        self.mass = mass

    def log_density(self, index):
        return math.log(self.mass[int(index)])

    def spec(self):
        return {"kind": self.kind, "mass": self.mass.tolist()}
