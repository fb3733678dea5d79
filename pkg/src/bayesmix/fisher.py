"""Mean Fisher information matrices and the finite-difference oracle.

The oracle differentiates the normalised divergence
``f_n(theta) = D(P^n_theta0 || P^n_theta) / n`` numerically, so it shares no
code with the closed forms it is used to check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import comb, ndtri
from scipy.stats import qmc

from ._rng import stream
from .errors import DomainError, NumericError, PreconditionError, UnsupportedError
from .families import MarkovChain, SequentialSource, SideInfo, _vector

_SINGULAR_PIVOT = 1e-300
_ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class FisherMatrix:
    matrix: np.ndarray
    n: int
    theta0: np.ndarray
    # Known a-priori upper bound on the spectral norm, when the family has one.
    spectral_bound: float | None = None

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", m)
        if m.shape[0] != m.shape[1]:
            raise NumericError(f"Fisher matrix must be square, got {m.shape}")
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-8 * max(1.0, np.max(np.abs(m))):
            raise NumericError("Fisher matrix is not symmetric")

    @property
    def d(self):
        return self.matrix.shape[0]

    def det(self):
        return det(self.matrix)

    def spectral_norm(self):
        return spectral_norm(self.matrix)

    def to_csv(self):
        return "\n".join(",".join(format(v, ".12g") for v in row) for row in self.matrix)


@dataclass(frozen=True)
class HigherOrderForm:
    """``Lambda_n``: max of the k-th derivative form of ``f_n`` on the unit k-norm sphere."""

    k: int
    value: float
    theta0: np.ndarray
    n: int
    exact: bool = True
    lower_derivatives: list = field(default_factory=list)

    def __post_init__(self):
        if self.k % 2 or self.k < 2:
            raise DomainError(f"order k must be even and >= 2, got {self.k}")
        if not self.value > 0:
            raise NumericError(f"Lambda_n must be positive, measured {self.value}")


def _simplex_interior(theta):
    theta = _vector(theta)
    theta0 = 1.0 - theta.sum()
    if np.any(theta <= 0) or theta0 <= 0:
        raise DomainError(f"theta must lie in the open simplex interior, got {theta.tolist()}")
    return theta, theta0


def categorical_fisher(theta) -> FisherMatrix:
    """``I_ij = 1/theta_i [i = j] + 1/theta_0``; the same for every horizon."""
    theta, theta0 = _simplex_interior(theta)
    m = np.diag(1.0 / theta) + 1.0 / theta0
    return FisherMatrix(m, 1, theta)


def structured_det(theta) -> float:
    """Determinant of ``diag(1/theta) + 1/theta_0``, which is ``prod_{j=0..d} 1/theta_j``."""
    theta, theta0 = _simplex_interior(theta)
    return float(1.0 / (theta0 * np.prod(theta)))


def det(matrix) -> float:
    """Determinant by LU with partial pivoting; near-zero pivots count as singular."""
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise DomainError(f"determinant needs a square matrix, got {a.shape}")
    with warnings.catch_warnings():
        # exact singularity is reported through the pivot check below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    diag = np.diag(lu)
    if np.any(np.abs(diag) < _SINGULAR_PIVOT):
        return 0.0
    swaps = np.count_nonzero(piv != np.arange(piv.size))
    return float((-1) ** swaps * np.prod(diag))


def spectral_norm(matrix) -> float:
    """Largest eigenvalue magnitude of a symmetric matrix."""
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise DomainError(f"spectral norm needs a square matrix, got {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(a), initial=0.0)):
        raise DomainError("spectral norm is defined here for symmetric matrices only")
    return float(np.max(np.abs(np.linalg.eigvalsh(a))))


def markov_stationary(transition, tol=1e-12, max_iter=1_000_000) -> np.ndarray:
    """Stationary distribution by power iteration until ``||pi P - pi||_1 <= tol``."""
    P = MarkovChain(transition).transition
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() <= tol:
            return nxt
        pi = nxt
    raise NumericError(f"power iteration did not converge in {max_iter} steps")


def markov_fisher_det(transition) -> float:
    """Asymptotic ``det I_n = prod_j pi(j)^{N-1} / prod_k P[j, k]``."""
    P = MarkovChain(transition).transition
    pi = markov_stationary(P)
    N = P.shape[0]
    return float(np.exp((N - 1) * np.sum(np.log(pi)) - np.sum(np.log(P))))


def markov_fisher(transition) -> FisherMatrix:
    """Asymptotic information matrix: ``pi(j)`` times the categorical block of row ``j``."""
    chain = MarkovChain(transition)
    pi = markov_stationary(chain.transition)
    # The implicit coordinate is the last column; the categorical form is symmetric in it.
    blocks = [pi[j] * categorical_fisher(chain.transition[j, :-1]).matrix for j in range(chain.n_states)]
    return FisherMatrix(scipy.linalg.block_diag(*blocks), 0, chain.theta)


def linreg_fisher(side: SideInfo, n) -> FisherMatrix:
    """``I_ij = (beta / n) sum_t Phi_i(x_t) Phi_j(x_t)``, independent of theta.

    ``spectral_bound`` is ``d * beta``, which holds because the basis is
    bounded by one.
    """
    if n < 1:
        raise DomainError("horizon n must be at least 1")
    F = side.features(n)
    m = side.beta / n * (F.T @ F)
    return FisherMatrix(m, n, np.zeros(side.d), spectral_bound=side.d * side.beta)


def _all_sequences(k, n):
    idx = np.arange(k**n)
    return (idx[:, None] // k ** np.arange(n - 1, -1, -1)[None, :]) % k


def normalized_divergence(source: SequentialSource, theta, n, method="exact", samples=10_000, seed=0):
    """``f_n(theta) = D(P^n_theta0 || P^n_theta) / n`` with ``theta0 = source.theta``."""
    other = source.with_theta(theta)
    if method == "exact":
        try:
            return source.divergence(other, n) / n
        except UnsupportedError:
            pass
        k = source.alphabet_size
        if k is None or k**n > _ENUMERATION_CAP:
            raise UnsupportedError("exact f_n needs a closed form or an enumerable alphabet")
        seqs = _all_sequences(k, n)
        lp0 = source.log_density(seqs)
        lp = other.log_density(seqs)
        p0 = np.exp(lp0)
        mask = p0 > 0
        return math.fsum(p0[mask] * (lp0[mask] - lp[mask])) / n
    if method == "mc":
        seqs = source.sample(n, stream(seed, 0), size=samples)
        return float(np.mean(source.log_density(seqs) - other.log_density(seqs))) / n
    raise DomainError(f"unknown method {method!r}")


def finite_diff_fisher(source: SequentialSource, n, h=1e-3, method="exact", samples=10_000, seed=0):
    """Central-difference Hessian of ``f_n`` at ``source.theta``.

    The step is ``h`` times ``source.parameter_scale()``; Monte Carlo mode uses
    common random numbers so the stencil differences stay smooth.
    """
    if h <= 0:
        raise DomainError("step h must be positive")
    theta0 = source.theta
    d = theta0.size
    step = h * source.parameter_scale()

    def f(theta):
        return normalized_divergence(source, theta, n, method, samples, seed)

    f0 = f(theta0)
    hess = np.zeros((d, d))
    e = np.eye(d) * step
    for i in range(d):
        hess[i, i] = (f(theta0 + e[i]) - 2 * f0 + f(theta0 - e[i])) / step**2
        for j in range(i + 1, d):
            half_i, half_j = e[i] / 2, e[j] / 2
            v = (f(theta0 + half_i + half_j) - f(theta0 + half_i - half_j)
                 - f(theta0 - half_i + half_j) + f(theta0 - half_i - half_j)) / step**2
            hess[i, j] = hess[j, i] = v
    return FisherMatrix(hess, n, theta0)


def _central_derivative(g, order, h):
    """``order``-th central difference of a scalar function ``g`` at 0."""
    total = 0.0
    for i in range(order + 1):
        total += (-1) ** i * comb(order, i, exact=True) * g((order / 2 - i) * h)
    return total / h**order


def lambda_n(source: SequentialSource, k, n, h=None, method="exact", directions=10_000,
             tol=1e-3) -> HigherOrderForm:
    """Measure ``Lambda_n`` for a family whose derivatives of order < k vanish at theta0.

    In one dimension this is the k-th finite-difference derivative of ``f_n``.
    For ``d > 1`` the maximum over the unit k-norm sphere is searched on a
    deterministic quasi-random set of directions with local refinement, which
    yields a lower bound (``exact=False``).
    """
    if int(k) != k or k % 2 or k < 2:
        raise DomainError(f"order k must be an even integer >= 2, got {k}")
    k = int(k)
    if h is None:
        h = 1e-3 if k == 2 else 5e-2
    theta0 = source.theta
    d = theta0.size
    scale = source.parameter_scale()
    h = h * scale
    h_check = min(h, 1e-2 * scale)

    def along(x):
        x = np.asarray(x, dtype=float)
        return lambda s: normalized_divergence(source, theta0 + s * x, n, method)

    probe = [np.eye(d)[i] for i in range(d)]
    lower = []
    for x in probe:
        g = along(x)
        lower.extend(_central_derivative(g, j, h_check) for j in range(1, k))
    if lower and max(abs(v) for v in lower) > tol:
        raise PreconditionError(f"derivatives of order < {k} do not vanish at theta0", lower)

    if d == 1:
        value = _central_derivative(along([1.0]), k, h)
        return HigherOrderForm(k, float(value), theta0, n, True, lower)

    def form(x):
        x = x / np.sum(np.abs(x) ** k) ** (1.0 / k)
        return _central_derivative(along(x), k, h), x

    sobol = qmc.Sobol(d, scramble=True, seed=0)
    u = np.clip(sobol.random_base2(max(1, math.ceil(math.log2(directions)))), 1e-12, 1 - 1e-12)
    best, best_x = -math.inf, None
    for z in ndtri(u):
        v, x = form(z)
        if v > best:
            best, best_x = v, x
    rng = stream(0, 0)
    radius = 0.1
    for _ in range(200):
        v, x = form(best_x + radius * rng.standard_normal(d))
        if v > best:
            best, best_x = v, x
        else:
            radius *= 0.98
    return HigherOrderForm(k, float(best), theta0, n, False, lower)


def norm_sq(x, A=None) -> float:
    """``||x||_A^2 = x^T A x`` (plain squared 2-norm when ``A`` is None)."""
    x = np.asarray(x, dtype=float)
    return float(x @ x) if A is None else float(x @ np.asarray(A, dtype=float) @ x)
