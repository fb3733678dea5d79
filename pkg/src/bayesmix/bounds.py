"""Asymptotic redundancy bounds, gap reports and the normal concentration check.

The bounds hold up to o(1) terms as n grows, so nothing here asserts
``D_n <= bound`` at a finite horizon; ``gap_report`` measures trends instead.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ._rng import stream
from .errors import ConfigurationError, DomainError
from .fisher import det as lu_det
from .fisher import spectral_norm

CAVEAT = "asymptotic bound: holds up to o(1) as n grows; not a finite-n guarantee"
SLOPE_POINTS = 8
TAIL_DECADES = 3.0
_CHUNK = 10_000


@dataclass(frozen=True)
class BoundReport:
    n: float
    prior_term: float
    dimension_term: float
    information_term: float
    variant: str
    total: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _report(n, prior, dimension, information, variant):
    total = math.fsum([prior, dimension, information])
    return BoundReport(n, prior, dimension, information, variant, total)


def _prior_term(ln_w0):
    if not math.isfinite(ln_w0):
        raise DomainError("prior density must be positive and finite at theta0")
    return -ln_w0


def _check_n(n, d):
    if n < 1:
        raise DomainError("horizon n must be at least 1")
    if d < 1:
        raise DomainError("dimension d must be at least 1")


def dimension_term(d, n):
    """``(d/2) ln(n / 2 pi)``."""
    return 0.5 * d * math.log(n / (2 * math.pi))


def bound_thm1(ln_w0, d, n, det_In) -> BoundReport:
    """``ln 1/w(theta0) + (d/2) ln(n/2pi) + (1/2) ln det I_n``."""
    _check_n(n, d)
    if not det_In > 0:
        raise DomainError("det I_n must be positive; use the epsilon-regularised or higher-order bound")
    return _report(n, _prior_term(ln_w0), dimension_term(d, n), 0.5 * math.log(det_In), "half-log-det-In")


def bound_thm3(ln_w0, d, n, spec_In=None, epsilon=0.1, matrix=None) -> BoundReport:
    """Regularised bound with information term ``(d/2) ln(||I_n|| + eps)``.

    When the full matrix is supplied the sharper ``(1/2) ln det(I_n + eps I)``
    is used instead.
    """
    _check_n(n, d)
    if not epsilon > 0:
        raise DomainError("epsilon must be strictly positive")
    prior = _prior_term(ln_w0)
    if matrix is not None:
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        if A.shape != (d, d):
            raise DomainError(f"matrix shape {A.shape} does not match d={d}")
        value = lu_det(A + epsilon * np.eye(d))
        if not value > 0:
            raise DomainError("I_n + eps I is not positive definite")
        return _report(n, prior, dimension_term(d, n), 0.5 * math.log(value), "half-log-det-In-plus-eps")
    if spec_In is None or spec_In < 0:
        raise DomainError("spectral norm must be supplied and nonnegative")
    return _report(n, prior, dimension_term(d, n), 0.5 * d * math.log(spec_In + epsilon), "spec-plus-eps")


def gamma_small(x):
    """Gamma function on (0, 2], the only range the bounds need."""
    if not 0 < x <= 2:
        raise DomainError(f"gamma argument {x} outside (0, 2]")
    return math.gamma(x)


def log_eta(d, k, n, Lambda_n):
    """``ln eta_n`` where ``eta_n = int exp(-n Lambda_n ||x||_k^k / k!) dx``."""
    return (d * math.log(2 * gamma_small(1.0 / k) / k)
            + (d / k) * (math.lgamma(k + 1) - math.log(n) - math.log(Lambda_n)))


def bound_higher_order(ln_w0, d, k, n, Lambda_n) -> BoundReport:
    """``ln 1/w + (d/k) ln n + (d/k) ln Lambda_n + (d/k) ln(1/k!) + d ln(k / (2 Gamma(1/k)))``.

    Equal to ``ln 1/w - ln eta_n``; with ``k = 2`` it coincides with the
    quadratic bound, item by item.
    """
    _check_n(n, d)
    if int(k) != k or k % 2 or k < 2:
        raise DomainError(f"k must be an even integer >= 2, got {k}")
    if not Lambda_n > 0:
        raise DomainError("Lambda_n must be positive")
    k = int(k)
    dim = ((d / k) * math.log(n) - (d / k) * math.lgamma(k + 1)
           + d * math.log(k / (2 * gamma_small(1.0 / k))))
    return _report(n, _prior_term(ln_w0), dim, (d / k) * math.log(Lambda_n), f"higher-order-k{k}")


def bound_countable(w_k, n=1) -> BoundReport:
    """``ln 1/w(k)``, the same at every horizon."""
    if not 0 < w_k <= 1:
        raise DomainError("prior mass must lie in (0, 1]")
    return _report(n, -math.log(w_k), 0.0, 0.0, "countable")


@dataclass(frozen=True)
class GapReport:
    slope: float
    gaps: list
    monotone_tail: bool

    def to_json(self) -> str:
        return json.dumps({"slope": self.slope, "gaps": list(self.gaps), "monotone_tail": self.monotone_tail})


def ols_slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def _value(e):
    return (e.n, e.value) if hasattr(e, "value") else (e[0], e[1])


def gap_report(empirical, bounds, tol=1e-12) -> GapReport:
    """Gap ``D_n - (bound - prior_term)`` per horizon, to be read against the prior term.

    ``slope`` is the least-squares slope of ``D_n`` against ``ln n`` over the
    largest ``SLOPE_POINTS`` horizons. ``monotone_tail`` says whether the gaps
    are nonincreasing (up to ``tol``) over the horizons within three decades of
    the largest one.
    """
    pairs = [_value(e) for e in empirical]
    if len(pairs) < 3:
        raise ConfigurationError("gap report needs at least 3 grid points")
    if len(bounds) != len(pairs) or any(float(b.n) != float(n) for b, (n, _) in zip(bounds, pairs)):
        raise ConfigurationError("empirical and bound series must share the same n-grid")
    ns = np.array([float(n) for n, _ in pairs])
    if np.any(np.diff(ns) <= 0):
        raise ConfigurationError("n-grid must be strictly increasing")
    values = np.array([v for _, v in pairs])
    gaps = [float(v - (b.total - b.prior_term)) for v, b in zip(values, bounds)]
    tail = ns >= ns[-1] / 10**TAIL_DECADES
    g = np.array(gaps)[tail]
    monotone = bool(np.all(np.diff(g) <= tol))
    top = slice(max(0, len(ns) - SLOPE_POINTS), None)
    return GapReport(ols_slope(np.log(ns[top]), values[top]), gaps, monotone)


@dataclass(frozen=True)
class ConcentrationResult:
    coverage: float
    bound: float
    passed: bool
    std_error: float
    samples: int


def normal_concentration_check(d, Sigma, delta, samples=100_000, seed=0, theta0=None, threads=1):
    """Empirical ``P(||theta - theta0||^2_{Sigma^-1} <= delta)`` against ``1 - d/delta``.

    Passes when the coverage is at least the bound minus three binomial
    standard errors.
    """
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if Sigma.shape != (d, d):
        raise DomainError(f"Sigma shape {Sigma.shape} does not match d={d}")
    if not delta > 0:
        raise DomainError("delta must be positive")
    if samples < 10_000:
        raise ConfigurationError("concentration check needs at least 10^4 samples")
    spectral_norm(Sigma)  # rejects asymmetric input
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise DomainError("Sigma must be positive definite") from exc
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float)

    def run(i):
        size = min(_CHUNK, samples - i * _CHUNK)
        z = stream(seed, i).standard_normal((size, d))
        theta = theta0 + z @ L.T
        diff = theta - theta0
        dist = np.sum(diff * np.linalg.solve(Sigma, diff.T).T, axis=1)
        return int(np.count_nonzero(dist <= delta))

    chunks = range(math.ceil(samples / _CHUNK))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            hits = sum(pool.map(run, chunks))
    else:
        hits = sum(run(i) for i in chunks)
    coverage = hits / samples
    se = math.sqrt(coverage * (1 - coverage) / samples)
    bound = 1.0 - d / delta
    return ConcentrationResult(coverage, bound, coverage >= bound - 3 * se, se, samples)
