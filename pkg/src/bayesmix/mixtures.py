"""Bayes mixture predictors.

A predictor is a single-writer streaming object: ``predictive()`` gives the
distribution of the next observation, ``update(x)`` consumes it and returns
``ln m(x | past)``, and ``log_marginal`` is the running ``ln m^t``. Every
predictor also evaluates ``ln m^n`` for a whole batch of sequences at once
(``log_marginal_batch``), which the redundancy module relies on.
"""

from __future__ import annotations

import copy
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ConfigurationError, DomainError, NumericError, UnsupportedError
from .families import (
    Categorical,
    CountableFamily,
    LinearRegression,
    MarkovChain,
    SequentialSource,
    SideInfo,
    _batch,
    symbol_counts,
    transition_counts,
)
from .priors import DirichletPrior, GaussianPrior, PriorDensity, ProductDirichletMarkov

# Upper bound on S * G entries materialised at once by the quadrature mixture.
_BLOCK = 1 << 22


def _lse(v) -> float:
    """``ln sum exp(v)`` for a 1-d array; scipy's version is slow on the per-symbol path."""
    m = v.max()
    return float(m + math.log(np.exp(v - m).sum()))


class MixturePredictor(ABC):
    kind = "mixture"
    alphabet_size: int | None

    def __init__(self):
        self._t = 0
        self._sum = 0.0
        self._comp = 0.0

    @property
    def t(self) -> int:
        return self._t

    @property
    def log_marginal(self) -> float:
        """Cumulative ``ln m^t`` of everything fed so far."""
        return self._sum + self._comp

    def _accumulate(self, x):
        # Neumaier compensated summation
        s = self._sum + x
        if abs(self._sum) >= abs(x):
            self._comp += (self._sum - s) + x
        else:
            self._comp += (x - s) + self._sum
        self._sum = s

    @abstractmethod
    def predictive(self):
        """Distribution of the next observation."""

    @abstractmethod
    def _advance(self, x) -> float: ...

    def update(self, x) -> float:
        lp = float(self._advance(x))
        self._accumulate(lp)
        self._t += 1
        return lp

    def feed(self, seq):
        for x in seq:
            self.update(x)
        return self

    def clone(self):
        return copy.deepcopy(self)

    @abstractmethod
    def log_marginal_batch(self, seqs) -> np.ndarray:
        """``ln m^n`` for each row of ``seqs`` (independent of the streaming state)."""

    def spec(self) -> dict:
        """Construction description; identifies the model in coded streams."""
        return {"kind": self.kind}

    def state_dict(self) -> dict:
        return {"kind": self.kind, "t": self._t, "log_marginal": [self._sum, self._comp]}

    def load_state(self, state):
        if state["kind"] != self.kind:
            raise ConfigurationError(f"state is for {state['kind']}, predictor is {self.kind}")
        self._t = int(state["t"])
        self._sum, self._comp = (float(v) for v in state["log_marginal"])
        return self


def _check_symbol(symbol, k):
    if not (isinstance(symbol, (int, np.integer)) and 0 <= symbol < k):
        raise DomainError(f"symbol {symbol!r} outside alphabet 0..{k - 1}")


def dirichlet_predictive(counts, symbol, alpha=0.5):
    """``(n_k + alpha) / (t + K alpha)``; with ``alpha = 1/2`` this is the KT estimator."""
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise DomainError("counts must be nonnegative")
    _check_symbol(symbol, counts.size)
    return float((counts[symbol] + alpha) / (counts.sum() + counts.size * alpha))


class DirichletMixture(MixturePredictor):
    """Conjugate mixture of i.i.d. categorical sources under a symmetric Dirichlet prior."""

    kind = "dirichlet"

    def __init__(self, alphabet_size, alpha=0.5):
        super().__init__()
        if alphabet_size < 2:
            raise DomainError("alphabet needs at least two symbols")
        self.alphabet_size = int(alphabet_size)
        self.alpha = float(alpha)
        self.counts = np.zeros(self.alphabet_size, dtype=np.int64)

    def predictive(self):
        return (self.counts + self.alpha) / (self._t + self.alphabet_size * self.alpha)

    def _advance(self, x):
        _check_symbol(x, self.alphabet_size)
        lp = math.log(dirichlet_predictive(self.counts, x, self.alpha))
        self.counts[x] += 1
        return lp

    def log_marginal_counts(self, counts):
        counts = np.asarray(counts, dtype=float)
        K, a = self.alphabet_size, self.alpha
        return (gammaln(K * a) - K * gammaln(a) + np.sum(gammaln(counts + a), axis=-1)
                - gammaln(counts.sum(axis=-1) + K * a))

    def log_marginal_batch(self, seqs):
        return self.log_marginal_counts(symbol_counts(_batch(seqs)[0], self.alphabet_size))

    def spec(self):
        return {"kind": self.kind, "alphabet_size": self.alphabet_size, "alpha": self.alpha}

    def state_dict(self):
        return {**super().state_dict(), "counts": self.counts.tolist()}

    def load_state(self, state):
        super().load_state(state)
        self.counts = np.asarray(state["counts"], dtype=np.int64)
        return self


def markov_predictive(transition_counts, current_state, symbol, alpha=0.5):
    """``(c(j->k) + alpha) / (c(j->.) + N alpha)`` for current state ``j``."""
    counts = np.asarray(transition_counts)
    N = counts.shape[0]
    if np.any(counts < 0):
        raise DomainError("counts must be nonnegative")
    if not (isinstance(current_state, (int, np.integer)) and 0 <= current_state < N):
        raise DomainError(f"invalid state {current_state!r}")
    _check_symbol(symbol, N)
    row = counts[current_state]
    return float((row[symbol] + alpha) / (row.sum() + N * alpha))


class MarkovMixture(MixturePredictor):
    """Product of per-row Dirichlet(alpha) mixtures over transition matrices."""

    kind = "markov-dirichlet"

    def __init__(self, n_states, initial_state=0, alpha=0.5):
        super().__init__()
        self.alphabet_size = self.n_states = int(n_states)
        self.initial_state = int(initial_state)
        self.alpha = float(alpha)
        self.counts = np.zeros((self.n_states, self.n_states), dtype=np.int64)
        self.state = self.initial_state

    def predictive(self):
        row = self.counts[self.state]
        return (row + self.alpha) / (row.sum() + self.n_states * self.alpha)

    def _advance(self, x):
        lp = math.log(markov_predictive(self.counts, self.state, x, self.alpha))
        self.counts[self.state, x] += 1
        self.state = int(x)
        return lp

    def log_marginal_transitions(self, counts):
        counts = np.asarray(counts, dtype=float)
        N, a = self.n_states, self.alpha
        rows = (gammaln(N * a) - N * gammaln(a) + np.sum(gammaln(counts + a), axis=-1)
                - gammaln(counts.sum(axis=-1) + N * a))
        return rows.sum(axis=-1)

    def log_marginal_batch(self, seqs):
        return self.log_marginal_transitions(
            transition_counts(_batch(seqs)[0], self.n_states, self.initial_state))

    def spec(self):
        return {"kind": self.kind, "n_states": self.n_states,
                "initial_state": self.initial_state, "alpha": self.alpha}

    def state_dict(self):
        return {**super().state_dict(), "counts": self.counts.tolist(), "state": self.state}

    def load_state(self, state):
        super().load_state(state)
        self.counts = np.asarray(state["counts"], dtype=np.int64)
        self.state = int(state["state"])
        return self


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray


def _check_pd(cov):
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError("posterior covariance is not positive definite") from exc


def linreg_predictive(posterior: GaussianPosterior, phi, beta):
    """Predictive ``(mean, variance)`` of the next target at feature vector ``phi``."""
    phi = np.asarray(phi, dtype=float)
    return float(posterior.mean @ phi), float(1.0 / beta + phi @ posterior.cov @ phi)


def linreg_posterior_update(posterior: GaussianPosterior, phi, y, beta) -> GaussianPosterior:
    """Rank-one conjugate update after observing target ``y`` at features ``phi``."""
    _check_pd(posterior.cov)
    phi = np.asarray(phi, dtype=float)
    mean, var = linreg_predictive(posterior, phi, beta)
    gain = posterior.cov @ phi / var
    cov = posterior.cov - np.outer(gain, phi @ posterior.cov)
    cov = 0.5 * (cov + cov.T)
    return GaussianPosterior(posterior.mean + gain * (y - mean), cov)


class GaussianRegressionMixture(MixturePredictor):
    """Bayesian linear regression with a Gaussian prior (conjugate, exact)."""

    kind = "gaussian-regression"
    alphabet_size = None

    def __init__(self, side: SideInfo, prior: GaussianPrior):
        super().__init__()
        if prior.d != side.d:
            raise DomainError(f"prior dimension {prior.d} does not match basis dimension {side.d}")
        self.side = side
        self.beta = side.beta
        self.prior = prior
        self.posterior = GaussianPosterior(prior.mean.copy(), prior.cov.copy())
        self._features = LinearRegression(side, prior.mean)

    def _phi(self, t):
        return self._features.features(t + 1)[t]

    def predictive(self):
        """``(mean, variance)`` of the next target."""
        return linreg_predictive(self.posterior, self._phi(self._t), self.beta)

    def _advance(self, y):
        phi = self._phi(self._t)
        mean, var = linreg_predictive(self.posterior, phi, self.beta)
        lp = -0.5 * (math.log(2 * math.pi * var) + (y - mean) ** 2 / var)
        self.posterior = linreg_posterior_update(self.posterior, phi, y, self.beta)
        return lp

    def log_marginal_batch(self, seqs):
        y = _batch(np.asarray(seqs, dtype=float))[0]
        S, n = y.shape
        F = self._features.features(n)
        means = np.tile(self.prior.mean, (S, 1))
        cov = self.prior.cov.copy()
        total = np.zeros(S)
        for t in range(n):
            phi = F[t]
            var = 1.0 / self.beta + phi @ cov @ phi
            pred = means @ phi
            total += -0.5 * (math.log(2 * math.pi * var) + (y[:, t] - pred) ** 2 / var)
            gain = cov @ phi / var
            means = means + np.outer(y[:, t] - pred, gain)
            cov = cov - np.outer(gain, phi @ cov)
        return total

    def spec(self):
        return {"kind": self.kind, "beta": self.beta, "side": self.side.description,
                "prior": self.prior.spec()}

    def state_dict(self):
        return {**super().state_dict(), "mean": self.posterior.mean.tolist(),
                "cov": self.posterior.cov.tolist()}

    def load_state(self, state):
        super().load_state(state)
        self.posterior = GaussianPosterior(np.asarray(state["mean"], dtype=float),
                                           np.asarray(state["cov"], dtype=float))
        return self


def _quadrature_nodes(prior: PriorDensity, grid, nodes):
    lo, hi = prior.interval()
    if nodes == "auto":
        nodes = "arcsine" if prior.endpoint_singular else "linear"
    if nodes == "linear":
        theta = np.linspace(lo, hi, grid)
        w = np.full(grid, (hi - lo) / (grid - 1))
        w[0] = w[-1] = 0.5 * (hi - lo) / (grid - 1)
        return theta, np.log(w)
    if nodes == "arcsine":
        # theta = lo + (hi - lo) sin^2(phi), midpoint rule in phi; the Jacobian
        # cancels inverse-square-root endpoint singularities.
        h = (math.pi / 2) / grid
        phi = (np.arange(grid) + 0.5) * h
        theta = lo + (hi - lo) * np.sin(phi) ** 2
        return theta, np.log(h * (hi - lo) * np.sin(2 * phi))
    raise ConfigurationError(f"unknown node layout {nodes!r}")


class QuadratureMixture(MixturePredictor):
    """Mixture over a 1-d binary family by quadrature on ``G`` nodes.

    The node weights (quadrature weight times prior density) are renormalised
    to sum to one, so the predictor is an exact mixture over the nodes.
    """

    kind = "quadrature"
    alphabet_size = 2

    def __init__(self, family, prior: PriorDensity, grid=2048, nodes="auto"):
        super().__init__()
        if grid < 16:
            raise ConfigurationError(f"quadrature needs at least 16 nodes, got {grid}")
        if getattr(family, "d", None) != 1 or not hasattr(family, "prob_one_grid"):
            raise DomainError("quadrature mixtures need a one-dimensional binary family")
        if prior.d != 1:
            raise DomainError("quadrature mixtures need a one-dimensional prior")
        self.family = family
        self.prior = prior
        self.grid = int(grid)
        self.theta, log_w = _quadrature_nodes(prior, self.grid, nodes)
        self.nodes = nodes
        log_prior = np.array([prior.log_density(th) for th in self.theta])
        base = log_w + log_prior
        self.log_weights0 = base - logsumexp(base)
        self.log_weights = self.log_weights0.copy()

    def _q(self, ts):
        return self.family.prob_one_grid(self.theta, ts)

    def posterior_weights(self):
        return np.exp(self.log_weights - _lse(self.log_weights))

    def predictive(self):
        w = self.posterior_weights()
        q = self._q(np.array([self._t + 1]))[:, 0]
        return np.array([w @ (1.0 - q), w @ q])

    def _advance(self, x):
        _check_symbol(x, 2)
        q = self._q(np.array([self._t + 1]))[:, 0]
        step = np.log(q) if x == 1 else np.log1p(-q)
        before = _lse(self.log_weights)
        self.log_weights = self.log_weights + step
        return _lse(self.log_weights) - before

    def log_marginal_batch(self, seqs):
        seqs = _batch(seqs)[0]
        S, n = seqs.shape
        q = self._q(np.arange(1, n + 1))
        L1, L0 = np.log(q).T, np.log1p(-q).T
        out = np.empty(S)
        rows = max(1, _BLOCK // (self.grid * max(n, 1)))
        for start in range(0, S, rows):
            x = seqs[start:start + rows].astype(float)
            ll = x @ L1 + (1.0 - x) @ L0
            out[start:start + rows] = logsumexp(ll + self.log_weights0, axis=1)
        return out

    def log_marginal_counts(self, counts):
        """``ln m^n`` from (zeros, ones) counts; valid for time-homogeneous families."""
        counts = np.atleast_2d(np.asarray(counts, dtype=float))
        q = self._q(np.array([1]))[:, 0]
        out = np.empty(counts.shape[0])
        rows = max(1, _BLOCK // self.grid)
        for start in range(0, counts.shape[0], rows):
            c = counts[start:start + rows]
            ll = np.outer(c[:, 1], np.log(q)) + np.outer(c[:, 0], np.log1p(-q))
            out[start:start + rows] = logsumexp(ll + self.log_weights0, axis=1)
        return out

    def spec(self):
        return {"kind": self.kind, "family": self.family.spec(), "prior": self.prior.spec(),
                "grid": self.grid, "nodes": self.nodes}

    def state_dict(self):
        return {**super().state_dict(), "log_weights": self.log_weights.tolist()}

    def load_state(self, state):
        super().load_state(state)
        self.log_weights = np.asarray(state["log_weights"], dtype=float)
        return self


class CountableMixture(MixturePredictor):
    """``M = sum_i w(i) P_i`` over a finite list of sources."""

    kind = "countable"

    def __init__(self, family: CountableFamily):
        super().__init__()
        self.family = family
        self.alphabet_size = family.alphabet_size
        self.log_weights = family.log_mass.copy()
        self.history = []

    def posterior_weights(self):
        return np.exp(self.log_weights - _lse(self.log_weights))

    def predictive(self):
        w = self.posterior_weights()
        return sum(wi * m.cond_probs(self.history) for wi, m in zip(w, self.family.members))

    def _advance(self, x):
        _check_symbol(x, self.alphabet_size)
        step = np.array([m.cond_logprob(self.history, x) for m in self.family.members])
        before = _lse(self.log_weights)
        self.log_weights = self.log_weights + step
        self.history.append(int(x))
        return _lse(self.log_weights) - before

    def log_marginal_batch(self, seqs):
        seqs = _batch(seqs)[0]
        parts = np.stack([lw + m.log_density(seqs)
                          for lw, m in zip(self.family.log_mass, self.family.members)])
        return logsumexp(parts, axis=0)

    def log_marginal_counts(self, counts):
        probs = [m.iid_probs() for m in self.family.members]
        if any(p is None for p in probs):
            raise UnsupportedError("count sufficiency needs i.i.d. members")
        counts = np.asarray(counts, dtype=float)
        parts = np.stack([lw + counts @ np.log(p) for lw, p in zip(self.family.log_mass, probs)])
        return logsumexp(parts, axis=0)

    def spec(self):
        return {"kind": self.kind, "family": self.family.spec()}

    def state_dict(self):
        return {**super().state_dict(), "log_weights": self.log_weights.tolist(),
                "history": list(self.history)}

    def load_state(self, state):
        super().load_state(state)
        self.log_weights = np.asarray(state["log_weights"], dtype=float)
        self.history = [int(x) for x in state["history"]]
        return self


class SourcePredictor(MixturePredictor):
    """Predicts with a fixed source; the degenerate mixture used as a coding baseline."""

    kind = "source"

    def __init__(self, source: SequentialSource):
        super().__init__()
        self.source = source
        self.alphabet_size = source.alphabet_size
        self.history = []

    def predictive(self):
        return self.source.cond_probs(self.history)

    def _advance(self, x):
        lp = self.source.cond_logprob(self.history, x)
        self.history.append(x)
        return lp

    def log_marginal_batch(self, seqs):
        return np.atleast_1d(self.source.log_density(_batch(seqs)[0]))

    def log_marginal_counts(self, counts):
        p = self.source.iid_probs()
        if p is None:
            raise UnsupportedError("count sufficiency needs an i.i.d. source")
        return np.asarray(counts, dtype=float) @ np.log(p)

    def log_marginal_transitions(self, counts):
        if not isinstance(self.source, MarkovChain):
            raise UnsupportedError("transition counts need a Markov source")
        return np.sum(np.asarray(counts, dtype=float) * self.source.log_transition, axis=(-2, -1))

    def spec(self):
        return {"kind": self.kind, "source": self.source.spec()}

    def state_dict(self):
        return {**super().state_dict(), "history": list(self.history)}

    def load_state(self, state):
        super().load_state(state)
        self.history = list(state["history"])
        return self


def quadrature_mixture(family, prior, grid=2048, nodes="auto") -> QuadratureMixture:
    return QuadratureMixture(family, prior, grid, nodes)


def countable_mixture(family: CountableFamily) -> CountableMixture:
    return CountableMixture(family)


def build_mixture(source, prior: PriorDensity | None = None, grid=2048):
    """The natural mixture predictor for a (source, prior) pair.

    Conjugate forms are used where they exist; one-dimensional binary families
    with any other prior fall back to quadrature.
    """
    if isinstance(source, CountableFamily):
        return CountableMixture(source)
    if isinstance(source, Categorical) and (prior is None or isinstance(prior, DirichletPrior)):
        alpha = 0.5 if prior is None else prior.alpha
        return DirichletMixture(source.alphabet_size, alpha)
    if isinstance(source, MarkovChain) and (prior is None or isinstance(prior, ProductDirichletMarkov)):
        alpha = 0.5 if prior is None else prior.alpha
        return MarkovMixture(source.n_states, source.initial_state, alpha)
    if isinstance(source, LinearRegression):
        if not isinstance(prior, GaussianPrior):
            raise UnsupportedError("regression mixtures need a Gaussian prior")
        return GaussianRegressionMixture(source.side, prior)
    if prior is not None and getattr(source, "d", None) == 1 and hasattr(source, "prob_one_grid"):
        return QuadratureMixture(source, prior, grid)
    raise UnsupportedError(f"no mixture for {type(source).__name__} with prior "
                           f"{type(prior).__name__ if prior else None}")


__all__ = [
    "MixturePredictor", "DirichletMixture", "MarkovMixture", "GaussianRegressionMixture",
    "QuadratureMixture", "CountableMixture", "SourcePredictor", "GaussianPosterior",
    "dirichlet_predictive", "markov_predictive", "linreg_predictive", "linreg_posterior_update",
    "quadrature_mixture", "countable_mixture", "build_mixture",
]
