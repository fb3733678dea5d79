"""Redundancy ``D(P^n || M^n)`` in nats: exact enumeration, count-based exact
paths, Monte Carlo, and chain-rule / per-sequence decompositions.

Sums are accumulated with ``math.fsum`` so exact methods agree to rounding.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ._rng import stream
from .errors import ConfigurationError, DomainError, UnsupportedError
from .families import LinearRegression, MarkovChain, SequentialSource
from .mixtures import GaussianRegressionMixture, MarkovMixture, MixturePredictor, SourcePredictor

ENUMERATION_CAP = 10**7
MARKOV_COUNTS_CAP = 256
COMPOSITION_CAP = 10**7
# Monte Carlo replicates are drawn in fixed-size chunks; chunk i uses stream(seed, i).
MC_CHUNK = 1000
_ENUM_BLOCK = 1 << 16

METHODS = ("enumeration", "counts-exact", "monte-carlo", "closed-form")


@dataclass(frozen=True)
class RedundancyEstimate:
    n: int
    value: float
    std_error: float = 0.0
    method: str = "enumeration"
    samples: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method tag {self.method!r}")
        if self.std_error < 0:
            raise DomainError("standard error must be nonnegative")

    @property
    def ci95(self):
        half = 1.96 * self.std_error
        return self.value - half, self.value + half

    @property
    def bits(self):
        return self.value / math.log(2)

    def as_dict(self):
        return {"n": self.n, "value": self.value, "std_error": self.std_error,
                "method": self.method, "samples": self.samples}


@dataclass(frozen=True)
class RedundancyTrajectory:
    """Per-step terms: expected ``d_t`` or one realisation's ``ln p/m`` increments."""

    terms: np.ndarray
    kind: str = "expected"

    @property
    def cumulative(self):
        return np.array([math.fsum(self.terms[:t + 1]) for t in range(len(self.terms))])

    @property
    def total(self):
        return math.fsum(self.terms)


def _finite_alphabet(source):
    k = source.alphabet_size
    if k is None:
        raise UnsupportedError("enumeration needs a finite alphabet")
    return k


def _enumeration_size(k, n):
    if k**n > ENUMERATION_CAP:
        raise ConfigurationError(f"|Omega|^n = {k}^{n} exceeds the enumeration cap {ENUMERATION_CAP}")
    return k**n


def _sequences(k, n, start, stop):
    idx = np.arange(start, stop, dtype=np.int64)
    return (idx[:, None] // k ** np.arange(n - 1, -1, -1, dtype=np.int64)[None, :]) % k


def exact_redundancy_enumeration(source: SequentialSource, mixture: MixturePredictor, n) -> RedundancyEstimate:
    """Sum ``p(w) ln(p(w)/m(w))`` over every sequence of length ``n``."""
    k = _finite_alphabet(source)
    if n == 0:
        return RedundancyEstimate(0, 0.0, 0.0, "enumeration")
    total = _enumeration_size(k, n)
    parts = []
    for start in range(0, total, _ENUM_BLOCK):
        seqs = _sequences(k, n, start, min(total, start + _ENUM_BLOCK))
        lp = np.atleast_1d(source.log_density(seqs))
        lm = mixture.log_marginal_batch(seqs)
        keep = np.isfinite(lp)
        parts.append(math.fsum(np.exp(lp[keep]) * (lp[keep] - lm[keep])))
    return RedundancyEstimate(n, math.fsum(parts), 0.0, "enumeration")


def _compositions(n, k):
    """All count vectors of length ``k`` summing to ``n`` (stars and bars)."""
    size = math.comb(n + k - 1, k - 1)
    if size > COMPOSITION_CAP:
        raise UnsupportedError(f"{size} count vectors exceed the cap {COMPOSITION_CAP}")
    if k == 2:
        ones = np.arange(n + 1)
        return np.stack([n - ones, ones], axis=1)
    bars = np.array(list(itertools.combinations(range(n + k - 1), k - 1)), dtype=np.int64)
    edges = np.concatenate([np.full((size, 1), -1), bars, np.full((size, 1), n + k - 1)], axis=1)
    return np.diff(edges, axis=1) - 1


def _iid_counts(source, mixture, n):
    p = source.iid_probs()
    if p is None or not hasattr(mixture, "log_marginal_counts"):
        raise UnsupportedError("count path needs an i.i.d. source and a count-sufficient mixture")
    counts = _compositions(n, p.size)
    logp = np.log(p)
    lp = counts @ logp
    log_mult = gammaln(n + 1) - np.sum(gammaln(counts + 1), axis=1)
    lm = mixture.log_marginal_counts(counts)
    return math.fsum(np.exp(log_mult + lp) * (lp - lm))


def _markov_counts(source: MarkovChain, mixture, n):
    if source.n_states != 2:
        raise UnsupportedError("transition-count path is implemented for two-state chains only")
    if n > MARKOV_COUNTS_CAP:
        raise UnsupportedError(f"transition-count path is capped at n <= {MARKOV_COUNTS_CAP}")
    if isinstance(mixture, MarkovMixture):
        if mixture.initial_state != source.initial_state or mixture.n_states != 2:
            raise UnsupportedError("mixture and source disagree on the chain layout")
    elif not (isinstance(mixture, SourcePredictor) and isinstance(mixture.source, MarkovChain)):
        raise UnsupportedError("transition-count path needs a Markov-count-sufficient mixture")
    P = source.transition
    s0 = source.initial_state
    # W[last, n00, n01] = probability of all paths in that class; n10 and n11
    # follow from the start state, the last state and the horizon.
    W = np.zeros((2, n + 1, n + 1))
    W[s0, 0, 0] = 1.0
    for _ in range(n):
        nxt = np.zeros_like(W)
        nxt[0, 1:, :] += W[0, :-1, :] * P[0, 0]
        nxt[1, :, 1:] += W[0, :, :-1] * P[0, 1]
        nxt[0] += W[1] * P[1, 0]
        nxt[1] += W[1] * P[1, 1]
        W = nxt
    last, n00, n01 = np.nonzero(W)
    weights = W[last, n00, n01]
    n10 = n01 - (last == 1) + (s0 == 1)
    n11 = n - n00 - n01 - n10
    ok = (n10 >= 0) & (n11 >= 0)
    counts = np.stack([np.stack([n00, n01], -1), np.stack([n10, n11], -1)], axis=1)[ok]
    lp = np.sum(counts * source.log_transition, axis=(1, 2))
    lm = mixture.log_marginal_transitions(counts)
    return math.fsum(weights[ok] * (lp - lm))


def exact_redundancy_counts(source: SequentialSource, mixture: MixturePredictor, n) -> RedundancyEstimate:
    """Exact redundancy summed over sufficient-count classes instead of sequences."""
    if n == 0:
        return RedundancyEstimate(0, 0.0, 0.0, "counts-exact")
    if isinstance(source, MarkovChain):
        value = _markov_counts(source, mixture, n)
    else:
        value = _iid_counts(source, mixture, n)
    return RedundancyEstimate(n, value, 0.0, "counts-exact")


def monte_carlo_sequences(source: SequentialSource, n, samples, seed, chunk_index):
    """The replicate sequences of one Monte Carlo chunk (for reproducing runs)."""
    start = chunk_index * MC_CHUNK
    size = min(MC_CHUNK, samples - start)
    return source.sample(n, stream(seed, chunk_index), size=size)


def mc_log_ratios(source, mixture, n, samples, seed=0, threads=1) -> np.ndarray:
    """``ln p^n(w)/m^n(w)`` for ``samples`` seeded replicates, in replicate order."""
    chunks = range(math.ceil(samples / MC_CHUNK))

    def run(i):
        seqs = monte_carlo_sequences(source, n, samples, seed, i)
        return np.atleast_1d(source.log_density(seqs)) - mixture.log_marginal_batch(seqs)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(i) for i in chunks]
    return np.concatenate(parts)


def mc_redundancy(source: SequentialSource, mixture: MixturePredictor, n, samples=10_000, seed=0,
                  threads=1) -> RedundancyEstimate:
    """Sample mean and standard error of the log-likelihood ratio."""
    if samples < 100:
        raise ConfigurationError("Monte Carlo needs at least 100 samples")
    if n == 0:
        return RedundancyEstimate(0, 0.0, 0.0, "monte-carlo", samples)
    r = mc_log_ratios(source, mixture, n, samples, seed, threads)
    mean = math.fsum(r) / r.size
    var = math.fsum((r - mean) ** 2) / (r.size - 1)
    return RedundancyEstimate(n, mean, math.sqrt(var / r.size), "monte-carlo", samples)


def gaussian_regression_redundancy(source: LinearRegression, mixture: GaussianRegressionMixture, n):
    """Closed-form KL between the joint Gaussians ``N(F theta0, I/beta)`` and the marginal.

    All matrix work is ``d x d`` (determinant lemma and Woodbury identity).
    """
    if n == 0:
        return RedundancyEstimate(0, 0.0, 0.0, "closed-form")
    beta = source.side.beta
    F = source.features(n)
    G = F.T @ F
    Sigma = mixture.prior.cov
    v = mixture.prior.mean - source.theta
    A = beta * Sigma @ G
    I = np.eye(source.d)
    _, logdet = np.linalg.slogdet(I + A)
    trace = float(np.trace(np.linalg.inv(I + A)))
    inner = np.linalg.solve(np.linalg.inv(Sigma) + beta * G, G @ v)
    quad = beta * float(v @ G @ v - beta * (G @ v) @ inner)
    value = 0.5 * (trace - source.d + quad + logdet)
    return RedundancyEstimate(n, value, 0.0, "closed-form")


def gaussian_regression_steps(source: LinearRegression, mixture: GaussianRegressionMixture, n):
    """Expected per-step predictive divergences for the regression mixture.

    The posterior covariance is deterministic; the posterior mean is a linear
    function of past targets, so its mean and covariance under the truth are
    propagated alongside.
    """
    beta = source.side.beta
    F = source.features(n)
    theta0 = source.theta
    cov = mixture.prior.cov.copy()
    mean = mixture.prior.mean.copy()
    # Covariance of the posterior mean under the true source.
    spread = np.zeros_like(cov)
    terms = np.empty(n)
    for t in range(n):
        phi = F[t]
        var = 1.0 / beta + phi @ cov @ phi
        bias = float(phi @ (theta0 - mean))
        sq = bias**2 + float(phi @ spread @ phi)
        terms[t] = 0.5 * ((1.0 / beta) / var - 1.0 + math.log(beta * var) + sq / var)
        gain = cov @ phi / var
        # mean_{t+1} = (I - gain phi^T) mean_t + gain y_t with y_t ~ N(theta0.phi, 1/beta)
        K = np.eye(phi.size) - np.outer(gain, phi)
        spread = K @ spread @ K.T + np.outer(gain, gain) / beta
        mean = mean + gain * (theta0 @ phi - mean @ phi)
        cov = cov - np.outer(gain, phi @ cov)
    return RedundancyTrajectory(terms, "expected")


def chain_rule_decomposition(source: SequentialSource, mixture: MixturePredictor, n) -> RedundancyTrajectory:
    """Exact ``E[d_t]`` for ``t = 1..n``, where ``d_t`` is the KL divergence between the
    true and mixture predictive distributions after a random prefix."""
    if isinstance(source, LinearRegression):
        return gaussian_regression_steps(source, mixture, n)
    k = _finite_alphabet(source)
    _enumeration_size(k, n)
    terms = np.empty(n)
    prev_lp = np.zeros(1)
    prev_lm = np.zeros(1)
    for t in range(1, n + 1):
        seqs = _sequences(k, t, 0, k**t)
        lp = np.atleast_1d(source.log_density(seqs))
        lm = mixture.log_marginal_batch(seqs)
        parent = np.arange(k**t) // k
        cond_p = lp - prev_lp[parent]
        cond_m = lm - prev_lm[parent]
        keep = np.isfinite(lp)
        terms[t - 1] = math.fsum(np.exp(lp[keep]) * (cond_p[keep] - cond_m[keep]))
        prev_lp, prev_lm = lp, lm
    return RedundancyTrajectory(terms, "expected")


def per_sequence_redundancy(source: SequentialSource, mixture: MixturePredictor, sequence) -> RedundancyTrajectory:
    """Increments of ``ln p^t/m^t`` along one realisation, computed by streaming."""
    m = mixture.clone()
    if m.t != 0:
        raise ConfigurationError("per-sequence redundancy needs a fresh predictor")
    history = []
    terms = np.empty(len(sequence))
    for t, x in enumerate(sequence):
        x = x.item() if isinstance(x, np.generic) else x
        terms[t] = source.cond_logprob(history, x) - m.update(x)
        history.append(x)
    return RedundancyTrajectory(terms, "per-sequence")


def redundancy(source, mixture, n, method="auto", samples=10_000, seed=0, threads=1) -> RedundancyEstimate:
    """Dispatch to the best available method.

    ``auto`` prefers the closed form, then counts, then enumeration, and
    otherwise falls back to Monte Carlo.
    """
    if method == "closed-form" or (method == "auto" and isinstance(source, LinearRegression)):
        if not isinstance(mixture, GaussianRegressionMixture):
            raise UnsupportedError("closed form needs the Gaussian regression mixture")
        return gaussian_regression_redundancy(source, mixture, n)
    if method == "counts-exact":
        return exact_redundancy_counts(source, mixture, n)
    if method == "enumeration":
        return exact_redundancy_enumeration(source, mixture, n)
    if method == "monte-carlo":
        return mc_redundancy(source, mixture, n, samples, seed, threads)
    if method != "auto":
        raise ConfigurationError(f"unknown method {method!r}")
    try:
        return exact_redundancy_counts(source, mixture, n)
    except UnsupportedError:
        pass
    k = source.alphabet_size
    if k is not None and k**n <= ENUMERATION_CAP:
        return exact_redundancy_enumeration(source, mixture, n)
    return mc_redundancy(source, mixture, n, samples, seed, threads)


def redundancy_series(source, mixture, grid, method="auto", samples=10_000, seed=0, threads=1):
    """Redundancy at every horizon of ``grid``; Monte Carlo seeds are split per grid index."""
    return [redundancy(source, mixture, int(n), method, samples, seed=int(stream(seed, i).integers(2**63)),
                       threads=threads) for i, n in enumerate(grid)]
