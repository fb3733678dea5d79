"""Parametric sequential sources.

Every source is bound to one parameter value and exposes conditional
probabilities, batched joint log-densities (nats), a seeded sampler and,
where it has a closed form, the exact divergence ``D(P^n_self || P^n_other)``.
Finite-alphabet sequences are integer arrays of shape ``(n,)`` or ``(S, n)``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .errors import DomainError, UnsupportedError

# Probabilities are clamped into [EPS_P, 1 - EPS_P] before taking logs.
EPS_P = 1e-12


def _vector(theta, name="theta"):
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError(f"{name} must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite coordinates: {arr}")
    return arr


def _batch(seqs):
    arr = np.asarray(seqs)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise DomainError(f"expected a sequence or a batch of sequences, got shape {arr.shape}")
    return arr, False


def _unbatch(values, single):
    return float(values[0]) if single else values


def _check_symbols(seqs, k):
    if seqs.size and (seqs.min() < 0 or seqs.max() >= k):
        raise DomainError(f"symbols must lie in 0..{k - 1}")


def symbol_counts(seqs, alphabet_size):
    """Per-sequence symbol counts, shape ``(S, K)``."""
    seqs, single = _batch(seqs)
    seqs = seqs.astype(np.int64, copy=False)
    _check_symbols(seqs, alphabet_size)
    if alphabet_size <= 32:
        counts = np.stack([(seqs == k).sum(axis=1) for k in range(alphabet_size)], axis=1)
    else:
        counts = np.zeros((seqs.shape[0], alphabet_size), dtype=np.int64)
        rows = np.repeat(np.arange(seqs.shape[0]), seqs.shape[1])
        np.add.at(counts, (rows, seqs.ravel()), 1)
    return counts[0] if single else counts


def _bernoulli_kl(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return p * (np.log(p) - np.log(q)) + (1 - p) * (np.log1p(-p) - np.log1p(-q))


def transition_counts(seqs, n_states, initial_state):
    """Per-sequence transition counts ``(S, N, N)``; the first move leaves ``initial_state``."""
    seqs, single = _batch(seqs)
    seqs = seqs.astype(np.int64, copy=False)
    _check_symbols(seqs, n_states)
    first = np.full((seqs.shape[0], 1), initial_state, dtype=np.int64)
    prev = np.concatenate([first, seqs[:, :-1]], axis=1)
    counts = np.empty((seqs.shape[0], n_states, n_states), dtype=np.int64)
    for a in range(n_states):
        at_a = prev == a
        for b in range(n_states):
            counts[:, a, b] = (at_a & (seqs == b)).sum(axis=1)
    return counts[0] if single else counts


class SequentialSource(ABC):
    """A member ``P_theta`` of a parametric family of sequential sources."""

    kind = "source"
    d: int
    alphabet_size: int | None

    @property
    @abstractmethod
    def theta(self) -> np.ndarray: ...

    @abstractmethod
    def with_theta(self, theta) -> SequentialSource:
        """The same family evaluated at another parameter value."""

    @abstractmethod
    def log_density(self, seqs):
        """Joint log-density ``ln p^n_theta`` of one sequence or a batch."""

    @abstractmethod
    def sample(self, n, rng, size=None):
        """Draw one sequence (``size=None``) or ``size`` sequences of length ``n``."""

    def cond_probs(self, history) -> np.ndarray:
        """Predictive distribution of the next symbol given ``history``."""
        raise UnsupportedError(f"{self.kind} has no finite alphabet")

    def cond_logprob(self, history, symbol) -> float:
        return float(np.log(self.cond_probs(history)[symbol]))

    def divergence(self, other, n) -> float:
        """Exact ``D(P^n_self || P^n_other)`` in nats."""
        raise UnsupportedError(f"no closed-form divergence for {self.kind}")

    def iid_probs(self):
        """Symbol probabilities when the source is i.i.d., else ``None``."""
        return None

    def parameter_scale(self) -> float:
        """Natural step scale for finite differences in parameter space."""
        return 1.0

    def spec(self) -> dict:
        return {"kind": self.kind, "theta": self.theta.tolist()}


class BinaryKernel:
    """Mixin for binary sources whose conditionals depend on time only.

    ``prob_one_grid(thetas, ts)`` evaluates ``P(omega_t = 1)`` for a grid of
    parameter values and time indices, which is all a quadrature mixture needs.
    """

    alphabet_size = 2

    def prob_one_grid(self, thetas, ts) -> np.ndarray:
        raise NotImplementedError

    def _q(self, n):
        return self.prob_one_grid(self.theta, np.arange(1, n + 1))[0]

    def log_density(self, seqs):
        seqs, single = _batch(seqs)
        _check_symbols(seqs, 2)
        q = self._q(seqs.shape[1])
        x = seqs.astype(float)
        out = x @ np.log(q) + (1.0 - x) @ np.log1p(-q)
        return _unbatch(out, single)

    def cond_probs(self, history):
        q = self.prob_one_grid(self.theta, np.array([len(history) + 1]))[0, 0]
        return np.array([1.0 - q, q])

    def sample(self, n, rng, size=None):
        q = self._q(n)
        shape = (n,) if size is None else (size, n)
        return (rng.random(shape) < q).astype(np.int64)

    def divergence(self, other, n):
        return float(np.sum(_bernoulli_kl(self._q(n), other._q(n))))


class Categorical(SequentialSource):
    """I.i.d. categorical source on ``{0, ..., d}``; ``theta_k = P(k)`` for k >= 1."""

    kind = "categorical"

    def __init__(self, theta):
        theta = _vector(theta)
        theta0 = 1.0 - theta.sum()
        if np.any(theta <= 0) or theta0 <= 0:
            raise DomainError(f"theta must lie in the open simplex interior, got {theta.tolist()}")
        self._theta = theta
        self.d = theta.size
        self.alphabet_size = self.d + 1
        self.probs = np.concatenate([[theta0], theta])
        self.log_probs = np.log(self.probs)

    @property
    def theta(self):
        return self._theta.copy()

    def with_theta(self, theta):
        return Categorical(theta)

    def cond_probs(self, history):
        return self.probs.copy()

    def log_density(self, seqs):
        seqs, single = _batch(seqs)
        counts = symbol_counts(seqs, self.alphabet_size)
        return _unbatch(counts @ self.log_probs, single)

    def sample(self, n, rng, size=None):
        shape = (n,) if size is None else (size, n)
        return rng.choice(self.alphabet_size, size=shape, p=self.probs).astype(np.int64)

    def divergence(self, other, n):
        return n * float(np.sum(self.probs * (self.log_probs - other.log_probs)))

    def iid_probs(self):
        return self.probs.copy()

    def parameter_scale(self):
        return float(self.probs.min())

    def prob_one_grid(self, thetas, ts):
        if self.d != 1:
            raise UnsupportedError("grid evaluation needs a binary (d = 1) categorical source")
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        q = np.clip(thetas, EPS_P, 1 - EPS_P)
        return np.broadcast_to(q[:, None], (q.size, np.size(ts))).copy()


class MarkovChain(SequentialSource):
    """First-order Markov chain with known initial state.

    The free parameters are ``P[j, k]`` for ``k < N - 1`` (row-major); the last
    column of every row is determined by normalisation.
    """

    kind = "markov"

    def __init__(self, transition, initial_state=0):
        P = np.asarray(transition, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 2:
            raise DomainError(f"transition must be an N x N matrix with N >= 2, got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise DomainError("transition matrix has non-finite entries")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise DomainError(f"rows must sum to 1, got {P.sum(axis=1).tolist()}")
        if np.any(P <= 0) or np.any(P >= 1):
            raise DomainError("transition probabilities must lie strictly inside (0, 1)")
        N = P.shape[0]
        if not 0 <= int(initial_state) < N:
            raise DomainError(f"initial state {initial_state} outside 0..{N - 1}")
        self.transition = P
        self.log_transition = np.log(P)
        self.initial_state = int(initial_state)
        self.n_states = N
        self.alphabet_size = N
        self.d = N * (N - 1)

    @property
    def theta(self):
        return self.transition[:, :-1].ravel().copy()

    def with_theta(self, theta):
        theta = _vector(theta)
        N = self.n_states
        if theta.size != N * (N - 1):
            raise DomainError(f"expected {N * (N - 1)} free parameters, got {theta.size}")
        free = theta.reshape(N, N - 1)
        P = np.concatenate([free, 1.0 - free.sum(axis=1, keepdims=True)], axis=1)
        return MarkovChain(P, self.initial_state)

    def cond_probs(self, history):
        state = history[-1] if len(history) else self.initial_state
        if not 0 <= state < self.n_states:
            raise DomainError(f"invalid state {state}")
        return self.transition[state].copy()

    def _previous(self, seqs):
        first = np.full((seqs.shape[0], 1), self.initial_state, dtype=seqs.dtype)
        return np.concatenate([first, seqs[:, :-1]], axis=1)

    def log_density(self, seqs):
        seqs, single = _batch(seqs)
        _check_symbols(seqs, self.n_states)
        out = self.log_transition[self._previous(seqs), seqs].sum(axis=1)
        return _unbatch(out, single)

    def transition_counts(self, seqs):
        """Transition counts ``(S, N, N)`` including the move out of the initial state."""
        return transition_counts(seqs, self.n_states, self.initial_state)

    def sample(self, n, rng, size=None):
        m = 1 if size is None else size
        cdf = np.cumsum(self.transition, axis=1)
        out = np.empty((m, n), dtype=np.int64)
        state = np.full(m, self.initial_state)
        for t in range(n):
            u = rng.random(m)
            state = np.minimum((u[:, None] >= cdf[state]).sum(axis=1), self.n_states - 1)
            out[:, t] = state
        return out[0] if size is None else out

    def state_occupation(self, n):
        """Sum over ``t = 1..n`` of the law of the state preceding step ``t``."""
        occ = np.zeros(self.n_states)
        occ[self.initial_state] = 1.0
        total = np.zeros(self.n_states)
        for _ in range(n):
            total += occ
            occ = occ @ self.transition
        return total

    def divergence(self, other, n):
        row_kl = np.sum(self.transition * (self.log_transition - other.log_transition), axis=1)
        return float(self.state_occupation(n) @ row_kl)

    def parameter_scale(self):
        return float(self.transition.min())

    def spec(self):
        return {"kind": self.kind, "transition": self.transition.tolist(),
                "initial_state": self.initial_state}


@dataclass(frozen=True)
class SideInfo:
    """Deterministic covariate stream ``x_1, x_2, ...`` with basis map and noise precision.

    ``basis`` maps an array of covariates ``(n,)`` to features ``(n, d)`` in
    ``[0, 1]^d``; ``covariates(n)`` returns the first ``n`` covariates and must be
    prefix-consistent.
    """

    basis: Callable[[np.ndarray], np.ndarray]
    covariates: Callable[[int], np.ndarray]
    beta: float
    d: int
    description: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise DomainError(f"noise precision beta must be finite and positive, got {self.beta}")
        if self.d < 1:
            raise DomainError("basis dimension must be positive")

    def features(self, n) -> np.ndarray:
        x = np.asarray(self.covariates(n))
        if x.shape[0] < n:
            raise DomainError(f"covariate stream exhausted after {x.shape[0]} values")
        phi = np.asarray(self.basis(x[:n]), dtype=float).reshape(n, self.d)
        if phi.size and (phi.min() < 0 or phi.max() > 1):
            raise DomainError("basis values must lie in [0, 1]")
        return phi


def polynomial_basis(degree):
    """``Phi(x) = (1, x, ..., x^degree)`` for covariates in [0, 1]."""
    powers = np.arange(degree + 1)
    return lambda x: np.asarray(x, dtype=float)[:, None] ** powers[None, :]


def constant_basis():
    return lambda x: np.ones((np.size(x), 1))


def indicator_basis(d):
    """``Phi(x) = e_{x mod d}`` for integer covariates."""
    return lambda x: np.eye(d)[np.asarray(x, dtype=np.int64) % d]


def uniform_covariates(seed):
    """Seeded i.i.d. Uniform[0, 1] covariates (prefix-consistent)."""
    return lambda n: stream(seed, 0).random(n)


def index_covariates():
    """``x_t = t - 1`` for t = 1, 2, ..."""
    return lambda n: np.arange(n)


def fixed_covariates(values):
    values = np.asarray(values, dtype=float)
    return lambda n: values[:n]


def make_side_info(basis, covariates, beta, d, description=None):
    return SideInfo(basis, covariates, float(beta), int(d), description or {})


class LinearRegression(SequentialSource):
    """Targets ``y_t ~ N(theta^T Phi(x_t), 1/beta)`` given a fixed covariate stream."""

    kind = "linreg"
    alphabet_size = None

    def __init__(self, side: SideInfo, theta):
        theta = _vector(theta)
        if theta.size != side.d:
            raise DomainError(f"theta has dimension {theta.size}, basis has {side.d}")
        self.side = side
        self.beta = side.beta
        self._theta = theta
        self.d = theta.size
        self._cache = np.empty((0, self.d))

    @property
    def theta(self):
        return self._theta.copy()

    def with_theta(self, theta):
        return LinearRegression(self.side, theta)

    def features(self, n):
        if self._cache.shape[0] < n:
            self._cache = self.side.features(max(n, 2 * self._cache.shape[0]))
        return self._cache[:n]

    def means(self, n):
        return self.features(n) @ self._theta

    def log_density(self, seqs):
        y, single = _batch(np.asarray(seqs, dtype=float))
        n = y.shape[1]
        resid = y - self.means(n)[None, :]
        out = 0.5 * n * np.log(self.beta / (2 * np.pi)) - 0.5 * self.beta * np.sum(resid**2, axis=1)
        return _unbatch(out, single)

    def cond_logprob(self, history, y):
        t = len(history)
        mean = self.features(t + 1)[t] @ self._theta
        return float(0.5 * np.log(self.beta / (2 * np.pi)) - 0.5 * self.beta * (y - mean) ** 2)

    def sample(self, n, rng, size=None):
        shape = (n,) if size is None else (size, n)
        return self.means(n) + rng.standard_normal(shape) / np.sqrt(self.beta)

    def divergence(self, other, n):
        diff = self.features(n) @ (self._theta - other.theta)
        return 0.5 * self.beta * float(diff @ diff)

    def spec(self):
        return {"kind": self.kind, "theta": self._theta.tolist(), "beta": self.beta,
                "side": self.side.description}


def geometric_schedule(base):
    """``a_t = base ** t``; overflows to ``inf`` are allowed."""
    def schedule(ts):
        with np.errstate(over="ignore"):
            return np.power(float(base), np.asarray(ts, dtype=float))
    return schedule


def constant_schedule(value):
    return lambda ts: np.full(np.shape(ts), float(value))


def _as_schedule(schedule):
    if callable(schedule):
        return schedule
    table = np.asarray(schedule, dtype=float)

    def lookup(ts):
        ts = np.asarray(ts, dtype=np.int64)
        if ts.size and ts.max() > table.size:
            raise DomainError(f"schedule only defines a_1..a_{table.size}")
        return table[ts - 1]
    return lookup


class Counterexample(BinaryKernel, SequentialSource):
    """Binary source with ``P(1 | omega_<t) = min{1, theta + a_t (theta - 1/2)^2}``.

    The conditional depends on the time index only. ``schedule`` maps an array
    of times ``t >= 1`` to ``a_t >= 0`` (a callable or a table ``a_1, a_2, ...``).
    """

    kind = "counterexample"
    d = 1

    def __init__(self, theta, schedule, description=None):
        theta = _vector(theta)
        if theta.size != 1 or not 0 <= theta[0] <= 1:
            raise DomainError(f"theta must be a scalar in [0, 1], got {theta.tolist()}")
        self._theta = theta
        self.schedule = _as_schedule(schedule)
        self.description = description or {}

    @property
    def theta(self):
        return self._theta.copy()

    def with_theta(self, theta):
        return Counterexample(theta, self.schedule, self.description)

    def prob_one_grid(self, thetas, ts):
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        a = np.asarray(self.schedule(np.asarray(ts)), dtype=float)
        if np.any(a < 0) or np.any(np.isnan(a)):
            raise DomainError("schedule values a_t must be nonnegative")
        dev2 = (thetas - 0.5) ** 2
        with np.errstate(invalid="ignore", over="ignore"):
            bump = np.where(dev2[:, None] == 0, 0.0, a[None, :] * dev2[:, None])
        q = np.minimum(1.0, thetas[:, None] + bump)
        return np.clip(q, EPS_P, 1 - EPS_P)

    def spec(self):
        return {"kind": self.kind, "theta": self._theta.tolist(), "schedule": self.description}


class FlatFamily(BinaryKernel, SequentialSource):
    """I.i.d. Bernoulli with ``P(1) = 1/2 + (theta - theta0)^(k/2)``.

    All derivatives of the normalised divergence of order below ``k`` vanish
    at ``theta0``; near it ``f_n(theta0 + u) = -1/2 ln(1 - 4 u^k)``.
    """

    kind = "flat"
    d = 1

    def __init__(self, theta, theta0, k):
        if int(k) != k or k % 2 or k < 4:
            raise DomainError(f"k must be an even integer >= 4, got {k}")
        theta = _vector(theta)
        if theta.size != 1:
            raise DomainError("flat family is one-dimensional")
        self.k = int(k)
        self.theta0 = float(theta0)
        raw = 0.5 + (theta[0] - self.theta0) ** (self.k // 2)
        if not 0 < raw < 1:
            raise DomainError(f"theta={theta[0]} leaves the region where P(1) is a probability")
        self._theta = theta

    @property
    def theta(self):
        return self._theta.copy()

    def with_theta(self, theta):
        return FlatFamily(theta, self.theta0, self.k)

    def prob_one_grid(self, thetas, ts):
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        q = np.clip(0.5 + (thetas - self.theta0) ** (self.k // 2), EPS_P, 1 - EPS_P)
        return np.broadcast_to(q[:, None], (q.size, np.size(ts))).copy()

    def iid_probs(self):
        q = self._q(1)[0]
        return np.array([1.0 - q, q])

    def spec(self):
        return {"kind": self.kind, "theta": self._theta.tolist(), "theta0": self.theta0, "k": self.k}


class CountableFamily:
    """Finite list of fixed sources with a discrete prior mass."""

    kind = "countable"
    d = 0

    def __init__(self, members: Sequence[SequentialSource], mass):
        members = list(members)
        if not members:
            raise DomainError("countable family needs at least one member")
        mass = np.asarray(mass, dtype=float)
        if mass.shape != (len(members),):
            raise DomainError(f"mass has shape {mass.shape}, expected ({len(members)},)")
        if np.any(mass <= 0) or abs(mass.sum() - 1.0) > 1e-12:
            raise DomainError(f"mass must be positive and sum to 1, got {mass.tolist()}")
        sizes = {m.alphabet_size for m in members}
        if len(sizes) != 1 or None in sizes:
            raise DomainError("members must share one finite alphabet")
        self.members = members
        self.mass = mass
        self.log_mass = np.log(mass)
        self.alphabet_size = sizes.pop()

    def __len__(self):
        return len(self.members)

    def member(self, i) -> SequentialSource:
        return self.members[i]

    def spec(self):
        return {"kind": self.kind, "members": [m.spec() for m in self.members],
                "mass": self.mass.tolist()}


def make_categorical(theta) -> Categorical:
    return Categorical(theta)


def make_markov(transition, initial_state=0) -> MarkovChain:
    return MarkovChain(transition, initial_state)


def make_linreg(side: SideInfo, theta) -> LinearRegression:
    return LinearRegression(side, theta)


def make_counterexample(theta, a_schedule, description=None) -> Counterexample:
    return Counterexample(theta, a_schedule, description)


def make_flat_family(theta, theta0, k) -> FlatFamily:
    return FlatFamily(theta, theta0, k)


def make_countable(members, mass) -> CountableFamily:
    return CountableFamily(members, mass)


def sample_sequence(source: SequentialSource, n, seed):
    """One sequence of length ``n``, deterministic in ``seed``."""
    if n < 1:
        raise DomainError("horizon n must be at least 1")
    return source.sample(n, stream(seed, 0))
