"""Fast invariant suite behind the ``check`` subcommand.

Each check returns a short detail string and raises AssertionError on failure.
"""

from __future__ import annotations

import math
import traceback
from dataclasses import dataclass

import numpy as np

from . import bounds, coder, fisher
from . import families as fam
from . import mixtures as mix
from . import priors as pri
from . import redundancy as red
from ._rng import stream


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _normalisation():
    rng = stream(1, 0)
    sources = [fam.make_categorical([0.2, 0.3]),
               fam.make_markov(np.array([[0.7, 0.3], [0.4, 0.6]])),
               fam.make_counterexample(0.6, fam.constant_schedule(1.0)),
               fam.make_flat_family(0.55, 0.5, 4)]
    worst = 0.0
    for s in sources:
        for _ in range(20):
            hist = rng.integers(0, s.alphabet_size, int(rng.integers(0, 12))).tolist()
            worst = max(worst, abs(float(np.sum(s.cond_probs(hist))) - 1.0))
    assert worst <= 1e-12, worst
    return f"max |sum p - 1| = {worst:.2e}"


def _kt_two_steps():
    v = red.exact_redundancy_enumeration(fam.make_categorical([0.5]), mix.DirichletMixture(2), 2).value
    assert abs(v - 0.5 * math.log(4 / 3)) <= 1e-12, v
    return f"D_2 = {v:.12g}"


def _oracle_chain():
    src = fam.make_categorical([0.3])
    m = mix.DirichletMixture(2)
    a = red.exact_redundancy_enumeration(src, m, 10).value
    b = red.exact_redundancy_counts(src, m, 10).value
    c = red.chain_rule_decomposition(src, m, 10).total
    assert abs(a - b) <= 1e-10 and abs(a - c) <= 1e-9, (a, b, c)
    return f"enumeration {a:.12g}, counts {b:.12g}, chain rule {c:.12g}"


def _markov_counts():
    src = fam.make_markov(np.array([[0.9, 0.1], [0.2, 0.8]]), 1)
    m = mix.MarkovMixture(2, 1)
    a = red.exact_redundancy_enumeration(src, m, 10).value
    b = red.exact_redundancy_counts(src, m, 10).value
    assert abs(a - b) <= 1e-10, (a, b)
    return f"|diff| = {abs(a - b):.2e}"


def _structured_det():
    theta = np.array([0.1, 0.25, 0.3])
    a = fisher.structured_det(theta)
    b = fisher.det(fisher.categorical_fisher(theta).matrix)
    assert abs(a - b) <= 1e-8 * a, (a, b)
    return f"{a:.12g} vs LU {b:.12g}"


def _fisher_oracle():
    src = fam.make_categorical([1 / 3, 1 / 3])
    fd = fisher.finite_diff_fisher(src, 1).matrix
    err = float(np.max(np.abs(fd - [[6, 3], [3, 6]])))
    assert err <= 1e-3, err
    return f"max error {err:.2e}"


def _stationary():
    pi = fisher.markov_stationary([[0.5, 0.5], [0.25, 0.75]])
    assert np.allclose(pi, [1 / 3, 2 / 3], atol=1e-12), pi
    return f"pi = {pi.tolist()}"


def _jeffreys_value():
    w = pri.jeffreys_categorical(1).density(0.5)
    assert abs(w - 2 / math.pi) <= 1e-12, w
    return f"w(1/2) = {w:.12g}"


def _bound_consistency():
    worst = 0.0
    for n in (10, 100, 1000):
        a = bounds.bound_higher_order(0.0, 1, 2, n, 4.0).total
        b = bounds.bound_thm1(0.0, 1, n, 4.0).total
        worst = max(worst, abs(a - b))
    assert worst <= 1e-12, worst
    return f"max |k=2 - quadratic| = {worst:.2e}"


def _thm3_dominance():
    rng = stream(2, 0)
    for _ in range(50):
        d = int(rng.integers(1, 6))
        B = rng.standard_normal((d, d))
        A = B @ B.T
        eps = float(rng.uniform(0.01, 2))
        lhs = bounds.bound_thm3(0.0, d, 10, epsilon=eps, matrix=A).information_term
        rhs = bounds.bound_thm3(0.0, d, 10, fisher.spectral_norm(A), eps).information_term
        assert lhs <= rhs + 1e-12, (lhs, rhs)
    return "50 random SPD matrices"


def _countable_bound():
    fam2 = fam.make_countable([fam.make_categorical([1 / 3]), fam.make_categorical([2 / 3])], [0.5, 0.5])
    m = mix.CountableMixture(fam2)
    worst = max(red.exact_redundancy_enumeration(fam2.member(0), m, n).value for n in range(1, 13))
    assert worst <= math.log(2), worst
    return f"max D_n (n <= 12) = {worst:.6g} <= ln 2"


def _coder_roundtrip():
    rng = stream(3, 0)
    for _ in range(50):
        k = int(rng.integers(2, 5))
        seq = rng.integers(0, k, int(rng.integers(0, 40))).tolist()
        factory = lambda k=k: mix.DirichletMixture(k)
        res = coder.encode_detailed(factory, seq)
        assert coder.decode(factory, res.stream.to_bytes()) == seq
        assert res.stream.bit_length <= math.ceil(res.quantized_log2) + 2
    return "50 random sequences"


def _concentration():
    r = bounds.normal_concentration_check(2, np.eye(2), 8.0, 20_000, seed=4)
    assert r.passed, r
    return f"coverage {r.coverage:.4f} >= {r.bound:.4f}"


CHECKS = [
    ("conditional probabilities sum to one", _normalisation),
    ("KT redundancy at n=2", _kt_two_steps),
    ("enumeration = counts = chain rule", _oracle_chain),
    ("two-state Markov counts path", _markov_counts),
    ("structured determinant vs LU", _structured_det),
    ("categorical Fisher vs finite differences", _fisher_oracle),
    ("stationary distribution", _stationary),
    ("Jeffreys density value", _jeffreys_value),
    ("k=2 higher-order bound equals quadratic bound", _bound_consistency),
    ("regularised log-det dominated by spectral form", _thm3_dominance),
    ("countable redundancy below ln 1/w", _countable_bound),
    ("coder roundtrip and length bound", _coder_roundtrip),
    ("normal concentration", _concentration),
]


def run_checks() -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        try:
            results.append(CheckResult(name, True, fn()))
        except Exception as exc:  # noqa: BLE001 - every failure is reported, not raised
            detail = f"{type(exc).__name__}: {exc}" or traceback.format_exc(limit=1)
            results.append(CheckResult(name, False, detail))
    return results
