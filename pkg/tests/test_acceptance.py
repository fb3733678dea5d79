"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are written
to the terminal even when output capture is on.
"""

import math
import time

import numpy as np
import pytest

from bayesmix import bounds, coder, fisher
from bayesmix import families as fam
from bayesmix import mixtures as mix
from bayesmix import priors as pri
from bayesmix import redundancy as red
from bayesmix._rng import stream
from bayesmix.config import Experiment, load_config, parse_config
from bayesmix.experiments import bound_series, estimate_series, run_counterexample


@pytest.fixture
def verdict(capsys):
    """Print one verdict line, then fail the test if the criterion failed."""
    start = time.perf_counter()

    def report(name, passed, detail, budget):
        elapsed = time.perf_counter() - start
        ok = bool(passed) and elapsed < budget
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail} [{elapsed:.1f}s of {budget:.0f}s]")
        assert passed, detail
        assert elapsed < budget, f"runtime {elapsed:.1f}s exceeds {budget}s"

    return report


def _slope(ns, values):
    return bounds.ols_slope(np.log(np.asarray(ns, dtype=float)), values)


def _random_simplex(rng, d, floor):
    while True:
        p = rng.dirichlet(np.ones(d + 1))
        if p.min() >= floor:
            return p[:-1]


def test_c1_kt_bernoulli_tightness(verdict):
    src, m = fam.make_categorical([0.5]), mix.DirichletMixture(2)
    ns = [2**i for i in range(4, 13)]
    D = np.array([red.exact_redundancy_counts(src, m, n).value for n in ns])
    g = np.array([d - 0.5 * math.log(n / (2 * math.pi)) - 0.5 * math.log(4) for d, n in zip(D, ns)])
    slope = _slope(ns, D)
    slope_ok = 0.45 <= slope <= 0.55
    tail_ok = bool(np.all(np.diff(g[-5:]) <= 0))
    size_ok = abs(g[-1]) <= min(abs(g[ns.index(64)]), 0.1)
    abs_tail = bool(np.all(np.diff(np.abs(g[-5:])) <= 0))
    detail = (f"slope {slope:.6f}; g nonincreasing over last 5: {tail_ok} "
              f"(g = {', '.join(f'{x:.10f}' for x in g[-5:])}); |g_4096| <= min(|g_64|, 0.1): {size_ok}; "
              f"info: |g| nonincreasing over last 5: {abs_tail}")
    verdict("C1 KT/Bernoulli tightness", slope_ok and tail_ok and size_ok, detail, 10)


def test_c2_oracle_equivalence(verdict):
    cases = {
        "Bernoulli(0.3)": (fam.make_categorical([0.3]), lambda: mix.DirichletMixture(2)),
        "Bernoulli(0.5)": (fam.make_categorical([0.5]), lambda: mix.DirichletMixture(2)),
        "categorical(1/3,1/3)": (fam.make_categorical([1 / 3, 1 / 3]), lambda: mix.DirichletMixture(3)),
        "Markov uniform": (fam.make_markov([[0.5, 0.5], [0.5, 0.5]]), lambda: mix.MarkovMixture(2)),
        "Markov 0.9/0.1": (fam.make_markov([[0.9, 0.1], [0.1, 0.9]]), lambda: mix.MarkovMixture(2)),
    }
    worst_exact, worst_z, failures = 0.0, 0.0, []
    for i, (name, (src, factory)) in enumerate(cases.items()):
        for j, n in enumerate((2, 4, 8, 10)):
            a = red.exact_redundancy_enumeration(src, factory(), n).value
            b = red.exact_redundancy_counts(src, factory(), n).value
            e = red.mc_redundancy(src, factory(), n, 100_000, seed=1000 * i + j)
            z = abs(e.value - a) / e.std_error
            worst_exact, worst_z = max(worst_exact, abs(a - b)), max(worst_z, z)
            if abs(a - b) > 1e-10 or z > 3:
                failures.append(f"{name} n={n}")
    detail = (f"20 instances; max |enumeration - counts| = {worst_exact:.2e}; "
              f"max |MC - exact| / SE = {worst_z:.2f}; failures: {failures or 'none'}")
    verdict("C2 oracle equivalence", not failures, detail, 60)


def test_c3_fisher_oracles(verdict):
    rng = stream(3, 0)
    worst_fd, worst_det = 0.0, 0.0
    for _ in range(100):
        theta = _random_simplex(rng, int(rng.integers(1, 5)), 0.01)
        closed = fisher.categorical_fisher(theta).matrix
        fd = fisher.finite_diff_fisher(fam.make_categorical(theta), 1).matrix
        worst_fd = max(worst_fd, float(np.max(np.abs(fd - closed))))
        s, lu = fisher.structured_det(theta), fisher.det(closed)
        worst_det = max(worst_det, abs(s - lu) / abs(lu))
    worst_markov = 0.0
    for _ in range(10):
        a, b = rng.uniform(0.1, 0.9, 2)
        P = np.array([[1 - a, a], [b, 1 - b]])
        fd_det = fisher.finite_diff_fisher(fam.make_markov(P), 512).det()
        worst_markov = max(worst_markov, abs(fd_det / fisher.markov_fisher_det(P) - 1))
    worst_ratio = 0.0
    for i in range(100):
        d = int(rng.integers(1, 6))
        beta = float(rng.uniform(0.1, 5))
        basis = [fam.polynomial_basis(d - 1), fam.indicator_basis(d)][i % 2]
        cov = fam.uniform_covariates(i) if i % 2 == 0 else fam.fixed_covariates(rng.integers(0, d, 64).tolist())
        side = fam.make_side_info(basis, cov, beta, d)
        worst_ratio = max(worst_ratio, fisher.linreg_fisher(side, 64).spectral_norm() / (d * beta))
    passed = worst_fd <= 1e-3 and worst_det <= 1e-3 and worst_markov <= 0.05 and worst_ratio <= 1 + 1e-12
    detail = (f"categorical max |FD - closed| = {worst_fd:.2e}; structured det max rel err = {worst_det:.2e}; "
              f"Markov n=512 max rel err = {worst_markov:.4f}; linreg max spec/(d beta) = {worst_ratio:.4f}")
    verdict("C3 Fisher oracles", passed, detail, 120)


def test_c4_markov_rate(verdict):
    cfg = load_config("markov_uniform")
    est = estimate_series(cfg)
    ns = [e.n for e in est]
    slope = _slope(ns, [e.value for e in est])
    detail = (f"n = {ns[0]}..{ns[-1]}, S = {est[0].samples}, slope {slope:.4f} "
              f"(D_n = {', '.join(f'{e.value:.3f}' for e in est)})")
    verdict("C4 Markov rate", 0.85 <= slope <= 1.15, detail, 300)


def test_c5_regression_closed_form(verdict):
    cfg = load_config("linreg")
    exp = Experiment(cfg)
    ns = exp.grid
    worst = 0.0
    for n in ns:
        closed = red.gaussian_regression_redundancy(exp.source, exp.mixture(), n).value
        steps = red.gaussian_regression_steps(exp.source, exp.mixture(), n).total
        worst = max(worst, abs(closed - steps))
    est = estimate_series(cfg, exp)
    reports = bound_series(cfg, exp)
    limit = -exp.ln_w0 + 0.5
    gaps = [e.value - (b.total - b.prior_term) for e, b in zip(est, reports) if e.n >= 256]
    detail = (f"d = {exp.d}, max |closed - per-step| = {worst:.2e}; "
              f"max gap for n >= 256 = {max(gaps):.4f} <= ln 1/w + 0.5 = {limit:.4f}")
    verdict("C5 regression closed form", worst <= 1e-8 and max(gaps) <= limit, detail, 10)


def test_c6_counterexample_divergence(verdict):
    base = load_config("counterexample").model_dump()
    fast = run_counterexample(parse_config({**base, "trend": {}}))
    s = np.array(fast.statistic)
    flat_raw = {**base, "trend": {},
                "family": {"kind": "counterexample", "theta": 0.5, "schedule": "constant", "a": 0.0}}
    flat = np.array(run_counterexample(parse_config(flat_raw)).statistic)
    increasing = bool(np.all(np.diff(s) > 0))
    rise = s[-1] - s[0]
    settled = bool(np.all(np.diff(flat[-4:]) <= 0))
    detail = (f"a_n = 4^n: strictly increasing {increasing}, rise {rise:.3f} nats "
              f"({s[0]:.3f} -> {s[-1]:.3f}); a_n = 0: nonincreasing over last 4 {settled} "
              f"({', '.join(f'{x:.4f}' for x in flat[-4:])})")
    verdict("C6 counterexample divergence", increasing and rise >= 1 and settled, detail, 300)


def test_c7_higher_order_rate(verdict):
    cfg = load_config("flat_k4")
    exp = Experiment(cfg)
    est = estimate_series(cfg, exp)
    ns = [e.n for e in est]
    slope = _slope(ns, [e.value for e in est])
    lam = fisher.lambda_n(exp.source, 4, 64).value
    detail = f"n = {ns[0]}..{ns[-1]} ({est[0].method}), slope {slope:.4f}; Lambda_n = {lam:.4f}"
    verdict("C7 higher-order rate", 0.18 <= slope <= 0.32 and abs(lam / 48 - 1) <= 0.02, detail, 120)


def test_c8_countable_bound(verdict):
    family = fam.make_countable([fam.make_categorical([1 / 3]), fam.make_categorical([2 / 3])], [0.5, 0.5])
    truth = family.member(0)
    m = mix.CountableMixture(family)
    exact = [red.exact_redundancy_enumeration(truth, m, n).value for n in range(1, 21)]
    e = red.mc_redundancy(truth, m, 1000, 10_000, seed=8)
    d1 = (1 / 3) * math.log(2 / 3) + (2 / 3) * math.log(4 / 3)
    passed = max(exact) <= math.log(2) and e.value <= math.log(2) + 3 * e.std_error and abs(exact[0] - d1) <= 1e-10
    detail = (f"max exact D_n (n <= 20) = {max(exact):.6f} <= ln 2; MC D_1000 = {e.value:.4f} +- {e.std_error:.4f}; "
              f"D_1 = {exact[0]:.12f}")
    verdict("C8 countable bound", passed, detail, 30)


def test_c9_coder(verdict):
    factories = [
        lambda: mix.DirichletMixture(2),
        lambda: mix.DirichletMixture(4),
        lambda: mix.MarkovMixture(2, 0),
        lambda: mix.MarkovMixture(3, 2),
        lambda: mix.CountableMixture(fam.make_countable(
            [fam.make_categorical([1 / 3]), fam.make_categorical([2 / 3])], [0.5, 0.5])),
        lambda: mix.QuadratureMixture(fam.make_flat_family(0.5, 0.5, 4), pri.UniformPrior(), 32),
        lambda: mix.SourcePredictor(fam.make_categorical([0.1, 0.2, 0.3])),
    ]
    sizes = [f().alphabet_size for f in factories]
    rng = stream(9, 0)
    lossless, within, worst = 0, 0, -math.inf
    cases = 10_000
    for i in range(cases):
        j = i % len(factories)
        seq = rng.integers(0, sizes[j], int(rng.integers(0, 48))).tolist()
        res = coder.encode_detailed(factories[j], seq)
        lossless += coder.decode(factories[j], res.stream.to_bytes()) == seq
        excess = res.stream.bit_length - math.ceil(res.quantized_log2)
        within += excess <= 2
        worst = max(worst, excess)
    src, kt = fam.make_categorical([0.5]), (lambda: mix.DirichletMixture(2))
    D = red.exact_redundancy_counts(src, kt(), 1024).value / math.log(2)
    rep = coder.codelength_report(src, kt, 1024, samples=200, seed=9)
    window = (D - 0.5, D + 2.5)
    passed = lossless == cases and within == cases and window[0] <= rep.mean_overhead_bits <= window[1]
    detail = (f"lossless {lossless}/{cases}; length bound {within}/{cases} (max excess {worst} bits); "
              f"overhead {rep.mean_overhead_bits:.3f} bits in [{window[0]:.3f}, {window[1]:.3f}]")
    verdict("C9 coder", passed, detail, 120)


def test_c10_concentration_and_norms(verdict):
    rng = stream(10, 0)
    conc = []
    for i in range(50):
        d = int(rng.integers(1, 6))
        B = rng.standard_normal((d, d))
        Sigma = B @ B.T + 0.1 * np.eye(d)
        conc.append(bounds.normal_concentration_check(d, Sigma, 4.0 * d, 100_000, seed=i).passed)
    norm_ok, squared_ok, squared_applicable = 0, 0, 0
    for _ in range(1000):
        d = int(rng.integers(1, 6))
        A = (lambda M: M @ M.T + 1e-3 * np.eye(d))(rng.standard_normal((d, d)))
        Bm = (lambda M: M @ M.T + 1e-3 * np.eye(d))(rng.standard_normal((d, d)))
        x = rng.standard_normal(d)
        sb = fisher.spectral_norm(Bm)
        first = fisher.norm_sq(x) <= fisher.norm_sq(x, A) * fisher.spectral_norm(np.linalg.inv(A)) * (1 + 1e-10)
        second = fisher.norm_sq(x, Bm) <= fisher.norm_sq(x) * sb * (1 + 1e-10)
        norm_ok += first and second
        if sb >= 1:
            squared_applicable += 1
            squared_ok += fisher.norm_sq(x, Bm) <= fisher.norm_sq(x) * sb**2 * (1 + 1e-10)
    grid = np.unique(np.geomspace(1, 1e6, 20).astype(int))
    grid = np.concatenate([grid, np.arange(2, 2 + 20 - grid.size)]) if grid.size < 20 else grid
    diff = max(abs(bounds.bound_higher_order(-0.4, 1, 2, int(n), 4.0).total
                   - bounds.bound_thm1(-0.4, 1, int(n), 4.0).total) for n in grid)
    passed = all(conc) and norm_ok == 1000 and squared_ok == squared_applicable and diff <= 1e-12
    detail = (f"concentration {sum(conc)}/50; norm inequalities {norm_ok}/1000 "
              f"(squared form {squared_ok}/{squared_applicable} where spec(B) >= 1); "
              f"max |k=2 - quadratic| = {diff:.1e} on {len(grid)} points")
    verdict("C10 concentration, norm inequalities, k=2 consistency", passed, detail, 60)
