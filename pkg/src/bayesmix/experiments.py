"""Run configured experiments: redundancy series, bounds, gaps, counterexample."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from . import families as fam
from .bounds import BoundReport, GapReport, bound_countable, bound_higher_order, bound_thm1, bound_thm3, gap_report
from .config import Experiment, ExperimentConfig
from .errors import ConfigurationError
from .fisher import (
    categorical_fisher,
    finite_diff_fisher,
    lambda_n,
    linreg_fisher,
    markov_fisher,
    markov_fisher_det,
    spectral_norm,
    structured_det,
)
from .redundancy import RedundancyEstimate, redundancy_series

CSV_COLUMNS = ("n", "D_n", "std_error", "method", "bound_total", "gap")


def fmt(x) -> str:
    """12 significant digits, the output precision of every report."""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def information_matrix(source, n) -> np.ndarray:
    """``I_n(theta0)`` from the closed form when one exists, else the finite-difference oracle."""
    if isinstance(source, fam.Categorical):
        return categorical_fisher(source.theta).matrix
    if isinstance(source, fam.MarkovChain):
        return markov_fisher(source.transition).matrix
    if isinstance(source, fam.LinearRegression):
        return linreg_fisher(source.side, n).matrix
    return finite_diff_fisher(source, n).matrix


def information_det(source, n) -> float:
    if isinstance(source, fam.Categorical):
        return structured_det(source.theta)
    if isinstance(source, fam.MarkovChain):
        return markov_fisher_det(source.transition)
    return float(np.linalg.det(information_matrix(source, n)))


class BoundBuilder:
    def __init__(self, exp: Experiment):
        self.exp = exp
        self.spec = exp.cfg.bound
        self._lambda = {}

    def lambda_for(self, n):
        if self.spec.lambda_n is not None:
            return self.spec.lambda_n
        if n not in self._lambda:
            self._lambda[n] = lambda_n(self.exp.source, self.spec.k, n).value
        return self._lambda[n]

    def __call__(self, n) -> BoundReport:
        exp, spec = self.exp, self.spec
        if spec.variant == "countable":
            return bound_countable(math.exp(exp.ln_w0), n)
        src, d = exp.source, exp.d
        if spec.variant == "thm1":
            return bound_thm1(exp.ln_w0, d, n, information_det(src, n))
        if spec.variant == "thm3":
            return bound_thm3(exp.ln_w0, d, n, spectral_norm(information_matrix(src, n)), spec.epsilon)
        if spec.variant == "thm3-matrix":
            return bound_thm3(exp.ln_w0, d, n, epsilon=spec.epsilon, matrix=information_matrix(src, n))
        if spec.variant == "higher-order":
            return bound_higher_order(exp.ln_w0, d, spec.k, n, self.lambda_for(n))
        raise ConfigurationError(f"unknown bound variant {spec.variant!r}")


@dataclass
class RedundancyRun:
    estimates: list[RedundancyEstimate]
    bounds: list[BoundReport]
    gap: GapReport
    slope_ok: bool
    monotone_ok: bool

    @property
    def trend_ok(self):
        return self.slope_ok and self.monotone_ok

    def csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(CSV_COLUMNS) + "\n")
        for e, b, g in zip(self.estimates, self.bounds, self.gap.gaps):
            out.write(",".join(fmt(v) for v in (e.n, e.value, e.std_error, e.method, b.total, g)) + "\n")
        return out.getvalue()


def estimate_series(cfg: ExperimentConfig, exp: Experiment | None = None) -> list[RedundancyEstimate]:
    exp = exp or Experiment(cfg)
    return redundancy_series(exp.source, exp.mixture(), exp.grid, cfg.method.kind, cfg.method.samples,
                             cfg.seed, cfg.threads)


def bound_series(cfg: ExperimentConfig, exp: Experiment | None = None) -> list[BoundReport]:
    exp = exp or Experiment(cfg)
    builder = BoundBuilder(exp)
    return [builder(n) for n in exp.grid]


def run_redundancy(cfg: ExperimentConfig) -> RedundancyRun:
    exp = Experiment(cfg)
    if len(exp.grid) < 3:
        raise ConfigurationError("redundancy runs need at least 3 grid points")
    estimates = estimate_series(cfg, exp)
    bounds = bound_series(cfg, exp)
    report = gap_report(estimates, bounds)
    lo_hi = cfg.trend.slope_range
    slope_ok = lo_hi is None or lo_hi[0] <= report.slope <= lo_hi[1]
    monotone_ok = report.monotone_tail or not cfg.trend.require_monotone_gap
    return RedundancyRun(estimates, bounds, report, slope_ok, monotone_ok)


@dataclass
class CounterexampleRun:
    estimates: list[RedundancyEstimate]
    statistic: list[float]
    flag: str

    def csv(self) -> str:
        out = io.StringIO()
        out.write("n,D_n,std_error,method,statistic\n")
        for e, s in zip(self.estimates, self.statistic):
            out.write(",".join(fmt(v) for v in (e.n, e.value, e.std_error, e.method, s)) + "\n")
        return out.getvalue()


def divergence_flag(statistic, tail=4) -> str:
    """``diverging`` if strictly increasing with total rise >= 1 nat,
    ``converging`` if nonincreasing over the last ``tail`` points."""
    s = np.asarray(statistic)
    if np.all(np.diff(s) > 0) and s[-1] - s[0] >= 1.0:
        return "diverging"
    if np.all(np.diff(s[-tail:]) <= 0):
        return "converging"
    return "inconclusive"


def run_counterexample(cfg: ExperimentConfig) -> CounterexampleRun:
    exp = Experiment(cfg)
    if exp.d != 1:
        raise ConfigurationError("the counterexample statistic is defined for 1-d families")
    if len(exp.grid) < 3:
        raise ConfigurationError("counterexample runs need at least 3 grid points")
    estimates = estimate_series(cfg, exp)
    stat = [e.value - 0.5 * math.log(e.n / (2 * math.pi)) for e in estimates]
    return CounterexampleRun(estimates, stat, divergence_flag(stat))
