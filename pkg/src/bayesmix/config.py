"""Experiment configuration (JSON, unknown keys rejected) and object builders."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import families as fam
from . import priors as pri
from .errors import BayesMixError, ConfigurationError
from .mixtures import MixturePredictor, QuadratureMixture, build_mixture

CONFIG_DIR = Path(__file__).parent / "configs"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CategoricalSpec(_Strict):
    kind: Literal["categorical"]
    theta: list[float]


class MarkovSpec(_Strict):
    kind: Literal["markov"]
    transition: list[list[float]]
    initial_state: int = 0


class LinRegSpec(_Strict):
    kind: Literal["linreg"]
    basis: Literal["polynomial", "constant", "indicator"] = "polynomial"
    degree: int = 1
    covariates: Literal["uniform", "index", "fixed"] = "uniform"
    covariate_values: list[float] | None = None
    covariate_seed: int = 0
    beta: float
    theta: list[float]


class CounterexampleSpec(_Strict):
    kind: Literal["counterexample"]
    theta: float = 0.5
    schedule: Literal["geometric", "constant"]
    # a_n = a**n for "geometric", a_n = a for "constant"
    a: float


class FlatSpec(_Strict):
    kind: Literal["flat"]
    theta0: float = 0.5
    k: int = 4
    theta: float | None = None


class CountableSpec(_Strict):
    kind: Literal["countable"]
    members: list[list[float]]
    mass: list[float]
    truth: int = 0


FamilySpec = Annotated[
    Union[CategoricalSpec, MarkovSpec, LinRegSpec, CounterexampleSpec, FlatSpec, CountableSpec],
    Field(discriminator="kind"),
]


class PriorSpec(_Strict):
    kind: Literal["jeffreys", "dirichlet", "product-dirichlet", "gaussian", "uniform", "none"]
    alpha: float = 0.5
    mean: list[float] | None = None
    cov: list[list[float]] | None = None
    low: float = 0.0
    high: float = 1.0


class GridSpec(_Strict):
    start: int = 16
    factor: float = 2.0
    count: int = 9
    values: list[int] | None = None

    def horizons(self) -> list[int]:
        if self.values is not None:
            ns = [int(v) for v in self.values]
        else:
            ns = [int(round(self.start * self.factor**i)) for i in range(self.count)]
        if any(n < 1 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigurationError(f"n-grid must be positive and strictly increasing, got {ns}")
        return ns


class MethodSpec(_Strict):
    kind: Literal["auto", "enumeration", "counts-exact", "monte-carlo", "closed-form"] = "auto"
    samples: int = 10_000


class BoundSpec(_Strict):
    variant: Literal["thm1", "thm3", "thm3-matrix", "higher-order", "countable"] = "thm1"
    epsilon: float = 0.1
    k: int = 2
    # measured with the finite-difference functional when omitted
    lambda_n: float | None = None


class QuadratureSpec(_Strict):
    grid: int = 2048
    nodes: Literal["auto", "linear", "arcsine"] = "auto"


class OutputSpec(_Strict):
    csv: str = "redundancy.csv"
    gap: str = "gap.json"
    bounds: str = "bounds.json"


class TrendSpec(_Strict):
    slope_range: tuple[float, float] | None = None
    require_monotone_gap: bool = False
    expect: Literal["diverging", "converging"] | None = None


class ExperimentConfig(_Strict):
    name: str = "experiment"
    family: FamilySpec
    prior: PriorSpec = PriorSpec(kind="none")
    grid: GridSpec = GridSpec()
    method: MethodSpec = MethodSpec()
    bound: BoundSpec = BoundSpec()
    quadrature: QuadratureSpec = QuadratureSpec()
    trend: TrendSpec = TrendSpec()
    output: OutputSpec = OutputSpec()
    seed: int = Field(0, ge=0, lt=2**64)
    threads: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _validate_grid(self):
        self.grid.horizons()
        return self


def load_config(path, seed=None, threads=None) -> ExperimentConfig:
    """Parse and validate a config file; any problem becomes a ConfigurationError."""
    path = Path(path)
    if not path.exists():
        for bundled in (CONFIG_DIR / path, CONFIG_DIR / f"{path}.json"):
            if bundled.exists():
                path = bundled
                break
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw, seed, threads)


def parse_config(raw: dict, seed=None, threads=None) -> ExperimentConfig:
    if seed is not None:
        raw = {**raw, "seed": seed}
    if threads is not None:
        raw = {**raw, "threads": threads}
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc
    # build once so parameter-domain errors surface before any run
    try:
        Experiment(cfg)
    except BayesMixError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid parameters: {exc}") from exc
    return cfg


def bundled_configs() -> list[str]:
    return sorted(p.name for p in CONFIG_DIR.glob("*.json"))


def _build_source(spec):
    if isinstance(spec, CategoricalSpec):
        return fam.make_categorical(spec.theta)
    if isinstance(spec, MarkovSpec):
        return fam.make_markov(np.asarray(spec.transition), spec.initial_state)
    if isinstance(spec, LinRegSpec):
        d = len(spec.theta)
        basis = {"polynomial": lambda: fam.polynomial_basis(spec.degree),
                 "constant": fam.constant_basis,
                 "indicator": lambda: fam.indicator_basis(d)}[spec.basis]()
        if spec.covariates == "uniform":
            cov = fam.uniform_covariates(spec.covariate_seed)
        elif spec.covariates == "index":
            cov = fam.index_covariates()
        else:
            if spec.covariate_values is None:
                raise ConfigurationError("fixed covariates need covariate_values")
            cov = fam.fixed_covariates(spec.covariate_values)
        side = fam.make_side_info(basis, cov, spec.beta, d, spec.model_dump())
        return fam.make_linreg(side, spec.theta)
    if isinstance(spec, CounterexampleSpec):
        a = spec.a
        schedule = fam.geometric_schedule(a) if spec.schedule == "geometric" else fam.constant_schedule(a)
        return fam.make_counterexample(spec.theta, schedule, spec.model_dump())
    if isinstance(spec, FlatSpec):
        theta = spec.theta0 if spec.theta is None else spec.theta
        return fam.make_flat_family(theta, spec.theta0, spec.k)
    if isinstance(spec, CountableSpec):
        members = [fam.make_categorical(m) for m in spec.members]
        family = fam.make_countable(members, spec.mass)
        if not 0 <= spec.truth < len(members):
            raise ConfigurationError(f"truth index {spec.truth} out of range")
        return family
    raise ConfigurationError(f"unknown family {spec!r}")


def _build_prior(spec: PriorSpec, source):
    d = getattr(source, "d", 0)
    if spec.kind == "none":
        return None
    if spec.kind == "jeffreys":
        if not isinstance(source, fam.Categorical):
            raise ConfigurationError("the closed-form Jeffreys prior is for categorical sources")
        return pri.jeffreys_categorical(d)
    if spec.kind == "dirichlet":
        return pri.DirichletPrior(d, spec.alpha)
    if spec.kind == "product-dirichlet":
        if not isinstance(source, fam.MarkovChain):
            raise ConfigurationError("product-Dirichlet priors are for Markov sources")
        return pri.ProductDirichletMarkov(source.n_states, spec.alpha)
    if spec.kind == "gaussian":
        mean = np.zeros(d) if spec.mean is None else spec.mean
        cov = np.eye(d) if spec.cov is None else spec.cov
        return pri.GaussianPrior(mean, cov)
    return pri.UniformPrior(spec.low, spec.high, d)


class Experiment:
    """Objects built from a config: the true source, prior and mixture."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.family = _build_source(cfg.family)
        if isinstance(self.family, fam.CountableFamily):
            self.source = self.family.member(cfg.family.truth)
            self.prior = None
            self.ln_w0 = float(self.family.log_mass[cfg.family.truth])
        else:
            self.source = self.family
            self.prior = _build_prior(cfg.prior, self.source)
            if self.prior is None:
                raise ConfigurationError("parametric families need a prior")
            self.ln_w0 = float(self.prior.log_density(self.source.theta))
        self.grid = cfg.grid.horizons()

    def mixture(self) -> MixturePredictor:
        if isinstance(self.family, fam.CountableFamily):
            return build_mixture(self.family)
        q = self.cfg.quadrature
        mixture = build_mixture(self.source, self.prior, q.grid)
        if isinstance(mixture, QuadratureMixture) and q.nodes != "auto":
            mixture = QuadratureMixture(self.source, self.prior, q.grid, q.nodes)
        return mixture

    @property
    def d(self):
        return getattr(self.source, "d", 0) if not isinstance(self.family, fam.CountableFamily) else 0

    def describe(self) -> dict:
        return {"name": self.cfg.name, "family": self.cfg.family.kind, "prior": self.cfg.prior.kind,
                "d": self.d, "ln_w0": self.ln_w0 if math.isfinite(self.ln_w0) else None}
