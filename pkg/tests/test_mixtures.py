import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

from bayesmix import families as fam
from bayesmix import mixtures as mix
from bayesmix import priors as pri
from bayesmix._rng import stream
from bayesmix.errors import ConfigurationError, DomainError, NumericError


class TestDirichletPredictive:
    def test_prior_symmetry(self):
        assert mix.dirichlet_predictive([0, 0], 1) == pytest.approx(0.5)

    def test_counts_three_one(self):
        assert mix.dirichlet_predictive([3, 1], 1) == pytest.approx(0.3)

    def test_matches_posterior_quadrature(self):
        # Beta(1/2, 1/2) posterior after 3 zeros and 1 one
        num, _ = integrate.quad(lambda t: t * t * (1 - t) ** 3 / math.sqrt(t * (1 - t)), 0, 1)
        den, _ = integrate.quad(lambda t: t * (1 - t) ** 3 / math.sqrt(t * (1 - t)), 0, 1)
        assert mix.dirichlet_predictive([3, 1], 1) == pytest.approx(num / den, abs=1e-8)

    def test_ternary_uniform(self):
        for s in range(3):
            assert mix.dirichlet_predictive([0, 0, 0], s) == pytest.approx(1 / 3)

    def test_unknown_symbol(self):
        with pytest.raises(DomainError):
            mix.dirichlet_predictive([0, 0], 2)


class TestMarkovPredictive:
    def test_zero_counts(self):
        assert mix.markov_predictive(np.zeros((2, 2)), 0, 1) == pytest.approx(0.5)

    def test_row_counts(self):
        assert mix.markov_predictive([[4, 0], [0, 0]], 0, 0) == pytest.approx(0.9)

    def test_three_states(self):
        for k in range(3):
            assert mix.markov_predictive(np.zeros((3, 3)), 1, k) == pytest.approx(1 / 3)

    def test_invalid_state(self):
        with pytest.raises(DomainError):
            mix.markov_predictive(np.zeros((2, 2)), 2, 0)


class TestGaussianRegression:
    def _side(self, values):
        return fam.make_side_info(fam.constant_basis(), fam.fixed_covariates(values), 1.0, 1)

    def test_prior_predictive_variance(self):
        m = mix.GaussianRegressionMixture(self._side([0.3]), pri.GaussianPrior([0.0], [[1.0]]))
        mean, var = m.predictive()
        assert mean == pytest.approx(0.0)
        assert var == pytest.approx(2.0)

    def test_posterior_after_one_observation(self):
        m = mix.GaussianRegressionMixture(self._side([0.3, 0.3]), pri.GaussianPrior([0.0], [[1.0]]))
        m.update(0.0)
        assert m.posterior.mean[0] == pytest.approx(0.0)
        assert m.posterior.cov[0, 0] == pytest.approx(0.5)

    def test_joint_normal_oracle(self):
        side = fam.make_side_info(fam.polynomial_basis(1), fam.uniform_covariates(3), 2.0, 2)
        prior = pri.GaussianPrior([0.1, -0.2], [[1.0, 0.2], [0.2, 0.7]])
        n = 25
        y = stream(4, 0).standard_normal(n)
        m = mix.GaussianRegressionMixture(side, prior)
        m.feed(y)
        Phi = side.features(n)
        cov = np.eye(n) / 2.0 + Phi @ prior.cov @ Phi.T
        expected = stats.multivariate_normal(Phi @ prior.mean, cov).logpdf(y)
        assert m.log_marginal == pytest.approx(expected, abs=1e-8)
        assert m.log_marginal_batch(y[None, :])[0] == pytest.approx(expected, abs=1e-8)

    def test_rejects_non_pd_posterior(self):
        bad = mix.GaussianPosterior(np.zeros(1), np.array([[-1.0]]))
        with pytest.raises(NumericError):
            mix.linreg_posterior_update(bad, [1.0], 0.0, 1.0)


class TestQuadrature:
    def test_uniform_first_prediction(self):
        m = mix.QuadratureMixture(fam.make_categorical([0.5]), pri.UniformPrior(), 2048)
        assert m.predictive()[1] == pytest.approx(0.5, abs=1e-12)

    def test_too_few_nodes(self):
        with pytest.raises(ConfigurationError):
            mix.QuadratureMixture(fam.make_categorical([0.5]), pri.UniformPrior(), 8)

    def test_jeffreys_matches_kt(self):
        rng = stream(6, 0)
        for _ in range(20):
            seq = rng.integers(0, 2, int(rng.integers(1, 13))).tolist()
            q = mix.QuadratureMixture(fam.make_categorical([0.5]), pri.jeffreys_categorical(1), 2048)
            kt = mix.DirichletMixture(2)
            q.feed(seq)
            kt.feed(seq)
            assert q.log_marginal == pytest.approx(kt.log_marginal, abs=1e-6)

    def test_grid_refinement(self):
        seq = [0, 1, 1, 0, 1, 1, 1, 0, 1, 1]
        vals = []
        for g in (2048, 4096):
            m = mix.QuadratureMixture(fam.make_categorical([0.5]), pri.jeffreys_categorical(1), g)
            m.feed(seq)
            vals.append(m.log_marginal)
        assert abs(vals[0] - vals[1]) < 1e-7


class TestCountableMixture:
    def _family(self):
        return fam.make_countable([fam.make_categorical([1 / 3]), fam.make_categorical([2 / 3])], [0.5, 0.5])

    def test_first_symbol(self):
        assert mix.CountableMixture(self._family()).predictive()[1] == pytest.approx(0.5)

    def test_single_member(self):
        member = fam.make_categorical([0.2])
        m = mix.CountableMixture(fam.make_countable([member], [1.0]))
        seq = [0, 1, 1, 0, 0]
        m.feed(seq)
        assert m.log_marginal == pytest.approx(member.log_density(seq), abs=1e-12)

    def test_posterior_concentrates(self):
        m = mix.CountableMixture(self._family())
        m.feed(fam.sample_sequence(fam.make_categorical([1 / 3]), 200, 8).tolist())
        # member 0 has P(1) = 1/3
        assert m.posterior_weights()[0] > 0.99


PREDICTORS = [
    lambda: mix.DirichletMixture(2),
    lambda: mix.DirichletMixture(3),
    lambda: mix.MarkovMixture(2, 1),
    lambda: mix.QuadratureMixture(fam.make_flat_family(0.5, 0.5, 4), pri.UniformPrior(), 64),
    lambda: mix.CountableMixture(fam.make_countable(
        [fam.make_categorical([1 / 3]), fam.make_categorical([2 / 3])], [0.5, 0.5])),
]


class TestInvariants:
    @pytest.mark.parametrize("factory", PREDICTORS)
    def test_chain_rule(self, factory):
        rng = stream(12, 0)
        m = factory()
        seq = rng.integers(0, m.alphabet_size, 40).tolist()
        steps = [m.update(x) for x in seq]
        assert m.log_marginal == pytest.approx(math.fsum(steps), abs=1e-10)
        assert factory().log_marginal_batch(np.array([seq]))[0] == pytest.approx(m.log_marginal, abs=1e-10)

    @pytest.mark.parametrize("factory", PREDICTORS)
    def test_marginalisation(self, factory):
        k = factory().alphabet_size
        n = 10 if k == 2 else 6
        seqs = np.array(list(itertools.product(range(k), repeat=n)))
        total = math.fsum(np.exp(factory().log_marginal_batch(seqs)))
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_exchangeable(self):
        rng = stream(13, 0)
        seq = rng.integers(0, 3, 20)
        ref = mix.DirichletMixture(3).log_marginal_batch(seq[None, :])[0]
        for _ in range(10):
            perm = rng.permutation(seq)
            assert mix.DirichletMixture(3).log_marginal_batch(perm[None, :])[0] == pytest.approx(ref, abs=1e-12)

    def test_clone_is_independent(self):
        m = mix.DirichletMixture(2)
        m.feed([1, 1])
        c = m.clone()
        c.update(0)
        assert m.t == 2 and c.t == 3
