import math

import numpy as np
import pytest

from prefelicit.errors import ConvergenceError
from prefelicit.model import (
    KEY,
    REGULAR,
    AgentProfile,
    AlternativeProfile,
    Dataset,
    Parameter,
    Question,
    Response,
    Scenario,
    response_log_prob,
    sample_response,
)
from prefelicit.posterior import (
    FitConfig,
    GaussianPosterior,
    certainty_ratio,
    cml_estimate,
    composite_log_likelihood,
    fit_posterior,
    hypothetical_precision,
    utility_diff_stats,
)

from conftest import fd_jacobian, make_param, make_scenario, rel_err


def random_dataset(rng, scenario, truth, count, max_depth=3):
    data = Dataset()
    m = scenario.m
    for _ in range(count):
        size = int(rng.integers(2, min(m, 4) + 1))
        subset = tuple(sorted(rng.choice(m, size=size, replace=False).tolist()))
        depth = int(rng.integers(1, min(size, max_depth + 1)))
        agent = int(rng.integers(0, len(scenario.agents)))
        q = Question(subset=subset, depth=depth)
        data.append(sample_response(scenario, agent, q, truth, rng))
    return data


class TestCompositeLogLikelihood:
    def test_empty_dataset_zero_param(self, rng):
        scen = make_scenario(rng)
        assert composite_log_likelihood(scen, Dataset(), Parameter.zeros(3, 3)) == 0.0

    def test_single_pairwise_no_prior(self, rng):
        scen = make_scenario(rng)
        resp = Response(agent=0, question=Question(subset=(0, 1), depth=1), ranking=(1,))
        cll = composite_log_likelihood(
            scen, Dataset([resp]), Parameter.zeros(3, 3), prior_std=math.inf
        )
        assert cll == pytest.approx(-math.log(2.0), abs=1e-12)

    def test_componentwise_oracle(self, rng):
        scen = make_scenario(rng, m=5)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 30)
        param = make_param(rng)
        prior_std = 7.0
        expected = sum(response_log_prob(scen, r, param) for r in data)
        expected -= param.vector @ param.vector / (2 * prior_std**2)
        got = composite_log_likelihood(scen, data, param, prior_std=prior_std)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_concavity(self, rng):
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 15)
        for _ in range(200):
            a = make_param(rng, scale=2.0)
            b = make_param(rng, scale=2.0)
            mid = Parameter(0.5 * (a.matrix + b.matrix))
            va = composite_log_likelihood(scen, data, a)
            vb = composite_log_likelihood(scen, data, b)
            vm = composite_log_likelihood(scen, data, mid)
            assert vm >= 0.5 * (va + vb) - 1e-10


class TestCmlEstimate:
    def test_empty_dataset_returns_prior_mode(self, rng):
        scen = make_scenario(rng)
        est = cml_estimate(scen, Dataset())
        assert np.allclose(est.matrix, 0.0)

    def test_gradient_small_at_estimate(self, rng):
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 60)
        cfg = FitConfig()
        est = cml_estimate(scen, data, cfg=cfg)

        def cll(vec):
            return composite_log_likelihood(
                scen, data, Parameter.from_vector(vec, 3, 3), prior_std=cfg.prior_std
            )

        eps = 1e-6
        grad = np.array(
            [
                (cll(est.vector + eps * e) - cll(est.vector - eps * e)) / (2 * eps)
                for e in np.eye(9)
            ]
        )
        assert np.linalg.norm(grad) < 1e-4  # finite differences limit the check

    def test_beats_random_search(self, rng):
        scen = make_scenario(rng, m=4, n_alt_attrs=2, n_agent_attrs=2)
        truth = make_param(rng, 2, 2)
        data = random_dataset(rng, scen, truth, 12)
        est = cml_estimate(scen, data)
        best = composite_log_likelihood(scen, data, est)
        for _ in range(1000):
            candidate = make_param(rng, 2, 2, scale=2.0)
            assert best >= composite_log_likelihood(scen, data, candidate) - 1e-9

    def test_permutation_invariance(self, rng):
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        entries = list(random_dataset(rng, scen, truth, 40))
        est_a = cml_estimate(scen, Dataset(entries))
        shuffled = entries.copy()
        rng.shuffle(shuffled)
        est_b = cml_estimate(scen, Dataset(shuffled))
        assert np.allclose(est_a.matrix, est_b.matrix, atol=1e-9)

    def test_nonconvergence_carries_iterate(self, rng):
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 40)
        with pytest.raises(ConvergenceError) as exc:
            cml_estimate(scen, data, cfg=FitConfig(max_iterations=1, gradient_tolerance=1e-14))
        assert exc.value.last_iterate is not None
        assert exc.value.gradient_norm is not None


class TestFitPosterior:
    def test_empty_dataset(self, rng):
        scen = make_scenario(rng)
        post = fit_posterior(scen, Dataset())
        assert np.allclose(post.mean, 0.0)
        assert np.allclose(post.precision, np.eye(9) / 100.0)
        assert np.allclose(post.covariance, 100.0 * np.eye(9), atol=1e-8)

    def test_precision_matches_finite_differences(self, rng):
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 25)
        cfg = FitConfig()
        post = fit_posterior(scen, data, cfg=cfg)

        def grad(vec):
            eps = 1e-6
            param_vecs = []
            for e in np.eye(9):
                up = composite_log_likelihood(
                    scen, data, Parameter.from_vector(vec + eps * e, 3, 3), cfg.prior_std
                )
                dn = composite_log_likelihood(
                    scen, data, Parameter.from_vector(vec - eps * e, 3, 3), cfg.prior_std
                )
                param_vecs.append((up - dn) / (2 * eps))
            return np.array(param_vecs)

        fd_hess = fd_jacobian(grad, post.mean, step=1e-4)
        assert rel_err(post.precision, -fd_hess) < 1e-4

    def test_precision_diagonal_never_drops(self, rng):
        # appending a response adds a negated NSD Hessian, so at the shared
        # mean no diagonal entry can shrink
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        entries = list(random_dataset(rng, scen, truth, 10))
        for i in range(6, 11):
            base = fit_posterior(scen, Dataset(entries[: i - 1]))
            hyp = hypothetical_precision(base, scen, entries[i - 1])
            assert np.all(np.diag(hyp) - np.diag(base.precision) >= -1e-10)

    def test_min_eigenvalue_at_least_prior(self, rng):
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 30)
        post = fit_posterior(scen, data)
        assert np.linalg.eigvalsh(post.precision)[0] >= 1.0 / 100.0 - 1e-10


class TestHypotheticalPrecision:
    def test_zero_information_response(self, rng):
        alts = tuple(AlternativeProfile(id=i, attributes=rng.standard_normal(2)) for i in range(3))
        agents = (
            AgentProfile(id=0, attributes=rng.standard_normal(2), group=KEY),
            AgentProfile(id=1, attributes=np.zeros(2), group=REGULAR),
        )
        scen = Scenario(alternatives=alts, agents=agents)
        post = fit_posterior(scen, Dataset())
        resp = Response(agent=1, question=Question(subset=(0, 1), depth=1), ranking=(0,))
        assert np.allclose(hypothetical_precision(post, scen, resp), post.precision)

    def test_loewner_monotone(self, rng):
        scen = make_scenario(rng, m=5)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 20)
        post = fit_posterior(scen, data)
        base_eigs = np.linalg.eigvalsh(post.precision)
        for _ in range(20):
            extra = random_dataset(rng, scen, truth, 1)[0]
            updated = hypothetical_precision(post, scen, extra)
            diff_eigs = np.linalg.eigvalsh(updated - post.precision)
            assert diff_eigs[0] >= -1e-10
            assert np.all(np.linalg.eigvalsh(updated) >= base_eigs[0] - 1e-8)

    def test_determinant_monotone(self, rng):
        scen = make_scenario(rng, m=4)
        post = fit_posterior(scen, Dataset())
        resp = Response(agent=2, question=Question(subset=(0, 3), depth=1), ranking=(3,))
        updated = hypothetical_precision(post, scen, resp)
        assert np.linalg.slogdet(updated)[1] >= np.linalg.slogdet(post.precision)[1] - 1e-12


class TestUtilityDiffStats:
    def test_identical_alternatives(self, rng):
        attrs = rng.standard_normal(3)
        alts = (
            AlternativeProfile(id=0, attributes=attrs.copy()),
            AlternativeProfile(id=1, attributes=attrs.copy()),
        )
        agents = (AgentProfile(id=0, attributes=rng.standard_normal(3), group=KEY),)
        scen = Scenario(alternatives=alts, agents=agents)
        post = fit_posterior(scen, Dataset())
        mean, std = utility_diff_stats(post, scen, 0, 0, 1)
        assert mean == 0.0
        assert std == 1e-9

    def test_prior_isotropic_std(self, rng):
        scen = make_scenario(rng, m=3)
        post = fit_posterior(scen, Dataset(), cfg=FitConfig(prior_std=10.0))
        coeff = scen.features[0, 0] - scen.features[0, 2]
        mean, std = utility_diff_stats(post, scen, 0, 0, 2)
        assert mean == 0.0
        assert std == pytest.approx(10.0 * np.linalg.norm(coeff), rel=1e-9)

    def test_monte_carlo_variance(self, rng):
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 40)
        post = fit_posterior(scen, data)
        mean, std = utility_diff_stats(post, scen, 1, 0, 3)
        coeff = scen.features[1, 0] - scen.features[1, 3]
        chol = np.linalg.cholesky(post.covariance)
        draws = post.mean[None, :] + rng.standard_normal((10**5, 9)) @ chol.T
        values = draws @ coeff
        assert np.var(values) == pytest.approx(std**2, rel=0.02)
        assert np.mean(values) == pytest.approx(mean, abs=5 * std / math.sqrt(10**5))

    def test_swap_symmetry(self, rng):
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 15)
        post = fit_posterior(scen, data)
        mean_ab, std_ab = utility_diff_stats(post, scen, 0, 1, 2)
        mean_ba, std_ba = utility_diff_stats(post, scen, 0, 2, 1)
        assert mean_ab == -mean_ba
        assert std_ab == std_ba

    def test_same_alternative_rejected(self, rng):
        scen = make_scenario(rng)
        post = fit_posterior(scen, Dataset())
        with pytest.raises(ValueError):
            utility_diff_stats(post, scen, 0, 1, 1)


class TestCertaintyRatio:
    def test_zero_variance_conventions(self):
        assert certainty_ratio(0.0, 0.0) == 0.0
        assert certainty_ratio(0.5, 0.0) == math.inf
        assert certainty_ratio(1.0, 4.0) == 0.5


class TestWarmStart:
    def test_warm_start_matches_cold(self, rng):
        scen = make_scenario(rng, m=4)
        truth = make_param(rng)
        data = random_dataset(rng, scen, truth, 30)
        cold = cml_estimate(scen, data)
        warm = cml_estimate(scen, data, init=make_param(rng, scale=0.5))
        assert np.allclose(cold.matrix, warm.matrix, atol=1e-6)

    def test_posterior_validation(self, rng):
        bad = np.eye(4)
        bad[0, 1] = 0.5  # asymmetric
        with pytest.raises(Exception):
            GaussianPosterior(mean=np.zeros(4), precision=bad, n_alt_attrs=2, n_agent_attrs=2)
