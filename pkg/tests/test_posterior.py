import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import hermite_expectation, logistic_posterior_plus, overlap_oracle
from overlap_lab.model import (BaseChannelSpec, Model, PriorSpec, SnrMatrix, generate_disorder,
                               sample_snr_matrix)
from overlap_lab.observables import overlap, q_values
from overlap_lab.posterior import (Enumeration, ResourceLimit, enumerate_posterior, free_energy,
                                   gibbs_sample, split_rhat)

seeds = st.integers(0, 2**32 - 1)


def wigner(n, K=1, snr=1.0, lam=None):
    return Model(PriorSpec.rademacher(K), BaseChannelSpec("spiked-wigner", 2, snr), n, lam=lam)


class TestEnumeration:
    def test_frozen_posterior(self, frozen_instance):
        inst, model, d = frozen_instance
        post = Enumeration(model).posterior(d)
        np.testing.assert_allclose(post.weights[0], inst["probs"], rtol=1e-10, atol=1e-15)
        assert post.log_z[0] == pytest.approx(inst["log_z"], rel=1e-12)
        mean_q = post.bracket(q_values(post))[0]
        np.testing.assert_allclose(mean_q, inst["mean_q"], atol=1e-12)

    def test_no_channels_gives_prior(self):
        prior = PriorSpec(np.array([[-1.0], [0.0], [2.0]]), np.array([0.2, 0.3, 0.5]))
        m = Model(prior, BaseChannelSpec("none"), 3)
        rb = enumerate_posterior(m, generate_disorder(m, 0))
        idx = Enumeration(m).index
        np.testing.assert_allclose(rb.weights, np.prod(prior.weights[idx], 1), rtol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_logistic_n1(self, seed):
        s = 0.37
        m = Model(PriorSpec.rademacher(1), BaseChannelSpec("none"), 1, lam=SnrMatrix(np.array([[s]]), s))
        d = generate_disorder(m, seed)
        rb = enumerate_posterior(m, d)
        plus = rb.weights[rb.replicas[:, 0, 0] == 1.0][0]
        ref = logistic_posterior_plus(s, d.X[0, 0], d.pert_noise[0, 0])
        assert plus == pytest.approx(ref, rel=1e-13)

    @given(seed=seeds, K=st.integers(1, 2), n=st.integers(1, 4))
    def test_normalized_and_bracket_bounds(self, seed, K, n):
        m = wigner(n, K, 1.3, lam=sample_snr_matrix(K, 0.3, seed))
        rb = enumerate_posterior(m, generate_disorder(m, seed))
        assert rb.weights.sum() == pytest.approx(1.0, abs=1e-10)
        assert rb.bracket(np.ones(len(rb.replicas))) == pytest.approx(1.0, abs=1e-10)
        g = np.random.default_rng(seed).standard_normal(len(rb.replicas))
        assert g.min() - 1e-12 <= rb.bracket(g) <= g.max() + 1e-12

    def test_budget(self):
        with pytest.raises(ResourceLimit):
            Enumeration(wigner(10), budget=2**9)

    def test_chunks_match_full(self):
        m = wigner(4, lam=sample_snr_matrix(1, 0.5, 0))
        from overlap_lab.model import generate_disorder_batch
        d = generate_disorder_batch(m, 7, 3)
        enum = Enumeration(m)
        full = enum.posterior(d).weights
        parts = np.concatenate([p.weights for p in enum.chunks(d, 3)])
        np.testing.assert_allclose(full, parts, rtol=1e-12, atol=1e-15)

    def test_signal_position(self):
        m = wigner(3, 2)
        from overlap_lab.model import generate_disorder_batch
        d = generate_disorder_batch(m, 5, 1)
        post = Enumeration(m).posterior(d)
        np.testing.assert_array_equal(post.configs[post.signal_pos], d.X)


class TestFreeEnergy:
    def test_zero_without_channels(self):
        m = Model(PriorSpec.rademacher(2), BaseChannelSpec("none"), 3)
        assert free_energy(m, generate_disorder(m, 0)).value == pytest.approx(0.0, abs=1e-14)

    def test_two_term_sum(self):
        s = 0.6
        m = Model(PriorSpec.rademacher(1), BaseChannelSpec("none"), 1, lam=SnrMatrix(np.array([[s]]), s))
        d = generate_disorder(m, 2)
        X, Z = d.X[0, 0], d.pert_noise[0, 0]

        def H(x):
            return 0.5 * s * x * x - s * x * X - np.sqrt(s) * x * Z

        ref = -np.log(0.5 * (np.exp(-H(1.0)) + np.exp(-H(-1.0))))
        assert free_energy(m, d).value == pytest.approx(ref, rel=1e-13)


class TestGibbs:
    def test_prior_marginals_without_channels(self):
        prior = PriorSpec(np.array([[-1.0], [1.0], [3.0]]), np.array([0.5, 0.3, 0.2]))
        m = Model(prior, BaseChannelSpec("none"), 3)
        rb = gibbs_sample(m, generate_disorder(m, 0), chains=2000, sweeps=3, burn_in=1, seed=5)
        for a, w in zip(prior.atoms[:, 0], prior.weights):
            freq = np.mean(rb.replicas[..., 0] == a)
            se = np.sqrt(w * (1 - w) / rb.replicas[..., 0].size)
            assert abs(freq - w) <= 3 * se

    @pytest.mark.parametrize("seed", [0, 1])
    def test_mean_overlap_matches_enumeration(self, seed):
        m = wigner(4, 1, 1.0)
        d = generate_disorder(m, seed)
        rb = gibbs_sample(m, d, chains=400, sweeps=40, burn_in=10, seed=seed + 100)
        vals = overlap(d.X, rb.replicas)[..., 0, 0]
        ex = enumerate_posterior(m, d)
        exact = ex.bracket(overlap(d.X, ex.replicas)[..., 0, 0])
        assert abs(vals.mean() - exact) <= 3 * vals.std(ddof=1) / np.sqrt(len(vals))
        assert rb.diagnostics["rhat_max"] < 1.1 and rb.mode == "mcmc"

    def test_determinism(self):
        m = wigner(4, 2, 0.5)
        d = generate_disorder(m, 3)
        a = gibbs_sample(m, d, 5, 10, 2, 42)
        b = gibbs_sample(m, d, 5, 10, 2, 42)
        np.testing.assert_array_equal(a.replicas, b.replicas)

    def test_needs_two_chains(self):
        m = wigner(2)
        with pytest.raises(ValueError):
            gibbs_sample(m, generate_disorder(m, 0), 1, 5, 1, 0)

    def test_stationary_distribution_n1(self):
        prior = PriorSpec(np.array([[-1.0], [0.5], [2.0]]), np.array([0.3, 0.3, 0.4]))
        m = Model(prior, BaseChannelSpec("none"), 1, lam=SnrMatrix(np.array([[0.8]]), 0.3))
        d = generate_disorder(m, 4)
        rb = gibbs_sample(m, d, chains=5000, sweeps=4, burn_in=1, seed=9)
        ex = enumerate_posterior(m, d)
        counts = np.array([np.sum(rb.replicas[:, 0, 0] == a) for a in prior.atoms[:, 0]])
        expected = ex.weights * counts.sum()
        chi2 = np.sum((counts - expected) ** 2 / expected)
        # 2 degrees of freedom; the 4-sigma normal tail is about 6e-5
        assert stats.chi2.sf(chi2, 2) > 6e-5

    def test_split_rhat(self):
        rng = np.random.default_rng(0)
        assert split_rhat(rng.standard_normal((8, 200))) < 1.05
        stuck = rng.standard_normal((8, 200)) + np.arange(8)[:, None]
        assert split_rhat(stuck) > 1.1


@given(coef=st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_gaussian_integration_by_parts(coef):
    g = np.polynomial.Polynomial(coef)
    lhs = hermite_expectation(lambda z: z * g(z))
    rhs = hermite_expectation(g.deriv())
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_overlap_oracle_agrees_with_q_values():
    m = wigner(3, 2)
    d = generate_disorder(m, 0)
    post = Enumeration(m).posterior(d.as_batch())
    qv = q_values(post)[0]
    for i in (0, 17, 63):
        np.testing.assert_allclose(qv[i], overlap_oracle(d.X, post.configs[i]), atol=1e-15)
