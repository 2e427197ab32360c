import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FROZEN
from oracles import sqrt_oracle, sylvester_oracle
from overlap_lab.model import (BaseChannelSpec, GeneralizedPerturbSpec, InvalidParameter, Model,
                               NumericalFailure, PriorSpec, SnrMatrix, basis_matrix, free_entries,
                               generate_disorder, generate_disorder_batch, lambda_streams,
                               pert_energy, principal_sqrt, residual_energy, sample_snr_matrix,
                               solve_sylvester_sym, sqrt_derivative, total_energy)
from overlap_lab.posterior import enumerate_configs

seeds = st.integers(0, 2**32 - 1)


def wigner(n, K=1, snr=1.0, lam=None, gen=None):
    return Model(PriorSpec.rademacher(K), BaseChannelSpec("spiked-wigner", 2, snr), n, lam=lam, gen=gen)


class TestPriorSpec:
    def test_rademacher(self):
        p = PriorSpec.rademacher(2)
        assert p.n_atoms == 4 and p.K == 2 and p.bound == 1.0
        np.testing.assert_allclose(p.second_moment(), np.eye(2))

    @pytest.mark.parametrize("weights", [[0.5, 0.6], [1.2, -0.2], [1.0]])
    def test_bad_weights(self, weights):
        with pytest.raises(InvalidParameter):
            PriorSpec(np.array([[0.0], [1.0]]), np.array(weights))

    def test_bound_violation(self):
        with pytest.raises(InvalidParameter):
            PriorSpec(np.array([[2.0]]), np.array([1.0]), bound=1.0)


class TestSnrMatrix:
    def test_k1_interval(self):
        for seed in range(50):
            lam = sample_snr_matrix(1, 0.5, seed)
            assert 1.0 < lam.entries[0, 0] < 1.5

    def test_k2_intervals_and_spd(self):
        lam = sample_snr_matrix(2, 0.1, 3)
        assert 0.1 < lam.entries[0, 1] < 0.2
        assert np.all((np.diag(lam.entries) > 0.4) & (np.diag(lam.entries) < 0.5))
        np.linalg.cholesky(lam.entries)

    def test_k3_eigenvalues_frozen(self):
        ref = FROZEN["snr_k3_s005_seed7"]
        lam = sample_snr_matrix(3, 0.05, 7)
        np.testing.assert_array_equal(lam.entries, np.array(ref["entries"]))
        np.testing.assert_allclose(np.linalg.eigvalsh(lam.entries), ref["eigenvalues"], rtol=1e-12)
        assert min(ref["eigenvalues"]) > 0
        np.linalg.cholesky(lam.entries)

    @pytest.mark.parametrize("s_n", [0.0, -0.1, 1.5])
    def test_invalid_scale(self, s_n):
        with pytest.raises(InvalidParameter):
            sample_snr_matrix(2, s_n, 0)

    @given(K=st.integers(1, 4), s_n=st.floats(1e-3, 1.0), seed=seeds)
    def test_ensemble_invariants(self, K, s_n, seed):
        lam = sample_snr_matrix(K, s_n, seed)
        assert lam.in_ensemble()
        np.linalg.cholesky(lam.entries)
        off = lam.entries[~np.eye(K, dtype=bool)]
        diag_margin = np.diag(lam.entries) - np.sum(np.abs(lam.entries), 1) + np.diag(lam.entries)
        assert np.all(diag_margin > 0) and np.all(off > 0)
        assert np.linalg.norm(lam.sqrt @ lam.sqrt - lam.entries) <= 1e-10
        for l, lp in free_entries(K):
            D = lam.sqrt_derivs[l, lp]
            res = lam.sqrt @ D + D @ lam.sqrt - basis_matrix(K, l, lp)
            assert np.linalg.norm(res) <= 1e-8

    def test_regeneration_bit_identical(self):
        a, b = sample_snr_matrix(3, 0.2, 99), sample_snr_matrix(3, 0.2, 99)
        np.testing.assert_array_equal(a.entries, b.entries)
        np.testing.assert_array_equal(a.sqrt_derivs, b.sqrt_derivs)


class TestPrincipalSqrt:
    def test_identity(self):
        np.testing.assert_allclose(principal_sqrt(np.eye(3)), np.eye(3), atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(principal_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)

    def test_against_schur_oracle(self):
        ref = FROZEN["sqrt_k2"]
        np.testing.assert_allclose(principal_sqrt(ref["matrix"]), ref["root"], atol=1e-13)

    def test_asymmetric_rejected(self):
        with pytest.raises(InvalidParameter):
            principal_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_tiny_negative_eigenvalue_clipped(self):
        M = np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-14 * np.eye(2)
        R = principal_sqrt(M)
        assert np.all(np.linalg.eigvalsh(R) >= -1e-12)

    @given(K=st.integers(1, 5), seed=seeds)
    def test_multiply_back(self, K, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((K, K))
        M = A @ A.T
        R = principal_sqrt(M)
        assert np.allclose(R, R.T)
        assert np.linalg.eigvalsh(R).min() >= -1e-10
        assert np.linalg.norm(R @ R - M) <= 1e-10 * max(1.0, np.linalg.norm(M))
        np.testing.assert_allclose(R, sqrt_oracle(M), atol=1e-7 * max(1.0, np.linalg.norm(M)))


class TestSqrtDerivative:
    def test_scalar(self):
        lam = SnrMatrix(np.array([[0.7]]), 0.2)
        assert sqrt_derivative(lam, 0, 0)[0, 0] == pytest.approx(1 / (2 * np.sqrt(0.7)), rel=1e-13)

    def test_central_difference(self):
        lam = sample_snr_matrix(2, 0.3, 5)
        eps = 1e-6
        for l, lp in free_entries(2):
            fd = (principal_sqrt(lam.entries + eps * basis_matrix(2, l, lp))
                  - principal_sqrt(lam.entries - eps * basis_matrix(2, l, lp))) / (2 * eps)
            np.testing.assert_allclose(sqrt_derivative(lam, l, lp), fd, atol=1e-8)

    def test_symmetric_result(self):
        lam = sample_snr_matrix(3, 0.1, 8)
        D = sqrt_derivative(lam, 0, 1)
        np.testing.assert_allclose(D, D.T, atol=1e-15)

    def test_singular(self):
        with pytest.raises(NumericalFailure):
            solve_sylvester_sym(np.zeros((2, 2)), np.eye(2))

    @given(K=st.integers(1, 4), seed=seeds)
    def test_against_bartels_stewart(self, K, seed):
        lam = sample_snr_matrix(K, 0.5, seed)
        for l, lp in free_entries(K):
            ref = sylvester_oracle(lam.sqrt, basis_matrix(K, l, lp))
            np.testing.assert_allclose(lam.sqrt_derivs[l, lp], ref, atol=1e-10)


class TestDisorder:
    def test_wigner_n2_observation(self):
        m = wigner(2, snr=1.0)
        d = generate_disorder(m, 4)
        X = d.X[:, 0]
        # ordered tuples (0,0), (0,1), (1,1)
        assert d.Y_base[1] == pytest.approx(X[0] * X[1] / np.sqrt(2) + d.base_noise[1], abs=1e-15)

    def test_no_signal_limit(self):
        m = Model(PriorSpec.rademacher(1), BaseChannelSpec("none"), 5,
                  lam=SnrMatrix(np.array([[1e-24]]), 1e-24))
        d = generate_disorder(m, 1)
        np.testing.assert_allclose(d.Y_pert, d.pert_noise, rtol=0, atol=1e-12)

    def test_gen_covers_all_tuples(self):
        gen = GeneralizedPerturbSpec(2, np.array([1.0]), 0.3)
        m = wigner(3, gen=gen)
        d = generate_disorder(m, 2)
        assert d.Y_gen.shape == (9,)
        assert d.Y_base.shape == (6,)

    @given(seed=seeds)
    def test_determinism(self, seed):
        m = wigner(3, 2, lam=sample_snr_matrix(2, 0.2, 0), gen=GeneralizedPerturbSpec(1, [1.0, -1.0], 0.2))
        a, b = generate_disorder_batch(m, 3, seed), generate_disorder_batch(m, 3, seed)
        for f in ("X", "base_noise", "pert_noise", "gen_noise", "Y_base", "Y_pert", "Y_gen"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))

    def test_lambda_streams_reproducible(self):
        a = lambda_streams(2, 0.3, 4, 17)
        b = lambda_streams(2, 0.3, 4, 17)
        for (la, sa), (lb, sb) in zip(a, b):
            np.testing.assert_array_equal(la.entries, lb.entries)
            assert sa.generate_state(2).tolist() == sb.generate_state(2).tolist()
        assert len({tuple(la.entries.ravel()) for la, _ in a}) == 4


class TestEnergy:
    def test_frozen_energies(self, frozen_instance):
        inst, model, d = frozen_instance
        _, configs, _ = enumerate_configs(model)
        E = total_energy(model, configs, d.sample(0))
        np.testing.assert_allclose(E, inst["energies"], rtol=1e-12, atol=1e-12)

    def test_zero_without_channels(self):
        m = Model(PriorSpec.rademacher(2), BaseChannelSpec("none"), 3)
        d = generate_disorder(m, 0)
        _, configs, _ = enumerate_configs(m)
        np.testing.assert_array_equal(total_energy(m, configs, d), 0.0)

    def test_signal_is_minimum_without_noise(self):
        m = wigner(2, snr=1.5)
        d = generate_disorder(m, 3)
        d0 = type(d)(**{**d.__dict__, "base_noise": 0 * d.base_noise, "Y_base": m.tensor_mean(d.X)})
        _, configs, _ = enumerate_configs(m)
        E = total_energy(m, configs, d0)
        assert E.min() == pytest.approx(total_energy(m, d.X, d0), abs=1e-14)
        # analytic minimum: -1/2 ||mean(X)||^2
        assert E.min() == pytest.approx(-0.5 * np.sum(m.tensor_mean(d.X) ** 2), abs=1e-14)

    def test_h_lambda_k1_formula(self):
        lam = SnrMatrix(np.array([[0.8]]), 0.3)
        m = Model(PriorSpec.rademacher(1), BaseChannelSpec("none"), 4, lam=lam)
        d = generate_disorder(m, 9)
        x = np.array([[1.0], [-1.0], [1.0], [1.0]])
        s = 0.8
        direct = np.sum(0.5 * s * x**2 - s * x * d.X - np.sqrt(s) * x * d.pert_noise)
        assert total_energy(m, x, d) == pytest.approx(direct, abs=1e-13)
        assert pert_energy(m, x, d) == pytest.approx(direct, abs=1e-13)

    def test_dimension_mismatch(self):
        m = wigner(3)
        with pytest.raises(InvalidParameter):
            total_energy(m, np.ones((4, 1)), generate_disorder(m, 0))

    @given(seed=seeds, K=st.integers(1, 2))
    def test_constant_convention_invariance(self, seed, K):
        lam = sample_snr_matrix(K, 0.4, seed)
        m = wigner(3, K, 0.9, lam=lam, gen=GeneralizedPerturbSpec(2, np.ones(K), 0.3))
        d = generate_disorder(m, seed)
        _, configs, _ = enumerate_configs(m)
        gap = residual_energy(m, configs, d) - total_energy(m, configs, d)
        np.testing.assert_allclose(gap, gap[0], atol=1e-10)
        i, j = np.random.default_rng(seed).integers(len(configs), size=2)
        a = total_energy(m, configs[i], d) - total_energy(m, configs[j], d)
        b = residual_energy(m, configs[i], d) - residual_energy(m, configs[j], d)
        assert a == pytest.approx(b, abs=1e-10)

    def test_batched_configs_match_single(self):
        m = wigner(3, 2, lam=sample_snr_matrix(2, 0.3, 1))
        d = generate_disorder(m, 5)
        _, configs, _ = enumerate_configs(m)
        batch = total_energy(m, configs, d)
        single = [total_energy(m, c, d) for c in configs[:10]]
        np.testing.assert_allclose(batch[:10], single, rtol=1e-14)


def test_ordered_and_all_tuples_counts():
    m = Model(PriorSpec.rademacher(1), BaseChannelSpec("tensor-p", 3, 1.0), 4,
              gen=GeneralizedPerturbSpec(3, [1.0], 0.1))
    assert len(m.tensor_index) == len(list(itertools.combinations_with_replacement(range(4), 3)))
    assert len(m.gen_index) == 4**3
