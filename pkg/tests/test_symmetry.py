import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from overlap_lab.model import BaseChannelSpec, Model, PriorSpec, generate_disorder, sample_snr_matrix
from overlap_lab.posterior import Enumeration
from overlap_lab.symmetry import (InconsistentConstants, NotPSD, NotReplicaSymmetric, Orientation,
                                  ReplicaOverlapArray, analyze_array, brute_force_subsets,
                                  extract_constants, find_one_directional_subsets, gram_vectors,
                                  orient_tournament, planted_asymmetry_array, random_tournament,
                                  replica_symmetric_array, solve_offdiagonal, synthetic_array,
                                  tournament_from_order)

seeds = st.integers(0, 2**32 - 1)
unit = st.floats(-1, 1)


def offdiag(n):
    return ~np.eye(n, dtype=bool)


class TestConstants:
    def test_identical_blocks(self):
        arr = replica_symmetric_array(0.9, 0.2, 0.6, 5)
        c = extract_constants(arr, 0, 1)
        assert (c["a"], c["d"]) == pytest.approx((0.9, 0.6))
        assert c["x"] == pytest.approx(0.4) and c["y"] == pytest.approx(0.08)
        assert max(c["deviation"].values()) == pytest.approx(0.0, abs=1e-15)

    def test_alternating(self):
        arr = synthetic_array(0.7, 0.4, -0.1, 0.5, random_tournament(6, 0))
        c = extract_constants(arr, 0, 1)
        assert (c["a"], c["d"], c["x"], c["y"]) == pytest.approx((0.7, 0.5, 0.3, 0.17))

    def test_not_replica_symmetric(self):
        R = replica_symmetric_array(0.9, 0.2, 0.6, 4).blocks.copy()
        R[1, 2, 0, 0] = R[2, 1, 0, 0] = 0.5
        with pytest.raises(NotReplicaSymmetric) as exc:
            extract_constants(ReplicaOverlapArray(R), 0, 1)
        assert set(exc.value.pair) == {1, 2}

    def test_needs_three_replicas(self):
        with pytest.raises(ValueError):
            extract_constants(replica_symmetric_array(1, 0, 1, 2), 0, 1)


class TestSolveOffdiagonal:
    @pytest.mark.parametrize("x,y,want", [(2, 2, (1, 1)), (3, 5, (2, 1)), (0, 0, (0, 0))])
    def test_examples(self, x, y, want):
        assert solve_offdiagonal(x, y) == pytest.approx(want)

    def test_inconsistent(self):
        with pytest.raises(InconsistentConstants):
            solve_offdiagonal(2.0, 1.0)

    @given(r=unit, q=unit)
    def test_recombination(self, r, q):
        x, y = r + q, r * r + q * q
        rr, qq = solve_offdiagonal(x, y)
        assert rr >= qq
        assert rr + qq == pytest.approx(x, abs=1e-12)
        if abs(r - q) > 1e-4:
            assert rr * rr + qq * qq == pytest.approx(y, abs=1e-12)
        else:
            assert rr * rr + qq * qq == pytest.approx(y, abs=1e-10)


class TestTournament:
    def test_tied_when_equal(self):
        arr = replica_symmetric_array(1.0, 0.3, 1.0, 5)
        o = orient_tournament(arr, 0, 1, 0.3, 0.3)
        assert o.tied[offdiag(5)].all()
        assert np.array_equal(o.edges, np.triu(np.ones((5, 5), bool), 1))

    @pytest.mark.parametrize("seed", range(4))
    def test_alternating_recovered(self, seed):
        orient = random_tournament(8, seed)
        arr = synthetic_array(0.5, 0.6, -0.2, 0.8, orient)
        assert np.array_equal(orient_tournament(arr, 0, 1, 0.6, -0.2).edges, orient.edges)

    @given(a=unit, b=unit, c=unit, d=unit, n=st.integers(3, 9), seed=seeds)
    def test_round_trip(self, a, b, c, d, n, seed):
        assume(abs(b - c) > 1e-3)
        orient = random_tournament(n, seed)
        arr = synthetic_array(a, b, c, d, orient)
        const = extract_constants(arr, 0, 1)
        assert (const["a"], const["d"]) == pytest.approx((a, d), abs=1e-12)
        r, q = solve_offdiagonal(const["x"], const["y"])
        assert (r, q) == pytest.approx((max(b, c), min(b, c)), abs=1e-9)
        back = orient_tournament(arr, 0, 1, r, q)
        expected = orient.edges if b > c else orient.edges.T
        assert np.array_equal(back.edges, expected)
        assert not back.tied.any()

    def test_random_is_tournament(self):
        o = random_tournament(9, 3)
        assert np.array_equal(o.edges ^ o.edges.T, offdiag(9))


class TestSubsets:
    def test_transitive_six(self):
        s = find_one_directional_subsets(tournament_from_order(range(6)))
        assert (sorted(s.V1), sorted(s.V2), s.m) == ([0, 1, 2], [3, 4, 5], 3)

    def test_three_cycle(self):
        E = np.zeros((3, 3), bool)
        E[0, 1] = E[1, 2] = E[2, 0] = True
        s = find_one_directional_subsets(Orientation(E, np.zeros((3, 3), bool)))
        assert s.m == 1

    @given(n=st.integers(2, 8), seed=seeds)
    def test_exhaustive_is_maximum(self, n, seed):
        o = random_tournament(n, seed)
        s = find_one_directional_subsets(o, method="exhaustive")
        assert s.m == brute_force_subsets(o)
        assert all(o.edges[i, j] for i in s.V1 for j in s.V2)
        assert not set(s.V1) & set(s.V2)

    @pytest.mark.parametrize("seed", range(10))
    def test_exhaustive_at_least_greedy(self, seed):
        o = random_tournament(10, seed)
        ex = find_one_directional_subsets(o, method="exhaustive")
        gr = find_one_directional_subsets(o, method="greedy")
        assert ex.m >= gr.m >= 1
        assert all(o.edges[i, j] for i in gr.V1 for j in gr.V2)

    def test_m_target(self):
        s = find_one_directional_subsets(tournament_from_order(range(8)), m_target=2)
        assert s.m == 2
        with pytest.raises(ValueError):
            find_one_directional_subsets(tournament_from_order(range(3)), m_target=2)


class TestCertification:
    def test_replica_symmetric_gaps(self):
        rep = analyze_array(replica_symmetric_array(0.8, 0.3, 0.5, 12))
        assert max(rep.gap_u, rep.gap_w, rep.cross_gap, rep.bc_gap) <= 1e-10
        assert rep.verdict and rep.bounds_ok
        json.loads(rep.to_json())

    def test_planted_gap_shrinks(self):
        gaps = []
        for n_rep in (8, 16, 32):
            arr, h = planted_asymmetry_array(n_rep, seed=n_rep)
            rep = analyze_array(arr)
            assert rep.bounds_ok and not rep.verdict
            assert rep.cross_gap == pytest.approx(2 * h, rel=1e-6)
            gaps.append(rep.cross_gap)
        assert gaps[0] > gaps[1] > gaps[2]

    def test_barycentre_gap_nonincreasing_in_m(self):
        arr, _ = planted_asymmetry_array(12, orientation=tournament_from_order(range(12)))
        gaps = [analyze_array(arr, m_target=m).gap_u for m in range(2, 7)]
        assert all(b <= a + 1e-10 for a, b in zip(gaps, gaps[1:]))

    def test_not_psd(self):
        with pytest.raises(NotPSD):
            gram_vectors(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_gram_vectors_reproduce(self):
        A = np.random.default_rng(0).standard_normal((6, 3))
        v = gram_vectors(A @ A.T)
        np.testing.assert_allclose(v @ v.T, A @ A.T, atol=1e-12)

    def test_sampled_posterior_pipeline(self):
        lam = sample_snr_matrix(2, 0.5, 0)
        m = Model(PriorSpec.rademacher(2), BaseChannelSpec("spiked-wigner", 2, 1.0), 6, lam=lam)
        post = Enumeration(m).posterior(generate_disorder(m, 1).as_batch())
        picks = post.sample_indices(np.random.default_rng(2), 12)[0]
        arr = ReplicaOverlapArray.from_replicas(post.configs[picks])
        assert arr.source == "sampled" and arr.min_eigenvalue(0, 1) >= -1e-10
        rep = analyze_array(arr, constant_tol=np.inf)
        assert rep.m >= 1 and np.isfinite(rep.bc_gap)
        assert rep.deviation["a"] >= 0
