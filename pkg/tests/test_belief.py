import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from maxent_pomdp import analysis as an
from maxent_pomdp.belief import (
    BeliefSet, OracleStats, bayes_update, belief_entropy, check_belief, enumerate_belief_set,
    initial_belief, measurement_update, noisy_oracle_update, perturb_belief, reachable_belief_set,
    uniform_belief,
)
from maxent_pomdp.errors import BeliefSetSizeError, ImpossibleObservationError
from maxent_pomdp.pomdp_core import forward_posterior

from conftest import identity_chain, make_model


class TestBayesUpdate:
    def test_identity_emission_gives_point_mass(self):
        model = identity_chain(3)
        b = bayes_update(model, np.array([0.2, 0.5, 0.3]), 0, 2)
        np.testing.assert_array_equal(b, [0.0, 0.0, 1.0])

    def test_uniform_emission_is_pure_prediction(self, two_state_model):
        model = make_model(two_state_model.transition, np.full((2, 3), 1 / 3), horizon=3)
        prior = np.array([0.9, 0.1])
        np.testing.assert_allclose(bayes_update(model, prior, 0, 1), prior @ model.transition[:, 0, :])

    def test_hand_evaluated_two_state(self, two_state_model):
        b = bayes_update(two_state_model, np.array([0.5, 0.5]), 0, 0)
        np.testing.assert_allclose(b, [9 / 11, 2 / 11], rtol=1e-14)

    def test_impossible_observation(self):
        model = identity_chain(3)
        with pytest.raises(ImpossibleObservationError):
            bayes_update(model, np.array([1.0, 0.0, 0.0]), 1, 2)


class TestMeasurementUpdate:
    def test_identity_emission(self):
        model = identity_chain(4)
        np.testing.assert_array_equal(measurement_update(model, uniform_belief(4), 2), [0, 0, 1, 0])

    def test_uniform_emission_keeps_prior(self, two_state_model):
        model = make_model(two_state_model.transition, np.full((2, 2), 0.5), horizon=3)
        np.testing.assert_allclose(measurement_update(model, np.array([0.3, 0.7]), 1), [0.3, 0.7])

    def test_hand_evaluated(self, two_state_model):
        np.testing.assert_allclose(initial_belief(two_state_model, 0), [9 / 11, 2 / 11], rtol=1e-14)


class TestFilterOracle:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 3), st.integers(1, 5), st.integers(1, 5))
    def test_sequential_updates_match_forward_algorithm(self, seed, s, a, o, horizon):
        rng = np.random.default_rng(seed)
        model = an.random_pomdp(rng, s, a, o, horizon, concentration=0.5)
        states = [rng.choice(s, p=model.initial_dist)]
        obs = [rng.choice(o, p=model.emission[states[0]])]
        actions = []
        for _ in range(horizon - 1):
            actions.append(int(rng.integers(a)))
            states.append(rng.choice(s, p=model.transition[states[-1], actions[-1]]))
            obs.append(rng.choice(o, p=model.emission[states[-1]]))
        b = initial_belief(model, obs[0])
        filtered = [b]
        for t in range(1, horizon):
            b = bayes_update(model, b, actions[t - 1], obs[t])
            filtered.append(b)
        exact = forward_posterior(model, obs, actions)
        assert np.abs(np.array(filtered) - exact).max() <= 1e-10
        for f in filtered:
            check_belief(f)


class TestNoisyOracle:
    def test_zero_noise_is_bitwise_exact(self, two_state_model):
        rng = np.random.default_rng(0)
        exact = bayes_update(two_state_model, np.array([0.5, 0.5]), 0, 0)
        noisy = noisy_oracle_update(two_state_model, np.array([0.5, 0.5]), 0, 0, 0.0, rng)
        assert noisy.tobytes() == exact.tobytes()

    def test_single_state_always_one(self, one_state_model):
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert noisy_oracle_update(one_state_model, np.ones(1), 0, 0, 0.5, rng).tolist() == [1.0]

    def test_all_clamped_falls_back(self):
        exact = np.array([0.5, 0.5])
        out, fell_back = perturb_belief(exact, np.array([-100.0, -100.0]), 0.04)
        assert fell_back
        np.testing.assert_array_equal(out, exact)

    def test_fallback_counted(self, two_state_model):
        class Negative:
            def standard_normal(self, n):
                return np.full(n, -1e6)

        stats = OracleStats()
        noisy_oracle_update(two_state_model, np.array([0.5, 0.5]), 0, 0, 0.04, Negative(), stats)
        assert stats.fallbacks == 1

    def test_negative_variance(self, two_state_model):
        with pytest.raises(ValueError):
            noisy_oracle_update(two_state_model, np.array([0.5, 0.5]), 0, 0, -1.0, np.random.default_rng(0))

    def test_l1_error_matches_pushforward(self, two_state_model):
        """Two-sample KS test against an independent clamp-renormalise simulation."""
        s2, n = 0.04, 100_000
        prior = np.array([0.5, 0.5])
        exact = np.array([9 / 11, 2 / 11])
        rng = np.random.default_rng(123)
        ours = np.array([
            np.abs(noisy_oracle_update(two_state_model, prior, 0, 0, s2, rng) - exact).sum()
            for _ in range(n)
        ])
        ref_rng = np.random.default_rng(456)
        noisy = np.clip(exact + ref_rng.normal(0.0, math.sqrt(s2), size=(n, 2)), 0.0, 1.0)
        z = noisy.sum(axis=1, keepdims=True)
        ref = np.where(z > 0, noisy / np.where(z > 0, z, 1.0), exact)
        ref = np.abs(ref - exact).sum(axis=1)
        grid = np.sort(np.concatenate([ours, ref]))
        cdf_a = np.searchsorted(np.sort(ours), grid, side="right") / n
        cdf_b = np.searchsorted(np.sort(ref), grid, side="right") / n
        d = np.abs(cdf_a - cdf_b).max()
        critical = math.sqrt(-math.log(0.001 / 2) / 2) * math.sqrt(2 / n)
        assert d < critical


class TestBeliefEntropy:
    def test_examples(self):
        assert belief_entropy(np.array([0.0, 1.0, 0.0])) == 0.0
        assert belief_entropy(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)
        assert belief_entropy(np.array([0.5, 0.25, 0.25])) == pytest.approx(1.039721, abs=1e-6)


class TestBeliefSet:
    def test_dedup_within_tolerance(self):
        bset = BeliefSet(2, dedup_tol=1e-9)
        i, inserted = bset.add(np.array([0.3, 0.7]))
        j, again = bset.add(np.array([0.3 + 2e-10, 0.7 - 2e-10]))
        assert inserted and not again and i == j
        _, new = bset.add(np.array([0.3 + 1e-8, 0.7 - 1e-8]))
        assert new and len(bset) == 2

    def test_dedup_across_grid_boundary(self):
        bset = BeliefSet(2, dedup_tol=1e-9)
        edge = 0.5 + 1e-12
        bset.add(np.array([edge, 1 - edge]))
        assert bset.find(np.array([0.5 - 1e-12, 0.5 + 1e-12])) == 0

    def test_nearest_ties_lowest_index(self):
        bset = BeliefSet(2)
        bset.add(np.array([1.0, 0.0]))
        bset.add(np.array([0.0, 1.0]))
        assert bset.nearest(np.array([0.5, 0.5])) == 0
        assert bset.nearest(np.array([0.4, 0.6])) == 1

    def test_text_round_trip(self, two_state_model):
        bset = reachable_belief_set(two_state_model)
        text = bset.to_text()
        assert text.splitlines()[0] == f"2 {len(bset)}"
        loaded = BeliefSet.from_text(text)
        np.testing.assert_array_equal(loaded.beliefs, bset.beliefs)


class TestEnumeration:
    def test_horizon_one_is_seed_only(self, two_state_model):
        bset = enumerate_belief_set(two_state_model, np.array([0.5, 0.5]), 1)
        assert len(bset) == 1

    def test_identity_deterministic_point_masses(self):
        model = identity_chain(4, horizon=3)
        bset = enumerate_belief_set(model, uniform_belief(4), 3)
        masses = {tuple(b) for b in bset.beliefs[1:]}
        assert masses == {tuple(np.eye(4)[i]) for i in range(4)}
        np.testing.assert_array_equal(bset[0], uniform_belief(4))

    def test_size_cap(self, two_state_model):
        with pytest.raises(BeliefSetSizeError) as info:
            enumerate_belief_set(two_state_model, np.array([0.5, 0.5]), 10, max_size=5)
        assert info.value.count == 6

    def test_matches_breadth_first_reachability(self):
        rng = np.random.default_rng(9)
        model = an.random_pomdp(rng, 3, 2, 2, 4)
        horizon = 4
        bset = enumerate_belief_set(model, uniform_belief(3), horizon)
        frontier, seen = [uniform_belief(3)], [uniform_belief(3)]
        for _ in range(horizon - 1):
            nxt = []
            for b in frontier:
                for a in range(2):
                    for o in range(2):
                        c = bayes_update(model, b, a, o)
                        if not any(np.abs(c - x).sum() <= 1e-9 for x in seen):
                            seen.append(c)
                            nxt.append(c)
            frontier = nxt
        assert len(bset) == len(seen)
        for b in seen:
            assert bset.find(b) is not None

    def test_closed_when_reached_shallower_later(self):
        """A belief first met deep in the search is re-expanded when met shallower.

        Point masses: 0 -> {1, 2}; 1 -> 3 -> 4; 2 -> 4; 4 -> 5. The search
        meets 4 at depth 4 below 1 before meeting it at depth 3 below 2.
        """
        succ = {0: (1, 2), 1: (3, 3), 2: (4, 4), 3: (4, 4), 4: (5, 5), 5: (5, 5)}
        transition = np.zeros((6, 2, 6))
        for s, (x, y) in succ.items():
            transition[s, 0, x] = transition[s, 1, y] = 1.0
        model = make_model(transition, np.ones((6, 1)), horizon=4, initial=np.eye(6)[0])
        bset = enumerate_belief_set(model, np.eye(6)[0], 4)
        assert bset.find(np.eye(6)[5]) is not None
        assert bset.depths[bset.find(np.eye(6)[4])] == 3

    def test_reachable_set_contains_every_first_belief(self, two_state_model):
        bset = reachable_belief_set(two_state_model)
        for o in range(2):
            assert bset.find(initial_belief(two_state_model, o)) is not None
