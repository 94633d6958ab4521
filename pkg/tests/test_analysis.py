import math

import numpy as np
import pytest

from maxent_pomdp import analysis as an
from maxent_pomdp.belief import BeliefSet, bayes_update, enumerate_belief_set, uniform_belief
from maxent_pomdp.cli import check_gradients
from maxent_pomdp.errors import BeliefSetClosureError, EnumerationCapError
from maxent_pomdp.feedback import FeedbackKind, batch_feedbacks
from maxent_pomdp.policy import PolicyParams, init_policy
from maxent_pomdp.pomdp_core import simulate

from conftest import identity_chain, make_model

KINDS = [FeedbackKind("MSE"), FeedbackKind("MOE"), FeedbackKind("MBE"), FeedbackKind("RegMBE", 0.3)]


def _mirror_model(horizon=3):
    """Two states swapped by relabelling; action a pulls towards state a."""
    transition = np.zeros((2, 2, 2))
    for s in range(2):
        transition[s, 0] = [0.8, 0.2]
        transition[s, 1] = [0.2, 0.8]
    return make_model(transition, [[0.75, 0.25], [0.25, 0.75]], horizon)


class TestExactObjective:
    def test_single_state_is_zero(self, one_state_model):
        for tag in ("O", "BA", "S"):
            params = init_policy(tag, one_state_model)
            for kind in KINDS:
                assert an.exact_objective(one_state_model, params, kind) == 0.0
                np.testing.assert_array_equal(an.exact_gradient(one_state_model, params, kind), 0.0)

    def test_identity_emission_moe_equals_mse(self, chain_model):
        params = an.random_policy(np.random.default_rng(0), "BA", chain_model)
        j_s = an.exact_objective(chain_model, params, FeedbackKind("MSE"))
        assert an.exact_objective(chain_model, params, FeedbackKind("MOE")) == pytest.approx(j_s, abs=1e-14)

    @pytest.mark.parametrize("tag", ["O", "BA", "S", "B"])
    def test_dp_matches_brute_force(self, tag):
        rng = np.random.default_rng(5)
        model = an.random_pomdp(rng, 3, 2, 2, 3)
        bset = BeliefSet(3)
        for b in rng.dirichlet(np.ones(3), size=3):
            bset.add(b)
        params = an.random_policy(rng, tag, model, bset)
        for kind in KINDS:
            assert an.exact_objective(model, params, kind) == pytest.approx(
                an.brute_force_objective(model, params, kind), abs=1e-12)

    def test_monte_carlo_rollouts_agree(self):
        rng = np.random.default_rng(17)
        model = an.random_pomdp(rng, 2, 2, 2, 3)
        params = init_policy("BA", model)
        n, chunk = 10**6, 200_000
        draws = np.random.default_rng(99)
        sums = {k.name: [0.0, 0.0] for k in KINDS[:3]}
        for _ in range(n // chunk):
            batch = simulate(model, params, draws.random((chunk, 4, 3)))
            for kind in KINDS[:3]:
                fb = batch_feedbacks(kind, batch, 2, 2)[0]
                sums[kind.name][0] += fb.sum()
                sums[kind.name][1] += (fb ** 2).sum()
        for kind in KINDS[:3]:
            s1, s2 = sums[kind.name]
            mean = s1 / n
            se = math.sqrt((s2 / n - mean ** 2) / (n - 1))
            assert abs(mean - an.exact_objective(model, params, kind)) <= 3 * se

    def test_cap(self):
        model = an.random_pomdp(np.random.default_rng(0), 3, 3, 3, 4)
        with pytest.raises(EnumerationCapError):
            an.exact_objective(model, init_policy("O", model), FeedbackKind("MSE"), cap=1000)


class TestExactGradient:
    def test_mirror_symmetry(self):
        """Swapping the states also swaps the roles of the actions."""
        model = _mirror_model()
        params = init_policy("S", model)
        for kind in KINDS:
            g = an.exact_gradient(model, params, kind)
            np.testing.assert_allclose(g[0], g[1][::-1], atol=1e-13)

    @pytest.mark.parametrize("tag", ["O", "BA", "S", "B"])
    def test_finite_differences(self, tag):
        rng = np.random.default_rng(11)
        model = an.random_pomdp(rng, 3, 3, 2, 3)
        bset = BeliefSet(3)
        bset.add(uniform_belief(3))
        for b in rng.dirichlet(np.ones(3), size=2):
            bset.add(b)
        params = an.random_policy(rng, tag, model, bset)
        for kind in KINDS:
            fd = an.finite_difference_gradient(model, params, kind)
            assert an.relative_error(an.exact_gradient(model, params, kind), fd) <= 1e-6

    def test_unconstrained_rows(self):
        rng = np.random.default_rng(3)
        model = an.random_pomdp(rng, 2, 2, 3, 3)
        params = PolicyParams("O", rng.normal(size=(3, 2)), False)
        for kind in KINDS:
            fd = an.finite_difference_gradient(model, params, kind)
            assert an.relative_error(an.exact_gradient(model, params, kind), fd) <= 1e-6

    def test_belief_entropy_sum(self):
        rng = np.random.default_rng(8)
        model = an.random_pomdp(rng, 2, 2, 2, 3)
        params = an.random_policy(rng, "BA", model)
        expected = sum(p * sum(-np.sum(b[b > 0] * np.log(b[b > 0])) for b in traj.beliefs)
                       for p, traj in an.enumerate_trajectories(model, params))
        assert an.expected_belief_entropy_sum(model, params) == pytest.approx(expected, abs=1e-12)

    def test_sign_flip_in_score_is_caught(self, monkeypatch):
        rng = np.random.default_rng(0)
        model = an.random_pomdp(rng, 2, 2, 2, 3)
        assert all(r.passed for r in check_gradients([model], np.random.default_rng(1)))
        original = an.grad_log_policy
        monkeypatch.setattr(an, "grad_log_policy", lambda *a: -original(*a))
        results = check_gradients([model], np.random.default_rng(1))
        assert not all(r.passed for r in results)
        assert "max relative error" in results[0].detail


class TestProxyGaps:
    def test_identity_emission_equality(self, chain_model):
        params = an.random_policy(np.random.default_rng(2), "BA", chain_model)
        report = an.proxy_gap_bounds(chain_model, params)
        assert all(p == 1.0 for p in report.hallucination_obs.values())
        assert report.J_O == pytest.approx(report.J_S, abs=1e-14)
        assert report.moe_upper == pytest.approx(report.J_S, abs=1e-14)
        assert report.excluded["moe_upper"] == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_random_two_state_sandwich(self, seed):
        rng = np.random.default_rng(seed)
        model = an.random_pomdp(rng, 2, 2, 2, 3)
        report = an.proxy_gap_bounds(model, an.random_policy(rng, "BA", model))
        assert all(report.sandwich_holds().values())

    def test_values_match_exact_objectives(self):
        rng = np.random.default_rng(6)
        model = an.random_pomdp(rng, 2, 2, 3, 3)
        params = an.random_policy(rng, "BA", model)
        report = an.proxy_gap_bounds(model, params)
        assert report.J_S == pytest.approx(an.exact_objective(model, params, FeedbackKind("MSE")), abs=1e-12)
        assert report.J_O == pytest.approx(an.exact_objective(model, params, FeedbackKind("MOE")), abs=1e-12)
        assert report.J_tilde == pytest.approx(an.exact_objective(model, params, FeedbackKind("MBE")), abs=1e-12)

    def test_hallucination_by_enumeration(self):
        """P(T_O | tau_S) from explicit trajectory enumeration."""
        rng = np.random.default_rng(13)
        model = an.random_pomdp(rng, 2, 2, 2, 3)
        params = an.random_policy(rng, "O", model)
        mass, hall = {}, {}
        for p, traj in an.enumerate_trajectories(model, params):
            tau = tuple(int(s) for s in traj.states)
            h_s = an.entropy_from_counts(np.bincount(traj.states, minlength=2))
            h_o = an.entropy_from_counts(np.bincount(traj.observations, minlength=2))
            mass[tau] = mass.get(tau, 0.0) + p
            hall[tau] = hall.get(tau, 0.0) + p * (h_o >= h_s - 1e-12)
        report = an.proxy_gap_bounds(model, params)
        for tau, p in mass.items():
            assert report.hallucination_obs[tau] == pytest.approx(hall[tau] / p, abs=1e-12)

    def test_band_geometry(self):
        log_s = math.log(25)
        rows = an.gap_band_table(points=5)
        for p_bar, mbe, lower, upper, _, _ in rows:
            assert lower == pytest.approx((mbe - p_bar * log_s) / (1 - p_bar))
            assert upper == pytest.approx(mbe / p_bar)
        width = {p: np.mean([min(u, log_s) - max(lo, 0) for q, _, lo, u, _, _ in rows if q == p])
                 for p in (0.02, 0.9)}
        assert width[0.9] > width[0.02]
        tight = [r for r in rows if r[0] == 0.02]
        assert all(abs(r[2] - r[1]) <= 0.02 / 0.98 * log_s + 1e-12 for r in tight)

    def test_csv_exports(self):
        rng = np.random.default_rng(1)
        model = an.random_pomdp(rng, 2, 2, 2, 3)
        report = an.proxy_gap_bounds(model, an.random_policy(rng, "BA", model))
        summary = an.gap_summary_csv(report).splitlines()
        assert summary[0] == "quantity,value"
        assert summary[1].startswith("J_S,")
        assert len(an.hallucination_csv(report).splitlines()) == 1 + len(report.hallucination_obs)
        assert an.band_csv(an.gap_band_table(points=2)).count("\n") == 1 + 8


class TestLipschitz:
    def test_identical_policies(self, two_state_model):
        params = an.random_policy(np.random.default_rng(0), "BA", two_state_model)
        res = an.lipschitz_check(two_state_model, params, params, FeedbackKind("MBE"))
        assert res.lhs == 0.0 and res.holds

    def test_single_state(self, one_state_model):
        rng = np.random.default_rng(0)
        p1, p2 = an.random_policy(rng, "O", one_state_model), an.random_policy(rng, "O", one_state_model)
        res = an.lipschitz_check(one_state_model, p1, p2, FeedbackKind("MSE"))
        assert res.lhs == 0.0 and res.bound == 0.0

    def test_hundred_pairs(self):
        rng = np.random.default_rng(4)
        model = an.random_pomdp(rng, 2, 2, 2, 3)
        for i in range(100):
            tag = ("O", "BA", "S")[i % 3]
            kind = KINDS[i % 3]
            res = an.lipschitz_check(model, an.random_policy(rng, tag, model),
                                     an.random_policy(rng, tag, model), kind)
            assert res.holds
            assert res.bound <= model.horizon * math.log(2) * res.d_tv + 1e-12

    def test_regmbe_rejected(self, two_state_model):
        params = init_policy("BA", two_state_model)
        with pytest.raises(ValueError):
            an.lipschitz_check(two_state_model, params, params, FeedbackKind("RegMBE", 0.1))

    def test_csv(self, two_state_model):
        params = init_policy("O", two_state_model)
        text = an.lipschitz_csv([an.lipschitz_check(two_state_model, params, params, FeedbackKind("MSE"))])
        assert text.splitlines()[0] == "lhs,bound,h_star,d_tv,holds"


class TestBeliefMdp:
    def test_single_state_self_loop(self, one_state_model):
        bset = enumerate_belief_set(one_state_model, np.ones(1), 4)
        np.testing.assert_array_equal(an.build_belief_mdp(one_state_model, bset), np.ones((1, 1, 1)))

    def test_identity_mirrors_transitions(self):
        model = identity_chain(3, horizon=3)
        bset = BeliefSet(3)
        for s in range(3):
            bset.add(np.eye(3)[s], depth=1)
        mdp = an.build_belief_mdp(model, bset)
        np.testing.assert_array_equal(mdp, model.transition)

    def test_two_state_split(self, two_state_model):
        bset = enumerate_belief_set(two_state_model, uniform_belief(2), 3)
        mdp = an.build_belief_mdp(two_state_model, bset)
        i0 = bset.find(bayes_update(two_state_model, uniform_belief(2), 0, 0))
        i1 = bset.find(bayes_update(two_state_model, uniform_belief(2), 0, 1))
        assert mdp[0, 0, i0] == pytest.approx(0.55)
        assert mdp[0, 0, i1] == pytest.approx(0.45)

    def test_rows_stochastic(self):
        rng = np.random.default_rng(2)
        model = an.random_pomdp(rng, 3, 2, 2, 3)
        bset = enumerate_belief_set(model, uniform_belief(3), 3)
        mdp = an.build_belief_mdp(model, bset)
        np.testing.assert_allclose(mdp.sum(axis=2), 1.0, atol=1e-10)

    def test_closure_error(self, two_state_model):
        bset = BeliefSet(2)
        bset.add(uniform_belief(2), depth=0)
        with pytest.raises(BeliefSetClosureError):
            an.build_belief_mdp(two_state_model, bset)
