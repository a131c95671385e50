import numpy as np
import pytest

from app.models.experiment import LockSpec
from app.models.learner import CandidateSet, LikelihoodLedger
from app.models.policy import HistoryPolicy
from app.services.instances import (
    combinatorial_lock_under,
    lock_siblings,
    random_weakly_revealing,
)
from app.services.omle import (
    beta_default,
    build_candidate_set,
    confidence_set_update,
    discretized_model,
    log_likelihood,
    mixture_value,
    mle_validity_check,
    multistep_omle_run,
    omle_run,
    optimism_gaps,
    optimistic_discretize,
    optimistic_plan,
    tv_distance,
)
from app.services.pomdp_core import (
    optimal_policy,
    parameter_vector,
    policy_value,
    trajectory_probabilities,
)
from app.utils.exceptions import ConfigurationException, UsageException
from tests.conftest import random_model


LOCK = LockSpec(variant="undercomplete", depth=3, A=2, alpha=0.3, good_actions=[1, 1])
LOCK_OVER = LockSpec(variant="overcomplete", depth=2, A=2, good_actions=[1])


@pytest.fixture(scope="module")
def lock_grid():
    siblings, planted = lock_siblings(LOCK)
    return siblings, planted


class TestBeta:
    def test_single_step_radius(self):
        assert beta_default(2, 2, 3, 4, 100, 0.1, c=1.0) == pytest.approx(481.6, abs=0.05)

    def test_multistep_radius(self):
        expected = 2 * (4 * 4 * 2 + 4 * 3) * np.log(4 * 2 * 3 * 2) + np.log(100 * 2 * 2 ** 2 / 0.1)
        assert beta_default(4, 2, 3, 2, 100, 0.1, c=1.0, m=2) == pytest.approx(expected)

    def test_scales_with_constant(self):
        assert beta_default(2, 2, 3, 4, 100, 0.1, c=2.0) == pytest.approx(
            2 * beta_default(2, 2, 3, 4, 100, 0.1, c=1.0)
        )

    @pytest.mark.parametrize("delta", [0.0, 1.5])
    def test_bad_delta(self, delta):
        with pytest.raises(UsageException):
            beta_default(2, 2, 3, 4, 100, delta)


class TestConfidenceSet:
    def test_members_within_radius(self, rng):
        models = [random_model(rng, 2, 2, 2, 2) for _ in range(4)]
        candidates = build_candidate_set(models, 0.0)
        ledger = LikelihoodLedger(totals=np.array([-10.0, -12.0, -25.0, -10.5]))
        conf = confidence_set_update(candidates, ledger, beta=5.0, k=3)
        assert conf.members == [0, 1, 3]
        assert conf.max_log_likelihood == -10.0
        assert conf.k == 3

    def test_ineligible_candidates_are_gated(self, rng):
        models = [random_model(rng, 2, 2, 2, 2) for _ in range(3)]
        candidates = CandidateSet(models=models, margins=[0.01, 0.5, 0.5], alpha=0.1)
        ledger = LikelihoodLedger(totals=np.array([0.0, -3.0, -20.0]))
        conf = confidence_set_update(candidates, ledger, beta=5.0)
        # the best eligible model sets the bar, not the gated one
        assert conf.members == [1]
        assert conf.max_log_likelihood == -3.0

    def test_no_eligible_candidate(self, rng):
        candidates = build_candidate_set([random_model(rng, 2, 2, 2, 2)], 2.0)
        with pytest.raises(ConfigurationException):
            confidence_set_update(candidates, LikelihoodLedger.empty(1), beta=1.0)

    def test_optimistic_plan_picks_highest_value(self, lock_grid):
        siblings, _ = lock_grid
        candidates = build_candidate_set(siblings, 0.3)
        conf = confidence_set_update(candidates, LikelihoodLedger.empty(4), beta=1.0)
        index, policy, value = optimistic_plan(candidates, conf)
        # every lock is solvable; ties go to the lowest index
        assert index == 0
        assert value == pytest.approx(1.0)
        assert candidates.cached_plan(0)[1] == value

    def test_log_likelihood_is_floored(self, chain_model):
        policy = HistoryPolicy.open_loop([1, 1, 1], 2, 2)
        assert log_likelihood(chain_model, policy, ((1, 1), (1, 1), (1, 1))) == pytest.approx(-690.7755, abs=1e-3)
        assert log_likelihood(chain_model, policy, ((0, 1), (1, 1), (1, 1))) == 0.0


class TestDistances:
    def test_value_gap_bounded_by_distance(self, rng):
        for _ in range(100):
            a = random_model(rng, 2, 2, 3, 3)
            b = random_model(rng, 2, 2, 3, 3)
            for _ in range(5):
                policy = HistoryPolicy.random(3, 2, 3, rng)
                gap = abs(policy_value(a, policy) - policy_value(b, policy))
                assert gap <= a.H * tv_distance(a, b, policy) + 1e-9

    def test_symmetric_and_bounded(self, rng):
        a = random_model(rng, 2, 2, 2, 3)
        b = random_model(rng, 2, 2, 2, 3)
        policy = HistoryPolicy.uniform(2, 2, 3)
        assert tv_distance(a, b, policy) == pytest.approx(tv_distance(b, a, policy))
        assert 0.0 <= tv_distance(a, b, policy) <= 2.0 + 1e-12
        assert tv_distance(a, a, policy) == 0.0


class TestOMLE:
    def test_singleton_grid_has_no_regret(self, rng):
        env, _ = random_weakly_revealing(2, 2, 2, 3, 0.05, rng=rng)
        candidates = build_candidate_set([env], 0.0)
        trace = omle_run(env, candidates, 10, 5.0, rng)
        assert trace.truth_index == 0
        assert all(r.cum_regret == pytest.approx(0.0, abs=1e-10) for r in trace.records)
        assert trace.containment_rate == 1.0

    def test_trace_bookkeeping(self, lock_grid):
        siblings, planted = lock_grid
        env = siblings[planted]
        candidates = build_candidate_set(siblings, LOCK.alpha)
        trace = omle_run(env, candidates, 30, beta_default(6, 2, 7, 3, 30, 0.1), np.random.default_rng(3))
        _, optimal = optimal_policy(env)
        assert trace.optimal_value == pytest.approx(optimal)

        total = 0.0
        previous = 0.0
        for record, policy in zip(trace.records, trace.episode_policies):
            assert record.true_value == pytest.approx(policy_value(env, policy), abs=1e-12)
            gap = optimal - record.true_value
            assert -1e-10 <= gap <= env.H
            total += gap
            assert record.cum_regret == pytest.approx(total, abs=1e-10)
            assert record.cum_regret >= previous - 1e-12
            previous = record.cum_regret
            assert record.samples is None

    def test_optimism_and_value_to_distance_chain(self, lock_grid):
        siblings, planted = lock_grid
        env = siblings[planted]
        candidates = build_candidate_set(siblings, LOCK.alpha)
        trace = omle_run(env, candidates, 20, beta_default(6, 2, 7, 3, 20, 0.1), np.random.default_rng(8))
        for record, policy in zip(trace.records, trace.episode_policies):
            if not record.contains_truth:
                continue
            assert record.opt_value >= trace.optimal_value - 1e-10
            chosen = candidates.models[record.candidate]
            assert record.opt_value - record.true_value <= env.H * tv_distance(chosen, env, policy) + 1e-9

    def test_lock_truth_is_contained(self, lock_grid):
        siblings, planted = lock_grid
        env = siblings[planted]
        candidates = build_candidate_set(siblings, LOCK.alpha)
        K, delta = 200, 0.1
        beta = beta_default(6, 2, 7, 3, K, delta)
        always = 0
        for seed in range(50):
            trace = omle_run(env, candidates, K, beta, np.random.default_rng(seed))
            always += trace.containment_rate == 1.0
        assert always >= (1 - delta) * 50

    def test_lock_regret_flattens(self, lock_grid):
        siblings, planted = lock_grid
        env = siblings[planted]
        candidates = build_candidate_set(siblings, LOCK.alpha)
        K = 200
        beta = beta_default(6, 2, 7, 3, K, 0.1)
        early, late, final_optimal = [], [], 0
        for seed in range(50):
            trace = omle_run(env, candidates, K, beta, np.random.default_rng(seed))
            per_episode = np.diff([0.0] + [r.cum_regret for r in trace.records])
            early.append(per_episode[:50].mean())
            late.append(per_episode[150:].mean())
            final_optimal += trace.records[-1].true_value >= trace.optimal_value - 1e-10
        assert np.mean(early) > 0
        assert np.mean(late) < 0.25 * np.mean(early)
        assert final_optimal >= 0.8 * 50

    def test_optimism_gaps_are_nonnegative(self, lock_grid):
        siblings, planted = lock_grid
        env = siblings[planted]
        candidates = build_candidate_set(siblings, LOCK.alpha)
        trace = omle_run(env, candidates, 15, beta_default(6, 2, 7, 3, 15, 0.1), np.random.default_rng(5))
        gaps = optimism_gaps(trace, candidates, env)
        assert len(gaps) == 15
        assert gaps[0] == 0.0
        assert all(g >= 0.0 for g in gaps)

    def test_validity_ratios(self, lock_grid):
        siblings, planted = lock_grid
        env = siblings[planted]
        candidates = build_candidate_set(siblings, LOCK.alpha)
        trace = omle_run(env, candidates, 20, beta_default(6, 2, 7, 3, 20, 0.1), np.random.default_rng(2))
        records = mle_validity_check(trace, candidates, env)
        assert records
        for record in records:
            if record.candidate == planted:
                assert record.tv_squared_sum == 0.0
                assert record.log_likelihood_deficit == 0.0
            if record.k == 1:
                assert record.rhs == 0.0 and record.ratio is None
            elif record.ratio is not None:
                assert record.ratio <= 1.0

    def test_mismatched_environment(self, rng, lock_grid):
        siblings, _ = lock_grid
        candidates = build_candidate_set(siblings, LOCK.alpha)
        with pytest.raises(UsageException):
            omle_run(random_model(rng, 2, 2, 2, 3), candidates, 5, 1.0, rng)

    def test_needs_an_episode(self, lock_grid, rng):
        siblings, planted = lock_grid
        with pytest.raises(UsageException):
            omle_run(siblings[planted], build_candidate_set(siblings, 0.3), 0, 1.0, rng)


class TestMultistepOMLE:
    def test_overcomplete_lock_mixture_value(self):
        siblings, planted = lock_siblings(LOCK_OVER)
        env = siblings[planted]
        candidates = build_candidate_set(siblings, 0.5, m=2)
        beta = beta_default(4, 2, 3, 2, 100, 0.1, m=2)
        solved = 0
        for seed in range(20):
            trace = multistep_omle_run(env, candidates, 100, beta, 2, np.random.default_rng(seed))
            solved += mixture_value(trace) >= 0.9
        assert solved >= 16

    def test_sample_counts(self):
        siblings, planted = lock_siblings(LOCK_OVER)
        candidates = build_candidate_set(siblings, 0.5, m=2)
        trace = multistep_omle_run(siblings[planted], candidates, 5, 100.0, 2, np.random.default_rng(0))
        # one window start times A action windows per outer episode
        assert [r.samples for r in trace.records] == [2, 4, 6, 8, 10]
        assert trace.samples_before(3) == 4
        assert trace.m == 2

    def test_rejects_single_step(self):
        siblings, planted = lock_siblings(LOCK_OVER)
        candidates = build_candidate_set(siblings, 0.5, m=2)
        with pytest.raises(UsageException):
            multistep_omle_run(siblings[planted], candidates, 5, 1.0, 1, np.random.default_rng(0))

    def test_rejects_mismatched_gate(self, lock_grid):
        siblings, planted = lock_grid
        candidates = build_candidate_set(siblings, 0.0, m=1)
        with pytest.raises(UsageException):
            multistep_omle_run(siblings[planted], candidates, 5, 1.0, 2, np.random.default_rng(0))


class TestDiscretization:
    def test_dominates_and_stays_within_step(self, rng):
        model = random_model(rng, 3, 2, 3, 3)
        vector = parameter_vector(model)
        for eps in (0.1, 0.05, 0.013):
            snapped = optimistic_discretize(model, eps)
            assert np.all(snapped >= vector - 1e-15)
            assert np.all(snapped - vector < eps + 1e-12)
            np.testing.assert_allclose(snapped / eps, np.round(snapped / eps), atol=1e-6)

    def test_trajectory_probabilities_dominate(self, rng):
        for _ in range(20):
            model = random_model(rng, 2, 2, 3, 3)
            rounded = discretized_model(model, 0.05)
            policy = HistoryPolicy.random(3, 2, 3, rng)
            lower = trajectory_probabilities(model, policy)
            upper = trajectory_probabilities(rounded, policy)
            assert np.all(upper >= lower - 1e-15)

    def test_on_grid_model_is_unchanged(self):
        model = combinatorial_lock_under(3, 2, 0.3, good_actions=[0, 1])
        np.testing.assert_array_equal(optimistic_discretize(model, 0.1), parameter_vector(model))

    def test_discretized_model_keeps_rewards(self, rng):
        model = random_model(rng, 2, 2, 2, 2)
        rounded = discretized_model(model, 0.1)
        np.testing.assert_array_equal(rounded.rewards, model.rewards)
        assert rounded.mu1.sum() >= 1.0 - 1e-12

    def test_nonpositive_step(self, chain_model):
        with pytest.raises(UsageException):
            optimistic_discretize(chain_model, 0.0)


class TestLedger:
    def test_totals_match_recomputation(self, lock_grid):
        siblings, planted = lock_grid
        candidates = build_candidate_set(siblings, LOCK.alpha)
        trace = omle_run(siblings[planted], candidates, 12, 1e4, np.random.default_rng(21))
        ledger = trace.ledger
        assert len(ledger.dataset) == 12
        for i, model in enumerate(siblings):
            recomputed = sum(
                log_likelihood(model, ledger.policies[p], traj) for p, traj in ledger.dataset
            )
            assert ledger.totals[i] == pytest.approx(recomputed, abs=1e-9)
