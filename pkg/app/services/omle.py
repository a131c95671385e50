import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.models.learner import (
    CandidateSet,
    ConfidenceSet,
    EpisodeRecord,
    LikelihoodLedger,
    RegretTrace,
    ValidityRecord,
)
from app.models.policy import HistoryPolicy
from app.models.pomdp import TabularPOMDP
from app.services.oom import multistep_revealing_margin
from app.services.pomdp_core import (
    from_parameter_vector,
    optimal_policy,
    parameter_vector,
    policy_splice,
    policy_value,
    sample_trajectory,
    trajectory_probabilities,
    trajectory_probability_forward,
)
from app.utils.exceptions import ConfigurationException, UsageException
from app.utils.helpers import Trajectory, action_windows
from app.utils.logger import setup_logger


logger = setup_logger(__name__)

GRID_TOL = 1e-12


def beta_default(S: int, A: int, O: int, H: int, K: int, delta: float,
                 c: Optional[float] = None, m: int = 1) -> float:
    """
    Confidence radius for the MLE set (natural logs).

    m == 1: c * (H (S^2 A + S O) ln(S A O H K) + ln(K / delta))
    m > 1:  c * (H (S^2 A + S O) ln(S A O H) + ln(K H A^m / delta))
    """
    c = settings.BETA_CONSTANT if c is None else c
    if min(S, A, O, H, K, m) < 1:
        raise UsageException("S, A, O, H, K and m must be positive")
    if not 0.0 < delta <= 1.0:
        raise UsageException(f"delta={delta} must lie in (0, 1]")
    if c < 0:
        raise UsageException(f"c={c} must be nonnegative")
    complexity = H * (S * S * A + S * O)
    if m == 1:
        return c * (complexity * math.log(S * A * O * H * K) + math.log(K / delta))
    return c * (complexity * math.log(S * A * O * H) + math.log(K * H * A ** m / delta))


def build_candidate_set(models: Sequence[TabularPOMDP], alpha: float, m: int = 1) -> CandidateSet:
    """Candidate grid with each model's revealing margin precomputed"""
    margins = [multistep_revealing_margin(model, m) for model in models]
    candidates = CandidateSet(models=list(models), margins=margins, alpha=alpha, m=m)
    logger.info(
        f"Built candidate set: {len(candidates)} models, "
        f"{len(candidates.eligible)} pass alpha={alpha} (m={m})"
    )
    return candidates


def log_likelihood(candidate: TabularPOMDP, policy: HistoryPolicy,
                   traj: Sequence[Tuple[int, int]]) -> float:
    """ln P^pi(tau), floored at ln(PROBABILITY_FLOOR)"""
    probability = trajectory_probability_forward(candidate, policy, traj)
    return math.log(max(probability, settings.PROBABILITY_FLOOR))


def _candidate_log_likelihoods(candidates: CandidateSet, policy: HistoryPolicy,
                               traj: Trajectory) -> np.ndarray:
    return np.array([log_likelihood(model, policy, traj) for model in candidates.models])


def confidence_set_update(candidates: CandidateSet, ledger: LikelihoodLedger,
                          beta: float, k: int = 1) -> ConfidenceSet:
    """Alpha-eligible candidates whose log-likelihood is within beta of the best eligible one"""
    eligible = candidates.eligible
    if not eligible:
        raise ConfigurationException(
            f"Empty confidence set: no candidate reaches revealing margin alpha={candidates.alpha}"
        )
    best = max(float(ledger.totals[i]) for i in eligible)
    threshold = best - beta
    members = [i for i in eligible if ledger.totals[i] >= threshold]
    return ConfidenceSet(k=k, members=members, beta=beta, max_log_likelihood=best)


def _plan(candidates: CandidateSet, index: int, cap: Optional[int]) -> Tuple[HistoryPolicy, float]:
    plan = candidates.cached_plan(index)
    if plan is None:
        plan = optimal_policy(candidates.models[index], cap)
        candidates.store_plan(index, plan)
    return plan


def optimistic_plan(candidates: CandidateSet, conf: ConfidenceSet,
                    cap: Optional[int] = None) -> Tuple[int, HistoryPolicy, float]:
    """Member with the highest optimal value; ties go to the lowest index"""
    if not conf.members:
        raise ConfigurationException("Cannot plan over an empty confidence set")
    best_index, best_policy, best_value = -1, None, -math.inf
    for index in sorted(conf.members):
        policy, value = _plan(candidates, index, cap)
        if value > best_value:
            best_index, best_policy, best_value = index, policy, value
    return best_index, best_policy, best_value


def _check_env(env: TabularPOMDP, candidates: CandidateSet) -> None:
    if env.dims != candidates.dims:
        raise UsageException(
            f"environment dims {env.dims} differ from candidate dims {candidates.dims}"
        )
    margin = multistep_revealing_margin(env, candidates.m)
    if margin + settings.MARGIN_TOLERANCE < candidates.alpha:
        logger.warning(
            f"Environment margin {margin:.4f} is below alpha={candidates.alpha}; "
            f"the truth may be excluded from every confidence set"
        )


def _run(env: TabularPOMDP, candidates: CandidateSet, K: int, beta: float,
         rng: np.random.Generator, executions: Callable[[HistoryPolicy], List[HistoryPolicy]],
         cap: Optional[int], track_samples: bool) -> RegretTrace:
    if K < 1:
        raise UsageException(f"K={K} must be at least 1")
    _check_env(env, candidates)
    _, optimal_value = optimal_policy(env, cap)
    ledger = LikelihoodLedger.empty(len(candidates))
    trace = RegretTrace(
        beta=beta,
        optimal_value=optimal_value,
        truth_index=candidates.index_of(env),
        m=candidates.m,
        ledger=ledger,
    )
    true_values: Dict[int, float] = {}
    cumulative = 0.0

    for k in range(1, K + 1):
        conf = confidence_set_update(candidates, ledger, beta, k)
        index, policy, opt_value = optimistic_plan(candidates, conf, cap)
        if index not in true_values:
            true_values[index] = policy_value(env, policy)
        true_value = true_values[index]

        for executed in executions(policy):
            traj = sample_trajectory(env, executed, rng)
            policy_index = ledger.add_policy(executed)
            ledger.record(policy_index, traj, _candidate_log_likelihoods(candidates, executed, traj))

        cumulative += optimal_value - true_value
        trace.records.append(EpisodeRecord(
            k=k,
            candidate=index,
            opt_value=opt_value,
            true_value=true_value,
            cum_regret=cumulative,
            conf_size=len(conf.members),
            contains_truth=trace.truth_index in conf.members,
            samples=len(ledger.dataset) if track_samples else None,
        ))
        trace.memberships.append(list(conf.members))
        trace.episode_policies.append(policy)
        logger.debug(
            f"k={k}: candidate={index} opt={opt_value:.4f} true={true_value:.4f} "
            f"|B|={len(conf.members)}"
        )

    logger.info(
        f"Finished {K} episodes: cumulative regret {cumulative:.4f}, "
        f"containment {trace.containment_rate:.2%}"
    )
    return trace


def omle_run(env: TabularPOMDP, candidates: CandidateSet, K: int, beta: float,
             rng: np.random.Generator, cap: Optional[int] = None) -> RegretTrace:
    """
    Optimistic MLE over a finite candidate grid.

    Each episode plans optimistically over the confidence set, executes the
    plan once on env, and refreshes every candidate's log-likelihood.
    """
    logger.info(f"Running OMLE: K={K}, beta={beta:.4f}, {len(candidates)} candidates")
    return _run(env, candidates, K, beta, rng, lambda policy: [policy], cap, track_samples=False)


def multistep_omle_run(env: TabularPOMDP, candidates: CandidateSet, K: int, beta: float,
                       m: int, rng: np.random.Generator, cap: Optional[int] = None) -> RegretTrace:
    """
    Multi-step OMLE: every outer episode executes the spliced policies
    pi_{1:h} o a o pi_{h+m:H} for each h in 0..H-m and each action window a.
    """
    if m < 2:
        raise UsageException("multistep_omle_run needs m >= 2; use omle_run for m = 1")
    if m > env.H:
        raise UsageException(f"window m={m} exceeds horizon H={env.H}")
    if candidates.m != m:
        raise UsageException(f"candidate set was gated with m={candidates.m}, run uses m={m}")
    windows = action_windows(env.A, m - 1)

    def executions(policy: HistoryPolicy) -> List[HistoryPolicy]:
        return [
            policy_splice(policy, h, window)
            for h in range(env.H - m + 1)
            for window in windows
        ]

    logger.info(
        f"Running multi-step OMLE: K={K}, m={m}, beta={beta:.4f}, "
        f"{(env.H - m + 1) * len(windows)} executions per episode"
    )
    return _run(env, candidates, K, beta, rng, executions, cap, track_samples=True)


def mixture_value(trace: RegretTrace) -> float:
    """True value of the uniform mixture over the planned policies"""
    return float(np.mean([record.true_value for record in trace.records]))


def tv_distance(model_a: TabularPOMDP, model_b: TabularPOMDP, policy: HistoryPolicy,
                cap: Optional[int] = None) -> float:
    """Sum over trajectories of |P_a - P_b| (no 1/2 factor)"""
    return float(np.abs(
        trajectory_probabilities(model_a, policy, cap) - trajectory_probabilities(model_b, policy, cap)
    ).sum())


def _dataset_log_likelihoods(models: Sequence[TabularPOMDP], ledger: LikelihoodLedger) -> np.ndarray:
    """(len(dataset), len(models)) table recomputed from scratch"""
    table = np.zeros((len(ledger.dataset), len(models)))
    for t, (policy_index, traj) in enumerate(ledger.dataset):
        policy = ledger.policies[policy_index]
        table[t] = [log_likelihood(model, policy, traj) for model in models]
    return table


def optimism_gaps(trace: RegretTrace, candidates: CandidateSet, env: TabularPOMDP) -> List[float]:
    """Per episode, max over candidates of sum log(P_theta / P_env) on data gathered before it"""
    table = _dataset_log_likelihoods(list(candidates.models) + [env], trace.ledger)
    ratios = table[:, :-1] - table[:, -1:]
    cumulative = np.vstack([np.zeros((1, len(candidates))), np.cumsum(ratios, axis=0)])
    return [
        float(cumulative[trace.samples_before(record.k)].max())
        for record in trace.records
    ]


def _policy_key(policy: HistoryPolicy) -> Tuple[bytes, ...]:
    return tuple(table.tobytes() for table in policy.tables)


def mle_validity_check(trace: RegretTrace, candidates: CandidateSet, env: TabularPOMDP,
                       delta: float = 0.1, cap: Optional[int] = None) -> List[ValidityRecord]:
    """
    Squared-distance sums against log-likelihood deficits for every confidence-set member.

    For episode k with T earlier samples and member theta:
      tv_squared_sum = sum_{t<T} tv_distance(theta, env, pi^t)^2
      deficit        = sum_{t<T} ln(P_env / P_theta)
      rhs            = deficit + H(S^2 A + S O) ln(T S A O H) + ln(T / delta)
    """
    S, A, O, H = env.dims
    table = _dataset_log_likelihoods(list(candidates.models) + [env], trace.ledger)
    deficits = np.vstack([
        np.zeros((1, len(candidates))),
        np.cumsum(table[:, -1:] - table[:, :-1], axis=0),
    ])

    tv_cache: Dict[Tuple[int, Tuple[bytes, ...]], float] = {}

    def tv_squared(index: int, t: int) -> float:
        policy = trace.ledger.policies[trace.ledger.dataset[t][0]]
        key = (index, _policy_key(policy))
        if key not in tv_cache:
            tv_cache[key] = tv_distance(candidates.models[index], env, policy, cap)
        return tv_cache[key] ** 2

    tv_prefix: Dict[int, List[float]] = {}
    records = []
    for record, members in zip(trace.records, trace.memberships):
        n = trace.samples_before(record.k)
        for index in members:
            sums = tv_prefix.setdefault(index, [0.0])
            while len(sums) <= n:
                sums.append(sums[-1] + tv_squared(index, len(sums) - 1))
            deficit = float(deficits[n, index])
            if n == 0:
                rhs = 0.0
            else:
                rhs = deficit + H * (S * S * A + S * O) * math.log(n * S * A * O * H) + math.log(n / delta)
            records.append(ValidityRecord(
                k=record.k,
                candidate=index,
                tv_squared_sum=sums[n],
                log_likelihood_deficit=deficit,
                rhs=rhs,
                ratio=sums[n] / rhs if rhs > 0 else None,
            ))
    return records


def optimistic_discretize(model: TabularPOMDP, eps: float) -> np.ndarray:
    """Coordinatewise ceiling of (mu1, T, O) to the eps-grid; on-grid coordinates stay put"""
    if eps <= 0:
        raise UsageException(f"grid step eps={eps} must be positive")
    vector = parameter_vector(model)
    snapped = np.round(vector / eps) * eps
    on_grid = np.abs(snapped - vector) <= GRID_TOL
    return np.where(on_grid, vector, np.ceil(vector / eps) * eps)


def discretized_model(model: TabularPOMDP, eps: float) -> TabularPOMDP:
    """The discretized vector wrapped back into an (unnormalized) model"""
    return from_parameter_vector(model, optimistic_discretize(model, eps))
