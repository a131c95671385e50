from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.models.experiment import LockSpec
from app.models.pomdp import TabularPOMDP
from app.services.oom import multistep_revealing_margin, weakly_revealing_margin
from app.utils.exceptions import GenerationException, UsageException
from app.utils.helpers import action_windows
from app.utils.logger import setup_logger


logger = setup_logger(__name__)


def _resolve_good_actions(good_actions: Optional[Sequence[int]], depth: int, A: int,
                          rng: Optional[np.random.Generator]) -> List[int]:
    if good_actions is None or good_actions == "random":
        rng = np.random.default_rng(0) if rng is None else rng
        return [int(a) for a in rng.integers(A, size=depth - 1)]
    good_actions = [int(a) for a in good_actions]
    if len(good_actions) != depth - 1 or any(not 0 <= a < A for a in good_actions):
        raise UsageException(
            f"good_actions must be {depth - 1} actions in [0, {A}), got {good_actions}"
        )
    return good_actions


def _lock_transitions(stages: int, A: int, good_actions: Sequence[int], steps: int) -> np.ndarray:
    # state 2*i is the good state of stage i, 2*i + 1 the bad one
    S = 2 * stages
    kernel = np.zeros((A, S, S))
    for i in range(stages):
        good, bad = 2 * i, 2 * i + 1
        if i == stages - 1:
            kernel[:, good, good] = 1.0
            kernel[:, bad, bad] = 1.0
            continue
        for a in range(A):
            kernel[a, 2 * (i + 1) + (0 if a == good_actions[i] else 1), good] = 1.0
            kernel[a, 2 * (i + 1) + 1, bad] = 1.0
    return np.repeat(kernel[None], steps, axis=0)


def combinatorial_lock_under(H: int, A: int, alpha: float,
                             good_actions: Optional[Sequence[int]] = None,
                             rng: Optional[np.random.Generator] = None) -> TabularPOMDP:
    """
    Undercomplete combinatorial lock with S = 2H states and O = 2H + 1 observations.

    Every state reveals its own observation with probability alpha and the
    dummy observation 2H otherwise; the final good state always reveals its
    own observation, which is the only rewarding one.
    """
    if H < 2:
        raise UsageException("undercomplete lock needs H >= 2")
    if not 0.0 < alpha <= 0.5:
        raise UsageException(f"alpha={alpha} must lie in (0, 1/2]")
    good_actions = _resolve_good_actions(good_actions, H, A, rng)
    S, O = 2 * H, 2 * H + 1
    final_good = 2 * (H - 1)

    emission = np.zeros((O, S))
    for s in range(S):
        if s == final_good:
            emission[s, s] = 1.0
        else:
            emission[s, s] = alpha
            emission[O - 1, s] = 1.0 - alpha

    rewards = np.zeros((H, O))
    rewards[:, final_good] = 1.0
    return TabularPOMDP(
        S=S, A=A, O=O, H=H,
        mu1=np.eye(S)[0],
        trans=_lock_transitions(H, A, good_actions, H - 1),
        emis=np.repeat(emission[None], H, axis=0),
        rewards=rewards,
    )


def combinatorial_lock_over(m: int, A: int, good_actions: Optional[Sequence[int]] = None,
                            rng: Optional[np.random.Generator] = None) -> TabularPOMDP:
    """
    Overcomplete lock: S = 2m states, O = 3 observations, H = m.

    Observation 0 is the dummy seen before the last stage; at the last stage
    the good state emits 1 (reward one) and the bad state emits 2.
    """
    if m < 2:
        raise UsageException("overcomplete lock needs m >= 2")
    good_actions = _resolve_good_actions(good_actions, m, A, rng)
    S, O, H = 2 * m, 3, m

    emission = np.zeros((O, S))
    emission[0, :2 * (m - 1)] = 1.0
    emission[1, 2 * (m - 1)] = 1.0
    emission[2, 2 * (m - 1) + 1] = 1.0

    rewards = np.zeros((H, O))
    rewards[:, 1] = 1.0
    return TabularPOMDP(
        S=S, A=A, O=O, H=H,
        mu1=np.eye(S)[0],
        trans=_lock_transitions(m, A, good_actions, H - 1),
        emis=np.repeat(emission[None], H, axis=0),
        rewards=rewards,
    )


def lock_from_spec(spec: LockSpec) -> TabularPOMDP:
    rng = np.random.default_rng(spec.seed)
    if spec.variant == "undercomplete":
        return combinatorial_lock_under(spec.depth, spec.A, spec.alpha, spec.good_actions, rng)
    return combinatorial_lock_over(spec.depth, spec.A, spec.good_actions, rng)


def lock_siblings(spec: LockSpec) -> Tuple[List[TabularPOMDP], int]:
    """All A^(depth-1) locks that differ only in the planted sequence, plus the planted one's index"""
    rng = np.random.default_rng(spec.seed)
    planted = tuple(_resolve_good_actions(spec.good_actions, spec.depth, spec.A, rng))
    windows = action_windows(spec.A, spec.depth - 1)
    siblings = [
        lock_from_spec(spec.model_copy(update={"good_actions": list(window)}))
        for window in windows
    ]
    return siblings, windows.index(planted)


def _random_model(S: int, A: int, O: int, H: int, rng: np.random.Generator) -> TabularPOMDP:
    if H > 1:
        trans = np.swapaxes(rng.dirichlet(np.ones(S), size=(H - 1, A, S)), -1, -2)
    else:
        trans = np.zeros((0, A, S, S))
    return TabularPOMDP(
        S=S, A=A, O=O, H=H,
        mu1=rng.dirichlet(np.ones(S)),
        trans=trans,
        emis=np.swapaxes(rng.dirichlet(np.ones(O), size=(H, S)), -1, -2),
        rewards=rng.uniform(0.0, 1.0, size=(H, O)),
    )


def _rejection_sample(S: int, A: int, O: int, H: int, alpha_min: float, max_tries: int,
                      rng: np.random.Generator,
                      margin_of: Callable[[TabularPOMDP], float]) -> Tuple[TabularPOMDP, float]:
    for attempt in range(1, max_tries + 1):
        model = _random_model(S, A, O, H, rng)
        margin = margin_of(model)
        if margin >= alpha_min:
            logger.debug(f"Accepted random model after {attempt} draws (margin {margin:.4f})")
            return model, margin
    raise GenerationException(
        f"No model with margin >= {alpha_min} in {max_tries} draws (S={S}, A={A}, O={O}, H={H})"
    )


def random_weakly_revealing(S: int, A: int, O: int, H: int, alpha_min: float,
                            max_tries: int = 1000,
                            rng: Optional[np.random.Generator] = None) -> Tuple[TabularPOMDP, float]:
    """Dirichlet-uniform model rejection-sampled until min_h sigma_S(O_h) >= alpha_min"""
    if S > O:
        raise UsageException(f"weakly revealing models need S <= O (got S={S}, O={O})")
    rng = np.random.default_rng() if rng is None else rng
    return _rejection_sample(S, A, O, H, alpha_min, max_tries, rng, weakly_revealing_margin)


def random_multistep_revealing(S: int, A: int, O: int, H: int, m: int, alpha_min: float,
                               max_tries: int = 1000,
                               rng: Optional[np.random.Generator] = None) -> Tuple[TabularPOMDP, float]:
    """Dirichlet-uniform model rejection-sampled until the m-step margin reaches alpha_min"""
    if not 1 <= m <= H:
        raise UsageException(f"window m={m} must lie in [1, H={H}]")
    rng = np.random.default_rng() if rng is None else rng
    return _rejection_sample(
        S, A, O, H, alpha_min, max_tries, rng,
        lambda model: multistep_revealing_margin(model, m),
    )


def block_mdp(S: int, A: int, H: int, rng: Optional[np.random.Generator] = None,
              O: Optional[int] = None) -> TabularPOMDP:
    """
    Block MDP: every observation slot belongs to exactly one state.

    The first S slots go one per state; extra slots (O > S) are assigned to
    random states and each state spreads its emission over its own slots.
    """
    rng = np.random.default_rng() if rng is None else rng
    O = S if O is None else O
    if O < S:
        raise UsageException(f"block MDP needs O >= S (got S={S}, O={O})")
    owner = np.concatenate([np.arange(S), rng.integers(S, size=O - S)])

    emission = np.zeros((O, S))
    for s in range(S):
        slots = np.flatnonzero(owner == s)
        emission[slots, s] = rng.dirichlet(np.ones(len(slots)))

    model = _random_model(S, A, O, H, rng)
    return TabularPOMDP(
        S=S, A=A, O=O, H=H,
        mu1=model.mu1,
        trans=model.trans,
        emis=np.repeat(emission[None], H, axis=0),
        rewards=model.rewards,
    )


GENERATORS: Dict[str, Callable[..., TabularPOMDP]] = {
    "lock_under": lambda rng, **p: combinatorial_lock_under(rng=rng, **p),
    "lock_over": lambda rng, **p: combinatorial_lock_over(rng=rng, **p),
    "random_weakly_revealing": lambda rng, **p: random_weakly_revealing(rng=rng, **p)[0],
    "random_multistep_revealing": lambda rng, **p: random_multistep_revealing(rng=rng, **p)[0],
    "block_mdp": lambda rng, **p: block_mdp(rng=rng, **p),
}


def build_from_spec(name: str, params: Dict[str, Any], rng: np.random.Generator) -> TabularPOMDP:
    """Instance from the generator registry"""
    if name not in GENERATORS:
        raise UsageException(
            f"unknown generator '{name}'; available: {', '.join(sorted(GENERATORS))}"
        )
    try:
        return GENERATORS[name](rng, **params)
    except TypeError as e:
        raise UsageException(f"bad parameters for generator '{name}': {e}")


def build_candidates_from_spec(name: str, params: Dict[str, Any],
                               rng: np.random.Generator) -> List[TabularPOMDP]:
    """
    Candidate grid from a generator: 'lock_siblings' takes LockSpec fields;
    any registry generator takes an extra 'count'.
    """
    if name == "lock_siblings":
        siblings, _ = lock_siblings(LockSpec(**params))
        return siblings
    params = dict(params)
    count = int(params.pop("count", 1))
    return [build_from_spec(name, params, rng) for _ in range(count)]
