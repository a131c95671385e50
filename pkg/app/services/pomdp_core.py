from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.config import settings
from app.models.policy import HistoryPolicy
from app.models.pomdp import POMDPDocument, TabularPOMDP
from app.utils.exceptions import (
    ConfigurationException,
    EnumerationCapException,
    ModelValidationException,
    UsageException,
)
from app.utils.helpers import Trajectory, column_deviation, decode_trajectory, history_index
from app.utils.logger import setup_logger


logger = setup_logger(__name__)

STOCHASTIC_TOL = 1e-12


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check_distribution_columns(matrix: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(matrix)):
        raise ModelValidationException(f"{name} has non-finite entries")
    if matrix.size and matrix.min() < 0:
        row, col = np.unravel_index(int(np.argmin(matrix)), matrix.shape)
        raise ModelValidationException(
            f"{name} has negative entry {matrix[row, col]:.3e} at row {row + 1}, column {col + 1}"
        )
    column, deviation = column_deviation(matrix)
    if deviation > STOCHASTIC_TOL:
        raise ModelValidationException(
            f"{name} column {column + 1} sums to {matrix[:, column].sum():.12g} "
            f"(deviation {deviation:.3e})"
        )


def validate(model: TabularPOMDP) -> None:
    """Raise ModelValidationException naming the first violated invariant"""
    _check_distribution_columns(model.mu1[:, None], "mu1")
    for h in range(model.H - 1):
        for a in range(model.A):
            _check_distribution_columns(model.trans[h, a], f"T_{{{h + 1},{a + 1}}}")
    for h in range(model.H):
        _check_distribution_columns(model.emis[h], f"O_{h + 1}")
    for h in range(model.H):
        rewards = model.rewards[h]
        bad = np.flatnonzero(~((rewards >= 0.0) & (rewards <= 1.0)))
        if bad.size:
            o = int(bad[0])
            raise ModelValidationException(
                f"r_{h + 1}(o={o + 1}) = {rewards[o]} is outside [0, 1]"
            )


def validate_policy(policy: HistoryPolicy, O: int, A: int, H: int) -> None:
    """Raise ModelValidationException unless the policy tables cover (O, A, H) exactly"""
    if policy.H != H:
        raise ModelValidationException(f"policy has {policy.H} steps, expected {H}")
    for h, table in enumerate(policy.tables):
        expected = ((O * A) ** h * O, A)
        if table.shape != expected:
            raise ModelValidationException(
                f"pi_{h + 1} has shape {table.shape}, expected {expected}"
            )
        _check_distribution_columns(table.T, f"pi_{h + 1}")


def _check_policy_fits(model: TabularPOMDP, policy: HistoryPolicy) -> None:
    if (policy.O, policy.A, policy.H) != (model.O, model.A, model.H):
        raise UsageException(
            f"policy alphabet (O={policy.O}, A={policy.A}, H={policy.H}) does not match "
            f"model (O={model.O}, A={model.A}, H={model.H})"
        )


def _check_cap(model: TabularPOMDP, cap: Optional[int]) -> None:
    cap = settings.ENUMERATION_CAP if cap is None else cap
    size = (model.O * model.A) ** model.H
    if size > cap:
        raise EnumerationCapException(
            f"Enumeration too large: (O*A)^H = {size} exceeds cap {cap}"
        )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _draw(rng: np.random.Generator, probabilities: np.ndarray) -> int:
    p = np.where(probabilities < settings.PROBABILITY_FLOOR, 0.0, probabilities)
    cumulative = np.cumsum(p)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(index, len(p) - 1)


def sample_trajectory(model: TabularPOMDP, policy: HistoryPolicy,
                      rng: np.random.Generator) -> Trajectory:
    """Draw one episode; hidden states stay internal"""
    _check_policy_fits(model, policy)
    state = _draw(rng, model.mu1)
    pairs = []
    prefix = 0
    for h in range(model.H):
        obs = _draw(rng, model.emis[h][:, state])
        row = prefix * model.O + obs
        action = _draw(rng, policy.tables[h][row])
        pairs.append((obs, action))
        prefix = row * model.A + action
        if h < model.H - 1:
            state = _draw(rng, model.trans[h, action][:, state])
    return tuple(pairs)


# ---------------------------------------------------------------------------
# Exact probabilities
# ---------------------------------------------------------------------------

def policy_probability(policy: HistoryPolicy, prefix: Sequence[Tuple[int, int]]) -> float:
    """Product of pi(a_h | o_1, a_1, ..., o_h) over the prefix"""
    if len(prefix) > policy.H:
        raise UsageException(f"prefix of length {len(prefix)} exceeds horizon {policy.H}")
    probability = 1.0
    for h, (obs, action) in enumerate(prefix):
        row = history_index(prefix[:h], obs, policy.O, policy.A)
        probability *= float(policy.tables[h][row, action])
    return probability


def trajectory_probability_forward(model: TabularPOMDP, policy: HistoryPolicy,
                                   traj: Sequence[Tuple[int, int]]) -> float:
    """P^pi_theta(tau) by the forward recursion over hidden-state marginals"""
    if len(traj) != model.H:
        raise UsageException(f"trajectory has {len(traj)} steps, expected {model.H}")
    _check_policy_fits(model, policy)
    forward = np.array(model.mu1, dtype=float)
    weight = 1.0
    prefix = 0
    total = 0.0
    for h, (obs, action) in enumerate(traj):
        joint = model.emis[h][obs] * forward
        row = prefix * model.O + obs
        weight *= float(policy.tables[h][row, action])
        prefix = row * model.A + action
        if h < model.H - 1:
            forward = model.trans[h, action] @ joint
        else:
            total = float(joint.sum())
    return weight * total


def trajectory_probabilities(model: TabularPOMDP, policy: HistoryPolicy,
                             cap: Optional[int] = None) -> np.ndarray:
    """Probabilities of all (O*A)^H trajectories, flat in trajectory_index order"""
    _check_policy_fits(model, policy)
    _check_cap(model, cap)
    S, A, O, H = model.S, model.A, model.O, model.H
    forward = model.mu1[None, :]
    for h in range(H):
        n = forward.shape[0]
        joint = forward[:, None, :] * model.emis[h][None, :, :]
        pi = policy.tables[h].reshape(n, O, A)
        if h == H - 1:
            return (joint.sum(axis=-1)[:, :, None] * pi).reshape(-1)
        nxt = np.einsum("ats,nos->noat", model.trans[h], joint) * pi[..., None]
        forward = nxt.reshape(n * O * A, S)
    raise AssertionError("unreachable")


def trajectory_distribution(model: TabularPOMDP, policy: HistoryPolicy,
                            cap: Optional[int] = None) -> Dict[Trajectory, float]:
    """Exhaustive map from trajectories to probabilities"""
    probabilities = trajectory_probabilities(model, policy, cap)
    return {
        decode_trajectory(index, model.O, model.A, model.H): float(p)
        for index, p in enumerate(probabilities)
    }


# ---------------------------------------------------------------------------
# Values and planning
# ---------------------------------------------------------------------------

def _value_forward(model: TabularPOMDP, policy: HistoryPolicy) -> float:
    S, A, O, H = model.S, model.A, model.O, model.H
    forward = model.mu1[None, :]
    value = 0.0
    for h in range(H):
        n = forward.shape[0]
        joint = forward[:, None, :] * model.emis[h][None, :, :]
        value += float((joint.sum(axis=-1) * model.rewards[h][None, :]).sum())
        if h < H - 1:
            pi = policy.tables[h].reshape(n, O, A)
            nxt = np.einsum("ats,nos->noat", model.trans[h], joint) * pi[..., None]
            forward = nxt.reshape(n * O * A, S)
    return value


def _value_enumerated(model: TabularPOMDP, policy: HistoryPolicy, cap: Optional[int]) -> float:
    O, A, H = model.O, model.A, model.H
    grid = trajectory_probabilities(model, policy, cap).reshape([O, A] * H)
    value = 0.0
    for h in range(H):
        others = tuple(axis for axis in range(2 * H) if axis != 2 * h)
        marginal = grid.sum(axis=others)
        value += float(marginal @ model.rewards[h])
    return value


def policy_value(model: TabularPOMDP, policy: HistoryPolicy, method: str = "forward",
                 cap: Optional[int] = None) -> float:
    """Exact V^pi; method is 'forward' (marginal accumulation) or 'enumerate'"""
    _check_policy_fits(model, policy)
    if method == "forward":
        return _value_forward(model, policy)
    if method == "enumerate":
        return _value_enumerated(model, policy, cap)
    raise UsageException(f"unknown value method '{method}'")


def optimal_policy(model: TabularPOMDP, cap: Optional[int] = None) -> Tuple[HistoryPolicy, float]:
    """
    Exact optimal deterministic history policy by backward induction.

    Every history node carries the unnormalized joint P(history, s_h) as its
    belief; node values are therefore joint expectations and the argmax per
    history equals the Bayes-optimal choice. Ties go to the lowest action.
    """
    _check_cap(model, cap)
    S, A, O, H = model.S, model.A, model.O, model.H

    joints = []
    forward = model.mu1[None, :]
    for h in range(H):
        joint = forward[:, None, :] * model.emis[h][None, :, :]
        joints.append(joint)
        if h < H - 1:
            forward = np.einsum("ats,nos->noat", model.trans[h], joint).reshape(-1, S)

    tables = [None] * H
    child = None
    for h in reversed(range(H)):
        joint = joints[h]
        n = joint.shape[0]
        immediate = joint.sum(axis=-1) * model.rewards[h][None, :]
        table = np.zeros((n * O, A))
        if child is None:
            table[:, 0] = 1.0
            node = immediate.sum(axis=1)
        else:
            continuation = child.reshape(n, O, A)
            best = continuation.argmax(axis=2).reshape(-1)
            table[np.arange(n * O), best] = 1.0
            node = (immediate + continuation.max(axis=2)).sum(axis=1)
        tables[h] = table
        child = node

    value = float(child[0])
    logger.debug(f"Planned S={S} A={A} O={O} H={H}: V* = {value:.6f}")
    return HistoryPolicy(tables=tables), value


def policy_splice(base: HistoryPolicy, h: int, action_seq: Sequence[int]) -> HistoryPolicy:
    """base on steps 1..h, open-loop action_seq next, base again afterwards"""
    if h < 0 or h + len(action_seq) > base.H:
        raise UsageException(
            f"splice at h={h} with {len(action_seq)} actions overflows horizon {base.H}"
        )
    tables = list(base.tables)
    for offset, action in enumerate(action_seq):
        if not 0 <= action < base.A:
            raise UsageException(f"action {action} outside [0, {base.A})")
        step = h + offset
        table = np.zeros_like(tables[step])
        table[:, action] = 1.0
        tables[step] = table
    return HistoryPolicy(tables=tables)


# ---------------------------------------------------------------------------
# Parameters and files
# ---------------------------------------------------------------------------

def parameter_vector(model: TabularPOMDP) -> np.ndarray:
    """Flattened (mu1, all T, all O)"""
    return np.concatenate([model.mu1.ravel(), model.trans.ravel(), model.emis.ravel()])


def from_parameter_vector(template: TabularPOMDP, vector: np.ndarray) -> TabularPOMDP:
    """Rebuild a model from a parameter vector without validating it"""
    S, A, O, H = template.dims
    n_mu, n_trans = S, (H - 1) * A * S * S
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (n_mu + n_trans + H * O * S,):
        raise UsageException(f"parameter vector has shape {vector.shape}")
    return TabularPOMDP(
        S=S, A=A, O=O, H=H,
        mu1=vector[:n_mu],
        trans=vector[n_mu:n_mu + n_trans].reshape(H - 1, A, S, S),
        emis=vector[n_mu + n_trans:].reshape(H, O, S),
        rewards=template.rewards,
    )


def load_model(path: Union[str, Path]) -> TabularPOMDP:
    """Read a JSON model file"""
    text = Path(path).read_text()
    try:
        document = POMDPDocument.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigurationException(f"{path}: field '{field}': {first['msg']}")
    return document.to_model()


def save_model(model: TabularPOMDP, path: Union[str, Path],
               metadata: Optional[Dict[str, Any]] = None) -> None:
    """Write a JSON model file"""
    document = POMDPDocument.from_model(model, metadata)
    Path(path).write_text(document.model_dump_json(indent=2, exclude_none=True))
