import itertools

import numpy as np
import pytest

from app.models.policy import HistoryPolicy
from app.models.pomdp import TabularPOMDP
from app.services.instances import random_multistep_revealing


def random_model(rng: np.random.Generator, S: int, A: int, O: int, H: int) -> TabularPOMDP:
    """Unconstrained Dirichlet-uniform model"""
    return random_multistep_revealing(S, A, O, H, 1, 0.0, rng=rng)[0]


def state_sequence_probability(model: TabularPOMDP, policy: HistoryPolicy, traj) -> float:
    """Brute-force sum over all S^H hidden-state sequences"""
    weight = 1.0
    for h, (obs, action) in enumerate(traj):
        weight *= policy.action_distribution(h, traj[:h], obs)[action]
    total = 0.0
    for states in itertools.product(range(model.S), repeat=model.H):
        p = model.mu1[states[0]]
        for h, (obs, action) in enumerate(traj):
            p *= model.emis[h, obs, states[h]]
            if h < model.H - 1:
                p *= model.trans[h, action, states[h + 1], states[h]]
        total += p
    return weight * total


def identity_model(S: int = 2, A: int = 2, H: int = 3, rewards=None) -> TabularPOMDP:
    """Fully observed chain where action a moves to state a (mod S)"""
    trans = np.zeros((H - 1, A, S, S))
    for a in range(A):
        trans[:, a, a % S, :] = 1.0
    return TabularPOMDP(
        S=S, A=A, O=S, H=H,
        mu1=np.eye(S)[0],
        trans=trans,
        emis=np.repeat(np.eye(S)[None], H, axis=0),
        rewards=np.zeros((H, S)) if rewards is None else rewards,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def chain_model():
    return identity_model()
