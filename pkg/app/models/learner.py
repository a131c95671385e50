from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, model_validator

from app.config import settings
from app.models.policy import HistoryPolicy
from app.models.pomdp import TabularPOMDP
from app.utils.helpers import Trajectory


class CandidateSet(BaseModel):
    """Finite model grid with precomputed revealing margins"""
    models: List[TabularPOMDP] = Field(..., min_length=1)
    margins: List[float]
    alpha: float = Field(..., ge=0.0)
    m: int = Field(1, ge=1)

    _plans: Dict[int, Tuple[HistoryPolicy, float]] = PrivateAttr(default_factory=dict)

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_consistency(self) -> "CandidateSet":
        if len(self.margins) != len(self.models):
            raise ValueError("one margin per candidate is required")
        dims = self.models[0].dims
        for i, model in enumerate(self.models):
            if model.dims != dims:
                raise ValueError(f"candidate {i} has dims {model.dims}, expected {dims}")
        return self

    @property
    def dims(self) -> tuple:
        return self.models[0].dims

    def __len__(self) -> int:
        return len(self.models)

    @property
    def eligible(self) -> List[int]:
        """Indices passing the alpha-revealing gate"""
        return [
            i for i, margin in enumerate(self.margins)
            if margin + settings.MARGIN_TOLERANCE >= self.alpha
        ]

    def cached_plan(self, index: int) -> Optional[Tuple[HistoryPolicy, float]]:
        return self._plans.get(index)

    def store_plan(self, index: int, plan: Tuple[HistoryPolicy, float]) -> None:
        self._plans[index] = plan

    def index_of(self, model: TabularPOMDP) -> Optional[int]:
        """Position of a candidate with exactly the given parameters"""
        for i, candidate in enumerate(self.models):
            if candidate.dims == model.dims and all(
                np.array_equal(getattr(candidate, name), getattr(model, name))
                for name in ("mu1", "trans", "emis", "rewards")
            ):
                return i
        return None


class LikelihoodLedger(BaseModel):
    """Cumulative log-likelihoods over an append-only dataset of (policy, trajectory)"""
    totals: np.ndarray
    policies: List[HistoryPolicy] = Field(default_factory=list)
    dataset: List[Tuple[int, Trajectory]] = Field(default_factory=list)

    class Config:
        arbitrary_types_allowed = True

    @classmethod
    def empty(cls, n_candidates: int) -> "LikelihoodLedger":
        return cls(totals=np.zeros(n_candidates))

    def add_policy(self, policy: HistoryPolicy) -> int:
        self.policies.append(policy)
        return len(self.policies) - 1

    def record(self, policy_index: int, traj: Trajectory, log_likelihoods: np.ndarray) -> None:
        self.dataset.append((policy_index, traj))
        self.totals = self.totals + log_likelihoods


class ConfidenceSet(BaseModel):
    k: int = Field(..., ge=1)
    members: List[int]
    beta: float
    max_log_likelihood: float


class EpisodeRecord(BaseModel):
    """One row of a regret trace"""
    k: int
    candidate: int
    opt_value: float
    true_value: float
    cum_regret: float
    conf_size: int
    contains_truth: bool
    samples: Optional[int] = None


class RegretTrace(BaseModel):
    """Per-episode learner output plus the data needed to audit it afterwards"""
    records: List[EpisodeRecord] = Field(default_factory=list)
    beta: float
    optimal_value: float
    truth_index: Optional[int] = None
    m: int = 1
    memberships: List[List[int]] = Field(default_factory=list)
    episode_policies: List[HistoryPolicy] = Field(default_factory=list)
    ledger: LikelihoodLedger

    class Config:
        arbitrary_types_allowed = True

    @property
    def cumulative_regret(self) -> float:
        return self.records[-1].cum_regret if self.records else 0.0

    @property
    def containment_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.contains_truth for r in self.records) / len(self.records)

    def samples_before(self, k: int) -> int:
        """Dataset size when episode k (1-based) was planned"""
        if k <= 1:
            return 0
        previous = self.records[k - 2]
        return previous.samples if previous.samples is not None else k - 1


class ValidityRecord(BaseModel):
    """Squared-distance side vs likelihood side for one (episode, member) pair"""
    k: int
    candidate: int
    tv_squared_sum: float
    log_likelihood_deficit: float
    rhs: float
    ratio: Optional[float] = None
