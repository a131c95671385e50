from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator


class LockSpec(BaseModel):
    """Parameters of a combinatorial lock"""
    variant: Literal["undercomplete", "overcomplete"]
    depth: int = Field(..., ge=1, description="H for the undercomplete lock, m for the overcomplete one")
    A: int = Field(..., ge=1)
    alpha: Optional[float] = None
    good_actions: Union[List[int], Literal["random"]] = "random"
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "LockSpec":
        if self.variant == "undercomplete":
            if self.depth < 2:
                raise ValueError("undercomplete lock needs H >= 2")
            if self.alpha is None or not 0.0 < self.alpha <= 0.5:
                raise ValueError("undercomplete lock needs alpha in (0, 1/2]")
        elif self.depth < 2:
            raise ValueError("overcomplete lock needs m >= 2")
        if self.good_actions != "random":
            if len(self.good_actions) != self.depth - 1:
                raise ValueError(
                    f"good_actions has {len(self.good_actions)} entries, expected {self.depth - 1}"
                )
            if any(not 0 <= a < self.A for a in self.good_actions):
                raise ValueError(f"good_actions must lie in [0, {self.A})")
        return self


class GeneratorSpec(BaseModel):
    """Instance generator by registry name"""
    name: str
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0


class BetaSpec(BaseModel):
    c: float = Field(1.0, ge=0.0)
    delta: float = Field(0.1, gt=0.0, le=1.0)


class ExperimentConfig(BaseModel):
    """Learner experiment, read from TOML or JSON"""
    name: str = "run"
    env_path: Optional[str] = None
    env_generator: Optional[GeneratorSpec] = None
    candidate_paths: Optional[List[str]] = None
    candidate_generator: Optional[GeneratorSpec] = None
    alpha: float = Field(0.0, ge=0.0)
    learner: Literal["omle", "multistep_omle"] = "omle"
    K: int = Field(..., ge=1)
    beta: Union[float, BetaSpec] = Field(default_factory=BetaSpec)
    m: int = Field(1, ge=1)
    seeds: List[int] = Field(..., min_length=1)
    enumeration_cap: Optional[int] = Field(None, ge=1)
    validity_check: bool = True
    output_dir: str = "results"

    class Config:
        json_schema_extra = {
            "example": {
                "name": "lock-h3",
                "env_generator": {"name": "lock_under", "params": {"H": 3, "A": 2, "alpha": 0.3, "good_actions": [1, 1]}},
                "candidate_generator": {"name": "lock_siblings", "params": {"variant": "undercomplete", "depth": 3, "A": 2, "alpha": 0.3}},
                "alpha": 0.3,
                "K": 200,
                "beta": {"c": 1.0, "delta": 0.1},
                "seeds": [0, 1, 2]
            }
        }

    @model_validator(mode="after")
    def _check_sources(self) -> "ExperimentConfig":
        if (self.env_path is None) == (self.env_generator is None):
            raise ValueError("exactly one of env_path / env_generator is required")
        if (self.candidate_paths is None) == (self.candidate_generator is None):
            raise ValueError("exactly one of candidate_paths / candidate_generator is required")
        if self.learner == "multistep_omle" and self.m < 2:
            raise ValueError("multistep_omle needs m >= 2")
        return self


class SeedSummary(BaseModel):
    seed: int
    final_regret: float
    containment_rate: float
    always_contained: bool
    conf_sizes: List[int]
    mixture_value: float
    final_policy_optimal: bool
    samples: int
    max_validity_ratio: Optional[float] = None
    wall_clock: float
    csv_path: str


class RunSummary(BaseModel):
    """Aggregate over seeds; every aggregate is recomputable from `seeds`"""
    schema_version: int = 1
    name: str
    learner: str
    K: int
    m: int
    beta: float
    optimal_value: float
    seeds: List[SeedSummary]
    mean_final_regret: float
    std_final_regret: float
    mean_containment_rate: float
    always_contained_fraction: float
    mean_mixture_value: float
    final_optimal_fraction: float
    max_validity_ratio: Optional[float] = None

    @classmethod
    def aggregate(cls, name: str, learner: str, K: int, m: int, beta: float,
                  optimal_value: float, seeds: List[SeedSummary]) -> "RunSummary":
        regrets = np.array([s.final_regret for s in seeds])
        ratios = [s.max_validity_ratio for s in seeds if s.max_validity_ratio is not None]
        return cls(
            name=name, learner=learner, K=K, m=m, beta=beta,
            optimal_value=optimal_value,
            seeds=seeds,
            mean_final_regret=float(regrets.mean()),
            std_final_regret=float(regrets.std()),
            mean_containment_rate=float(np.mean([s.containment_rate for s in seeds])),
            always_contained_fraction=float(np.mean([s.always_contained for s in seeds])),
            mean_mixture_value=float(np.mean([s.mixture_value for s in seeds])),
            final_optimal_fraction=float(np.mean([s.final_policy_optimal for s in seeds])),
            max_validity_ratio=max(ratios) if ratios else None,
        )
