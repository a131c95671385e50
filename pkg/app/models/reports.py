from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class ConfusableWitness(BaseModel):
    """Two disjoint state mixtures with identical observation laws"""
    h: int = Field(..., description="1-based step of the rank-deficient emission matrix")
    sigma: float
    nu1: List[float]
    nu2: List[float]


class CheckReport(BaseModel):
    path: str
    dims: Dict[str, int]
    valid: bool
    single_step_margin: Optional[float] = None
    step_margins: List[float] = Field(default_factory=list)
    multistep_margins: Dict[int, float] = Field(default_factory=dict)
    witness: Optional[ConfusableWitness] = None


class GenReport(BaseModel):
    generator: str
    path: str
    dims: Dict[str, int]
    margin: Optional[float] = None


class OracleReport(BaseModel):
    path: str
    policy_spec: str
    m: int
    margin: float
    trajectories: int
    max_deviation: float
    forward_normalization: float
    oom_normalization: float
    norm_11_max: float
    norm_11_bound: Optional[float] = None
    norm_2_max: float
    norm_2_bound: Optional[float] = None

    @property
    def norm_11_ok(self) -> Optional[bool]:
        if self.norm_11_bound is None:
            return None
        return self.norm_11_max <= self.norm_11_bound + 1e-9

    @property
    def norm_2_ok(self) -> Optional[bool]:
        if self.norm_2_bound is None:
            return None
        return self.norm_2_max <= self.norm_2_bound + 1e-9


class EluderReport(BaseModel):
    path: str
    epsilon: float
    l1_dimension: int
    l1_witness: List[int]
    l2_dimension: int
    l2_witness: List[int]
    nodes: int


class BenchReport(BaseModel):
    undercomplete_models: int
    overcomplete_models: int
    max_deviation: float
    max_normalization_error: float
    seconds: float
