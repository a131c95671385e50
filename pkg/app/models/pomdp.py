from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


def _readonly(array: Any) -> np.ndarray:
    result = np.array(array, dtype=float)
    result.flags.writeable = False
    return result


class TabularPOMDP(BaseModel):
    """
    Episodic tabular POMDP with time-inhomogeneous kernels.

    Kernels are stored column-per-state:
      trans[h, a, s_next, s] = T_{h,a}(s_next | s)   shape (H-1, A, S, S)
      emis[h, o, s]          = O_h(o | s)            shape (H, O, S)
      rewards[h, o]          = r_h(o)                shape (H, O)
    Steps are 0-based in code and 1-based in messages.
    """
    S: int = Field(..., ge=1)
    A: int = Field(..., ge=1)
    O: int = Field(..., ge=1)
    H: int = Field(..., ge=1)
    mu1: np.ndarray
    trans: np.ndarray
    emis: np.ndarray
    rewards: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @field_validator("mu1", "trans", "emis", "rewards", mode="before")
    @classmethod
    def _as_array(cls, value: Any) -> np.ndarray:
        return _readonly(value)

    @model_validator(mode="after")
    def _check_shapes(self) -> "TabularPOMDP":
        S, A, O, H = self.S, self.A, self.O, self.H
        expected = {
            "mu1": (S,),
            "trans": (H - 1, A, S, S),
            "emis": (H, O, S),
            "rewards": (H, O),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ValueError(f"{name} has shape {actual}, expected {shape}")
        return self

    @property
    def dims(self) -> tuple:
        return (self.S, self.A, self.O, self.H)


class POMDPDocument(BaseModel):
    """On-disk JSON form of a TabularPOMDP (trans[h][a][s_next][s_cur])"""
    S: int = Field(..., ge=1)
    A: int = Field(..., ge=1)
    O: int = Field(..., ge=1)
    H: int = Field(..., ge=1)
    mu1: List[float]
    trans: List[List[List[List[float]]]]
    emis: List[List[List[float]]]
    rewards: List[List[float]]
    metadata: Optional[Dict[str, Any]] = None

    class Config:
        json_schema_extra = {
            "example": {
                "S": 2, "A": 1, "O": 2, "H": 2,
                "mu1": [0.5, 0.5],
                "trans": [[[[1.0, 0.0], [0.0, 1.0]]]],
                "emis": [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]],
                "rewards": [[0.0, 1.0], [0.0, 1.0]]
            }
        }

    @model_validator(mode="after")
    def _check_nesting(self) -> "POMDPDocument":
        S, A, O, H = self.S, self.A, self.O, self.H
        checks = [
            ("mu1", np.shape(self.mu1), (S,)),
            ("trans", np.shape(self.trans), (H - 1, A, S, S) if H > 1 else (0,)),
            ("emis", np.shape(self.emis), (H, O, S)),
            ("rewards", np.shape(self.rewards), (H, O)),
        ]
        for name, actual, expected in checks:
            if tuple(actual) != expected:
                raise ValueError(f"field '{name}' has shape {tuple(actual)}, expected {expected}")
        return self

    def to_model(self) -> TabularPOMDP:
        trans = np.array(self.trans, dtype=float).reshape(self.H - 1, self.A, self.S, self.S)
        return TabularPOMDP(
            S=self.S, A=self.A, O=self.O, H=self.H,
            mu1=self.mu1, trans=trans, emis=self.emis, rewards=self.rewards,
        )

    @classmethod
    def from_model(cls, model: TabularPOMDP, metadata: Optional[Dict[str, Any]] = None) -> "POMDPDocument":
        return cls(
            S=model.S, A=model.A, O=model.O, H=model.H,
            mu1=model.mu1.tolist(),
            trans=model.trans.tolist(),
            emis=model.emis.tolist(),
            rewards=model.rewards.tolist(),
            metadata=metadata,
        )
