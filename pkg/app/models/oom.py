from typing import Any

import numpy as np
from pydantic import BaseModel, Field, field_validator


def _readonly(array: Any) -> np.ndarray:
    result = np.array(array, dtype=float)
    result.flags.writeable = False
    return result


class EmissionActionMatrix(BaseModel):
    """
    m-step emission-action matrix at step h.

    Row (a, o) holds P(o_{h:h+m-1} = o | s_h = s, a_{h:h+m-2} = a); the action
    window gives the outer mixed-radix digits, observations the inner ones.
    """
    h: int = Field(..., ge=0)
    m: int = Field(..., ge=1)
    O: int = Field(..., ge=1)
    A: int = Field(..., ge=1)
    matrix: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @field_validator("matrix", mode="before")
    @classmethod
    def _as_array(cls, value: Any) -> np.ndarray:
        return _readonly(value)

    @property
    def block_rows(self) -> int:
        return self.O ** self.m

    @property
    def n_blocks(self) -> int:
        return self.A ** (self.m - 1)

    def block(self, a_index: int) -> np.ndarray:
        """M_{h,a} for the action window with mixed-radix index a_index"""
        start = a_index * self.block_rows
        return self.matrix[start:start + self.block_rows]


class ObservableOperatorModel(BaseModel):
    """
    Operator parameterization of trajectory probabilities.

    ops[h, o, a] is the D x D operator B_{h+1}(o, a) for h in 0..H-m-1;
    D = A^(m-1) * O^m, which is O for the single-step model.
    """
    m: int = Field(..., ge=1)
    S: int = Field(..., ge=1)
    A: int = Field(..., ge=1)
    O: int = Field(..., ge=1)
    H: int = Field(..., ge=1)
    margin: float
    b0: np.ndarray
    ops: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @field_validator("b0", "ops", mode="before")
    @classmethod
    def _as_array(cls, value: Any) -> np.ndarray:
        return _readonly(value)

    @property
    def dim(self) -> int:
        return self.A ** (self.m - 1) * self.O ** self.m

    @property
    def n_steps(self) -> int:
        return self.H - self.m
