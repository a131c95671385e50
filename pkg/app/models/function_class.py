from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator


class FiniteFunctionClass(BaseModel):
    """Explicit value table: functions[f][x] = f(x) over domain points 0..domain_size-1"""
    domain_size: int = Field(..., ge=1)
    functions: List[List[float]] = Field(..., min_length=1)
    bound: Optional[float] = None

    class Config:
        json_schema_extra = {
            "example": {
                "domain_size": 2,
                "functions": [[0.0, -1.0], [0.0, 1.0]]
            }
        }

    @model_validator(mode="after")
    def _check_table(self) -> "FiniteFunctionClass":
        for i, row in enumerate(self.functions):
            if len(row) != self.domain_size:
                raise ValueError(
                    f"function {i} has {len(row)} values, expected {self.domain_size}"
                )
        largest = float(np.abs(np.asarray(self.functions, dtype=float)).max())
        if self.bound is None:
            self.bound = largest
        elif largest > self.bound:
            raise ValueError(f"|f(x)| = {largest} exceeds the declared bound {self.bound}")
        return self

    @property
    def table(self) -> np.ndarray:
        """|F| x |X| array of values"""
        return np.asarray(self.functions, dtype=float)

    @property
    def size(self) -> int:
        return len(self.functions)


class EluderResult(BaseModel):
    dimension: int
    witness: List[int]
    epsilon: Optional[float] = None
    nodes: int = 0
    truncated: bool = False


class PigeonholeCheck(BaseModel):
    precondition_ok: bool
    lhs: float
    rhs: Optional[float] = None
    holds: Optional[bool] = None
    dimension: Optional[int] = None
    violated_at: Optional[int] = None
