from typing import Any, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, field_validator

from app.utils.helpers import history_index


class HistoryPolicy(BaseModel):
    """
    Tabular history-dependent stochastic policy.

    tables[h] has shape ((O*A)**h * O, A); row history_index(pairs, o, O, A)
    holds pi_h(. | o_1, a_1, ..., o_h).
    """
    tables: Tuple[np.ndarray, ...]

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @field_validator("tables", mode="before")
    @classmethod
    def _as_arrays(cls, value: Any) -> Tuple[np.ndarray, ...]:
        arrays = []
        for table in value:
            array = np.array(table, dtype=float)
            array.flags.writeable = False
            arrays.append(array)
        return tuple(arrays)

    @property
    def H(self) -> int:
        return len(self.tables)

    @property
    def O(self) -> int:
        return self.tables[0].shape[0]

    @property
    def A(self) -> int:
        return self.tables[0].shape[1]

    def action_distribution(self, h: int, pairs: Sequence[Tuple[int, int]], obs: int) -> np.ndarray:
        return self.tables[h][history_index(pairs, obs, self.O, self.A)]

    @classmethod
    def uniform(cls, O: int, A: int, H: int) -> "HistoryPolicy":
        return cls(tables=[np.full(((O * A) ** h * O, A), 1.0 / A) for h in range(H)])

    @classmethod
    def open_loop(cls, actions: Sequence[int], O: int, A: int) -> "HistoryPolicy":
        """Plays actions[h] at step h regardless of the history"""
        tables = []
        for h, action in enumerate(actions):
            table = np.zeros(((O * A) ** h * O, A))
            table[:, action] = 1.0
            tables.append(table)
        return cls(tables=tables)

    @classmethod
    def random(cls, O: int, A: int, H: int, rng: np.random.Generator,
               deterministic: bool = False) -> "HistoryPolicy":
        tables = []
        for h in range(H):
            rows = (O * A) ** h * O
            if deterministic:
                table = np.zeros((rows, A))
                table[np.arange(rows), rng.integers(A, size=rows)] = 1.0
            else:
                table = rng.dirichlet(np.ones(A), size=rows)
            tables.append(table)
        return cls(tables=tables)
