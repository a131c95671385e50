import itertools
from typing import Iterator, List, Sequence, Tuple

import numpy as np


Trajectory = Tuple[Tuple[int, int], ...]


def history_index(pairs: Sequence[Tuple[int, int]], obs: int, O: int, A: int) -> int:
    """Row of (o_1,a_1,...,o_h) in a step-h policy table"""
    index = 0
    for o, a in pairs:
        index = (index * O + o) * A + a
    return index * O + obs


def trajectory_index(traj: Sequence[Tuple[int, int]], O: int, A: int) -> int:
    """Position of a trajectory in the flat enumeration order"""
    index = 0
    for o, a in traj:
        index = (index * O + o) * A + a
    return index


def decode_trajectory(index: int, O: int, A: int, H: int) -> Trajectory:
    """Inverse of trajectory_index"""
    pairs: List[Tuple[int, int]] = []
    for _ in range(H):
        index, a = divmod(index, A)
        index, o = divmod(index, O)
        pairs.append((o, a))
    return tuple(reversed(pairs))


def iter_trajectories(O: int, A: int, h: int) -> Iterator[Trajectory]:
    """All length-h trajectories in the flat enumeration order"""
    for flat in itertools.product(*([range(O), range(A)] * h)):
        yield tuple(zip(flat[0::2], flat[1::2]))


def action_windows(A: int, length: int) -> List[Tuple[int, ...]]:
    """All action sequences of a given length, first action most significant"""
    return list(itertools.product(range(A), repeat=length))


def window_row(actions: Sequence[int], observations: Sequence[int], O: int, A: int) -> int:
    """Row of (a, o) in an emission-action matrix; actions are the outer digits"""
    a_index = 0
    for a in actions:
        a_index = a_index * A + a
    o_index = 0
    for o in observations:
        o_index = o_index * O + o
    return a_index * O ** len(observations) + o_index


def singular_values(matrix: np.ndarray) -> np.ndarray:
    """Singular values in descending order"""
    return np.linalg.svd(matrix, compute_uv=False)


def sigma_k(matrix: np.ndarray, k: int) -> float:
    """k-th largest singular value, zero when the matrix has fewer than k"""
    values = singular_values(matrix)
    if len(values) < k:
        return 0.0
    return float(values[k - 1])


def pseudo_inverse(matrix: np.ndarray, tol: float) -> np.ndarray:
    """
    Moore-Penrose pseudo-inverse via SVD

    Args:
        matrix: Dense matrix
        tol: Singular values at or below this absolute tolerance are dropped

    Returns:
        The pseudo-inverse, shape transposed
    """
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    s_inv = np.zeros_like(s)
    keep = s > tol
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def column_deviation(matrix: np.ndarray) -> Tuple[int, float]:
    """Worst column of a column-stochastic matrix and its |sum - 1|"""
    deviations = np.abs(matrix.sum(axis=0) - 1.0)
    column = int(np.argmax(deviations))
    return column, float(deviations[column])
