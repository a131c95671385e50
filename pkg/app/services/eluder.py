import math
from typing import List, Optional, Sequence

import numpy as np

from app.config import settings
from app.models.function_class import EluderResult, FiniteFunctionClass, PigeonholeCheck
from app.utils.exceptions import EnumerationCapException, UsageException
from app.utils.logger import setup_logger


logger = setup_logger(__name__)


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise UsageException(f"eps={eps} must be positive")


def is_eps_independent(F: FiniteFunctionClass, z: int, prefix: Sequence[int], eps: float) -> bool:
    """Some f has sum_i |f(x_i)| <= eps over the prefix and |f(z)| > eps"""
    _check_eps(eps)
    values = np.abs(F.table)
    sums = values[:, list(prefix)].sum(axis=1)
    return bool(np.any((sums <= eps) & (values[:, z] > eps)))


def is_eluder_sequence(F: FiniteFunctionClass, seq: Sequence[int], eps: float) -> bool:
    _check_eps(eps)
    return all(is_eps_independent(F, x, seq[:i], eps) for i, x in enumerate(seq))


def _subset_sums(terms: np.ndarray, ceiling: float) -> np.ndarray:
    """Every sum over a subset of the positive terms that stays below ceiling"""
    sums = np.zeros(1)
    for term in terms[terms > 0]:
        sums = np.unique(np.concatenate([sums, sums + term]))
        sums = sums[sums < ceiling]
    return sums


def default_eps_grid(F: FiniteFunctionClass, eps: float) -> List[float]:
    """
    eps, every |f(x)|, and every prefix breakpoint of the l1 and l2 criteria.

    An eluder sequence never repeats a point, so the criterion of a witness f
    is a subset sum of |f(x)| (or the root of a subset sum of f(x)^2) lying
    below max|f|. The least eps' >= eps admitting a given sequence is eps or
    one of these sums, which makes the search exact over the grid. Each sum is
    nudged up by a few ulps so that it dominates the same sum accumulated in
    any order.
    """
    _check_eps(eps)
    magnitudes = np.abs(F.table)
    slack = magnitudes.shape[1] + 1
    breakpoints = [np.unique(magnitudes).ravel(), np.array([eps])]
    for row in magnitudes:
        ceiling = row.max()
        l1 = _subset_sums(row, ceiling)
        l1 = l1 + slack * np.spacing(l1)
        l2 = _subset_sums(row ** 2, ceiling ** 2)
        l2 = np.sqrt(l2 + slack * np.spacing(l2))
        breakpoints += [l1[l1 < ceiling], l2[l2 < ceiling]]
    grid = np.unique(np.concatenate(breakpoints))
    return [float(g) for g in grid if g >= eps]


class _BudgetExhausted(Exception):
    pass


class _SequenceSearch:
    """
    Longest eps-eluder sequence by memoized depth-first search.

    The search state is the per-function prefix statistic (sum of |f| for l1,
    sum of squares for l2). A function whose criterion already exceeds eps
    can never witness again, so its entry is pinned to +inf and the sequence
    length is at most |F|.
    """

    def __init__(self, F: FiniteFunctionClass, eps: float, norm: str, budget: int):
        self.magnitudes = np.abs(F.table)
        self.increments = self.magnitudes if norm == "l1" else self.magnitudes ** 2
        self.norm = norm
        self.eps = eps
        self.budget = budget
        self.nodes = 0
        self.memo = {}
        self.deepest: List[int] = []

    def _criterion(self, state: np.ndarray) -> np.ndarray:
        return state if self.norm == "l1" else np.sqrt(state)

    def run(self) -> List[int]:
        return self._visit(np.zeros(self.magnitudes.shape[0]), [])

    def _visit(self, state: np.ndarray, prefix: List[int]) -> List[int]:
        key = state.tobytes()
        if key in self.memo:
            return self.memo[key]
        self.nodes += 1
        if self.nodes > self.budget:
            raise _BudgetExhausted()
        if len(prefix) > len(self.deepest):
            self.deepest = list(prefix)

        alive = self._criterion(state) <= self.eps
        best: List[int] = []
        if alive.any():
            extensions = np.flatnonzero((self.magnitudes[alive] > self.eps).any(axis=0))
            for x in extensions:
                nxt = state + self.increments[:, x]
                nxt[self._criterion(nxt) > self.eps] = np.inf
                tail = self._visit(nxt, prefix + [int(x)])
                if len(tail) + 1 > len(best):
                    best = [int(x)] + tail
        self.memo[key] = best
        return best


def _dimension(F: FiniteFunctionClass, eps: float, eps_grid: Optional[Sequence[float]],
               norm: str, cap: Optional[int]) -> EluderResult:
    _check_eps(eps)
    cap = settings.ELUDER_SEARCH_CAP if cap is None else cap
    grid = default_eps_grid(F, eps) if eps_grid is None else sorted(g for g in eps_grid if g >= eps)
    if not grid:
        grid = [eps]

    best = EluderResult(dimension=0, witness=[], epsilon=grid[0])
    nodes = 0
    for level in grid:
        search = _SequenceSearch(F, level, norm, cap - nodes)
        try:
            witness = search.run()
        except _BudgetExhausted:
            nodes += search.nodes
            if len(search.deepest) > best.dimension:
                best = EluderResult(dimension=len(search.deepest), witness=search.deepest, epsilon=level)
            partial = best.model_copy(update={"nodes": nodes, "truncated": True})
            logger.warning(
                f"{norm} eluder search stopped after {nodes} nodes; "
                f"dimension >= {partial.dimension}"
            )
            raise EnumerationCapException(
                f"Eluder search exceeded {cap} nodes; partial lower bound {partial.dimension}",
                partial=partial,
            )
        nodes += search.nodes
        if len(witness) > best.dimension:
            best = EluderResult(dimension=len(witness), witness=witness, epsilon=level)
    return best.model_copy(update={"nodes": nodes})


def eluder_dimension(F: FiniteFunctionClass, eps: float,
                     eps_grid: Optional[Sequence[float]] = None,
                     cap: Optional[int] = None) -> EluderResult:
    """l1 eps-eluder dimension maximized over the eps' >= eps grid"""
    return _dimension(F, eps, eps_grid, "l1", cap)


def l2_eluder_dimension(F: FiniteFunctionClass, eps: float,
                        eps_grid: Optional[Sequence[float]] = None,
                        cap: Optional[int] = None) -> EluderResult:
    """Same search with the prefix criterion sqrt(sum_i f(x_i)^2) <= eps"""
    return _dimension(F, eps, eps_grid, "l2", cap)


def pigeonhole_bound(d: int, C: float, beta: float, omega: float, k: int) -> float:
    """(d+1) C + d beta ln(C/omega) + k omega"""
    if omega <= 0 or omega > C:
        raise UsageException(f"omega={omega} must lie in (0, C={C}]")
    if d < 0 or k < 0:
        raise UsageException("d and k must be nonnegative")
    return (d + 1) * C + d * beta * math.log(C / omega) + k * omega


def large_value_count_bound(d: int, beta: float, eps: float) -> float:
    """(beta/eps + 1) d + 1"""
    _check_eps(eps)
    return (beta / eps + 1.0) * d + 1.0


def _first_violation(F: FiniteFunctionClass, phi_seq: Sequence[int], x_seq: Sequence[int],
                     beta: float) -> Optional[int]:
    if len(phi_seq) != len(x_seq):
        raise UsageException(
            f"phi_seq has {len(phi_seq)} entries but x_seq has {len(x_seq)}"
        )
    values = np.abs(F.table)
    for t, phi in enumerate(phi_seq):
        if values[phi, list(x_seq[:t])].sum() > beta:
            return t
    return None


def verify_pigeonhole(F: FiniteFunctionClass, phi_seq: Sequence[int], x_seq: Sequence[int],
                      beta: float, omega: float, cap: Optional[int] = None) -> PigeonholeCheck:
    """
    Check sum_t |phi_t(x_t)| against pigeonhole_bound when every phi_t stays
    within beta on the points before it; a violated precondition is reported.
    """
    violated = _first_violation(F, phi_seq, x_seq, beta)
    values = np.abs(F.table)
    lhs = float(sum(values[phi, x] for phi, x in zip(phi_seq, x_seq)))
    if violated is not None:
        return PigeonholeCheck(precondition_ok=False, lhs=lhs, violated_at=violated + 1)
    d = eluder_dimension(F, omega, cap=cap).dimension
    rhs = pigeonhole_bound(d, F.bound, beta, omega, len(phi_seq))
    return PigeonholeCheck(precondition_ok=True, lhs=lhs, rhs=rhs, holds=lhs <= rhs, dimension=d)


def verify_large_value_count(F: FiniteFunctionClass, phi_seq: Sequence[int], x_seq: Sequence[int],
                             beta: float, eps: float, cap: Optional[int] = None) -> PigeonholeCheck:
    """Number of t with |phi_t(x_t)| > eps against large_value_count_bound"""
    _check_eps(eps)
    violated = _first_violation(F, phi_seq, x_seq, beta)
    values = np.abs(F.table)
    count = float(sum(values[phi, x] > eps for phi, x in zip(phi_seq, x_seq)))
    if violated is not None:
        return PigeonholeCheck(precondition_ok=False, lhs=count, violated_at=violated + 1)
    d = eluder_dimension(F, eps, cap=cap).dimension
    rhs = large_value_count_bound(d, beta, eps)
    return PigeonholeCheck(precondition_ok=True, lhs=count, rhs=rhs, holds=count <= rhs, dimension=d)


def linear_function_class(thetas: Sequence[Sequence[float]],
                          points: Sequence[Sequence[float]]) -> FiniteFunctionClass:
    """f_theta(x) = <theta, x> tabulated on the given points"""
    table = np.asarray(thetas, dtype=float) @ np.asarray(points, dtype=float).T
    return FiniteFunctionClass(domain_size=len(points), functions=table.tolist())
