from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.models.oom import EmissionActionMatrix, ObservableOperatorModel
from app.models.policy import HistoryPolicy
from app.models.pomdp import TabularPOMDP
from app.utils.exceptions import (
    AssumptionViolationException,
    EnumerationCapException,
    UsageException,
)
from app.utils.helpers import action_windows, history_index, pseudo_inverse, sigma_k, window_row
from app.utils.logger import setup_logger


logger = setup_logger(__name__)


# ---------------------------------------------------------------------------
# Emission-action matrices and margins
# ---------------------------------------------------------------------------

def _window_block(model: TabularPOMDP, h: int, actions: Sequence[int]) -> np.ndarray:
    # joint[p, s_cur, s_start] over observation prefixes p
    S, O = model.S, model.O
    joint = np.eye(S)[None, :, :]
    for j in range(len(actions) + 1):
        emitted = model.emis[h + j][None, :, :, None] * joint[:, None, :, :]
        emitted = emitted.reshape(-1, S, S)
        if j == len(actions):
            return emitted.sum(axis=1)
        joint = np.einsum("tc,pcs->pts", model.trans[h + j, actions[j]], emitted)
    raise AssertionError("unreachable")


def build_m_step_matrix(model: TabularPOMDP, h: int, m: int) -> EmissionActionMatrix:
    """
    M_h for the window of steps h..h+m-1 (0-based).

    Args:
        model: POMDP
        h: First step of the window
        m: Window length

    Returns:
        EmissionActionMatrix with A^(m-1) stacked O^m x S blocks
    """
    if m < 1 or h < 0 or h + m > model.H:
        raise UsageException(
            f"window of length {m} at step {h + 1} overflows horizon {model.H}"
        )
    if m == 1:
        matrix = np.array(model.emis[h])
    else:
        matrix = np.vstack([
            _window_block(model, h, actions) for actions in action_windows(model.A, m - 1)
        ])
    return EmissionActionMatrix(h=h, m=m, O=model.O, A=model.A, matrix=matrix)


def weakly_revealing_margin(model: TabularPOMDP) -> float:
    """min_h sigma_S(O_h)"""
    if model.S > model.O:
        raise AssumptionViolationException(
            f"Model is overcomplete (S={model.S} > O={model.O}); "
            f"Assumption 1 does not apply, use the m-step margin (Assumption 2)"
        )
    return min(sigma_k(model.emis[h], model.S) for h in range(model.H))


def multistep_revealing_margin(model: TabularPOMDP, m: int) -> float:
    """min over windows h = 0..H-m of sigma_S(M_h)"""
    if m < 1 or m > model.H:
        raise UsageException(f"window m={m} must lie in [1, H={model.H}]")
    return min(
        sigma_k(build_m_step_matrix(model, h, m).matrix, model.S)
        for h in range(model.H - m + 1)
    )


def block_margins(matrix: EmissionActionMatrix) -> List[float]:
    """sigma_S(M_{h,a}) for every action window a"""
    S = matrix.matrix.shape[1]
    return [sigma_k(matrix.block(i), S) for i in range(matrix.n_blocks)]


def find_confusable_mixtures(emis_matrix: np.ndarray,
                             svd_tol: Optional[float] = None) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """
    Two disjoint-support state distributions with the same observation law.

    Returns None when sigma_S of the emission matrix exceeds svd_tol.
    """
    svd_tol = settings.SVD_TOL if svd_tol is None else svd_tol
    emis_matrix = np.asarray(emis_matrix, dtype=float)
    S = emis_matrix.shape[1]
    if sigma_k(emis_matrix, S) > svd_tol:
        return None

    _, _, vt = np.linalg.svd(emis_matrix, full_matrices=True)
    z = vt[-1].copy()
    z[np.abs(z) <= 1e-15] = 0.0
    first = np.flatnonzero(z)[0]
    if z[first] < 0:
        z = -z
    positive = np.maximum(z, 0.0)
    negative = np.maximum(-z, 0.0)
    return positive / positive.sum(), negative / negative.sum()


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def _build_operators(model: TabularPOMDP, m: int, svd_tol: float) -> ObservableOperatorModel:
    windows = [build_m_step_matrix(model, h, m).matrix for h in range(model.H - m + 1)]
    margins = [sigma_k(matrix, model.S) for matrix in windows]
    for h, sigma in enumerate(margins):
        if sigma <= svd_tol:
            label = "O_h" if m == 1 else "M_h"
            raise AssumptionViolationException(
                f"Assumption {1 if m == 1 else 2} violated, sigma_S({label})={sigma:.3e} at h={h + 1}",
                h=h + 1,
                sigma=sigma,
            )

    dim = windows[0].shape[0]
    ops = np.zeros((model.H - m, model.O, model.A, dim, dim))
    for h in range(model.H - m):
        right = pseudo_inverse(windows[h], svd_tol)
        for a in range(model.A):
            left = windows[h + 1] @ model.trans[h, a]
            for o in range(model.O):
                ops[h, o, a] = (left * model.emis[h, o][None, :]) @ right

    return ObservableOperatorModel(
        m=m, S=model.S, A=model.A, O=model.O, H=model.H,
        margin=min(margins),
        b0=windows[0] @ model.mu1,
        ops=ops,
    )


def single_step_operators(model: TabularPOMDP, svd_tol: Optional[float] = None) -> ObservableOperatorModel:
    """B_h(o,a) = O_{h+1} T_{h,a} diag(O_h(o|.)) O_h^+, b0 = O_1 mu1"""
    svd_tol = settings.SVD_TOL if svd_tol is None else svd_tol
    if model.S > model.O:
        raise AssumptionViolationException(
            f"Assumption 1 violated: model is overcomplete (S={model.S} > O={model.O})"
        )
    return _build_operators(model, 1, svd_tol)


def multi_step_operators(model: TabularPOMDP, m: int,
                         svd_tol: Optional[float] = None) -> ObservableOperatorModel:
    """B_h(o,a) = M_{h+1} T_{h,a} diag(O_h(o|.)) M_h^+, b0 = M_1 mu1"""
    svd_tol = settings.SVD_TOL if svd_tol is None else svd_tol
    if m < 1 or m > model.H:
        raise UsageException(f"window m={m} must lie in [1, H={model.H}]")
    return _build_operators(model, m, svd_tol)


def _check_alphabet(oom: ObservableOperatorModel, policy: HistoryPolicy) -> None:
    if (policy.O, policy.A, policy.H) != (oom.O, oom.A, oom.H):
        raise UsageException(
            f"policy alphabet (O={policy.O}, A={policy.A}, H={policy.H}) does not match "
            f"operator model (O={oom.O}, A={oom.A}, H={oom.H})"
        )


def belief_vector(oom: ObservableOperatorModel, prefix: Sequence[Tuple[int, int]]) -> np.ndarray:
    """b(tau_h) = B_h(o_h,a_h) ... B_1(o_1,a_1) b0"""
    if len(prefix) > oom.n_steps:
        raise UsageException(f"prefix of length {len(prefix)} exceeds H-m = {oom.n_steps}")
    belief = np.array(oom.b0)
    for h, (obs, action) in enumerate(prefix):
        belief = oom.ops[h, obs, action] @ belief
    return belief


def trajectory_probability_oom(oom: ObservableOperatorModel, policy: HistoryPolicy,
                               traj: Sequence[Tuple[int, int]]) -> float:
    """pi(tau) * e_u^T B ... B b0 with u the final observation window; not clamped"""
    _check_alphabet(oom, policy)
    if len(traj) != oom.H:
        raise UsageException(f"trajectory has {len(traj)} steps, expected {oom.H}")
    split = oom.n_steps
    belief = belief_vector(oom, traj[:split])
    window = traj[split:]
    row = window_row([a for _, a in window[:-1]], [o for o, _ in window], oom.O, oom.A)

    weight = 1.0
    for h, (obs, action) in enumerate(traj):
        weight *= float(policy.tables[h][history_index(traj[:h], obs, oom.O, oom.A), action])
    return weight * float(belief[row])


def _expand_beliefs(ops: np.ndarray, beliefs: np.ndarray) -> np.ndarray:
    return np.einsum("oaed,nd->noae", ops, beliefs).reshape(-1, beliefs.shape[1])


def trajectory_probabilities_oom(oom: ObservableOperatorModel, policy: HistoryPolicy,
                                 cap: Optional[int] = None) -> np.ndarray:
    """Operator probabilities of every trajectory, flat in trajectory_index order"""
    _check_alphabet(oom, policy)
    O, A, H, m = oom.O, oom.A, oom.H, oom.m
    cap = settings.ENUMERATION_CAP if cap is None else cap
    if (O * A) ** H > cap:
        raise EnumerationCapException(
            f"Enumeration too large: (O*A)^H = {(O * A) ** H} exceeds cap {cap}"
        )

    beliefs = oom.b0[None, :]
    for h in range(oom.n_steps):
        beliefs = _expand_beliefs(oom.ops[h], beliefs)

    # belief rows are (a_1..a_{m-1}, o_1..o_m); interleave to o_1, a_1, ..., o_m
    n = beliefs.shape[0]
    window = beliefs.reshape([n] + [A] * (m - 1) + [O] * m)
    order = [0]
    for j in range(m - 1):
        order += [m + j, 1 + j]
    order.append(2 * m - 1)
    window = np.transpose(window, order)
    operator_part = np.broadcast_to(window[..., None], window.shape + (A,)).reshape(-1)

    weights = np.ones(1)
    for h in range(H):
        rows = weights.shape[0]
        weights = (weights[:, None, None] * policy.tables[h].reshape(rows, O, A)).reshape(-1)
    return weights * operator_part


def _check_prefix_cap(oom: ObservableOperatorModel, h: int, cap: Optional[int]) -> None:
    cap = settings.ENUMERATION_CAP if cap is None else cap
    if h < 0 or h > oom.n_steps:
        raise UsageException(f"h={h} must lie in [0, H-m = {oom.n_steps}]")
    size = (oom.O * oom.A) ** h
    if size > cap:
        raise EnumerationCapException(
            f"Enumeration too large: (O*A)^h = {size} exceeds cap {cap}"
        )


def belief_mass(oom: ObservableOperatorModel, policy: HistoryPolicy, h: int,
                cap: Optional[int] = None) -> float:
    """Sum over tau_h of ||b(tau_h)||_1 * pi(tau_h)"""
    _check_alphabet(oom, policy)
    _check_prefix_cap(oom, h, cap)
    beliefs = oom.b0[None, :]
    weights = np.ones(1)
    for j in range(h):
        n = beliefs.shape[0]
        pi = policy.tables[j].reshape(n, oom.O, oom.A)
        weights = (weights[:, None, None] * pi).reshape(-1)
        beliefs = _expand_beliefs(oom.ops[j], beliefs)
    return float((np.abs(beliefs).sum(axis=1) * weights).sum())


# ---------------------------------------------------------------------------
# Norm helpers
# ---------------------------------------------------------------------------

def operator_norm_11(matrix: np.ndarray) -> float:
    """Maximum absolute column sum"""
    return float(np.abs(np.asarray(matrix, dtype=float)).sum(axis=0).max())


def operator_norm_2(matrix: np.ndarray) -> float:
    """Largest singular value"""
    return float(np.linalg.norm(np.asarray(matrix, dtype=float), ord=2))


def product_error_decomposition(oom_true: ObservableOperatorModel, oom_est: ObservableOperatorModel,
                                policy: HistoryPolicy, h: int,
                                cap: Optional[int] = None) -> Tuple[float, float]:
    """
    Both sides of the operator-product triangle inequality at depth h.

    lhs = sum_{tau_h} ||b_est(tau_h) - b_true(tau_h)||_1 pi(tau_h)
    rhs = kappa * (sum_{j<=h} sum_{tau_j} ||(B_est_j - B_true_j) b_true(tau_{j-1})||_1 pi(tau_j)
                   + ||b0_est - b0_true||_1)

    kappa = A^(m-1) sqrt(S) / alpha, where alpha is the smaller of the two
    revealing margins; the bound on the estimated products needs the
    estimate's pseudo-inverse, so the true margin alone is not enough.
    """
    if (oom_true.m, oom_true.S, oom_true.A, oom_true.O, oom_true.H) != \
            (oom_est.m, oom_est.S, oom_est.A, oom_est.O, oom_est.H):
        raise UsageException("operator models have different dimensions")
    _check_alphabet(oom_true, policy)
    _check_prefix_cap(oom_true, h, cap)

    true_beliefs = oom_true.b0[None, :]
    est_beliefs = oom_est.b0[None, :]
    weights = np.ones(1)
    one_step_errors = 0.0
    for j in range(h):
        n = true_beliefs.shape[0]
        pi = policy.tables[j].reshape(n, oom_true.O, oom_true.A)
        weights = (weights[:, None, None] * pi).reshape(-1)
        true_next = _expand_beliefs(oom_true.ops[j], true_beliefs)
        crossed = _expand_beliefs(oom_est.ops[j], true_beliefs)
        one_step_errors += float((np.abs(crossed - true_next).sum(axis=1) * weights).sum())
        est_beliefs = _expand_beliefs(oom_est.ops[j], est_beliefs)
        true_beliefs = true_next

    lhs = float((np.abs(est_beliefs - true_beliefs).sum(axis=1) * weights).sum())
    initial_error = float(np.abs(oom_est.b0 - oom_true.b0).sum())
    alpha = min(oom_true.margin, oom_est.margin)
    if alpha <= 0.0:
        return lhs, float("inf")
    kappa = oom_true.A ** (oom_true.m - 1) * np.sqrt(oom_true.S) / alpha
    return lhs, float(kappa * (one_step_errors + initial_error))


def oom_to_dict(oom: ObservableOperatorModel) -> Dict[str, Any]:
    """Debugging dump; not a stable format"""
    return {
        "dim": oom.dim,
        "m": oom.m,
        "S": oom.S,
        "A": oom.A,
        "O": oom.O,
        "H": oom.H,
        "margin": oom.margin,
        "b0": oom.b0.tolist(),
        "ops": oom.ops.tolist(),
    }
