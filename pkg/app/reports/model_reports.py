"""
Reports for model inspection: check, gen, oracle, bench
"""
from typing import List, Optional

from app.models.reports import BenchReport, CheckReport, GenReport, OracleReport


def _fmt_dims(dims: dict) -> str:
    return ", ".join(f"{key}={value}" for key, value in dims.items())


def _fmt_vector(values: List[float]) -> str:
    return "[" + ", ".join(f"{v:.6g}" for v in values) + "]"


def _fmt_check(ok: Optional[bool]) -> str:
    if ok is None:
        return "n/a"
    return "ok" if ok else "VIOLATED"


def create_check_report(report: CheckReport) -> str:
    """Validation status and revealing margins of one model file"""
    if report.single_step_margin is None:
        single = "n/a (overcomplete, S > O)"
    else:
        per_step = _fmt_vector(report.step_margins)
        single = f"{report.single_step_margin:.12g}  per step {per_step}"

    lines = [
        f"Model: {report.path}",
        f"Dimensions: {_fmt_dims(report.dims)}",
        f"Validation: {'ok' if report.valid else 'FAILED'}",
        f"Single-step margin min_h sigma_S(O_h): {single}",
    ]
    for m, margin in sorted(report.multistep_margins.items()):
        lines.append(f"{m}-step margin min_h sigma_S(M_h): {margin:.12g}")

    if report.witness is not None:
        w = report.witness
        lines += [
            f"Confusable mixtures at h={w.h} (sigma_S = {w.sigma:.3e}):",
            f"  nu1 = {_fmt_vector(w.nu1)}",
            f"  nu2 = {_fmt_vector(w.nu2)}",
        ]
    return "\n".join(lines)


def create_gen_report(report: GenReport) -> str:
    margin = "" if report.margin is None else f", margin {report.margin:.6g}"
    return f"Wrote {report.generator} instance ({_fmt_dims(report.dims)}{margin}) to {report.path}"


def create_oracle_report(report: OracleReport) -> str:
    """Operator-model vs forward-algorithm equivalence"""
    kind = "single-step" if report.m == 1 else f"{report.m}-step"
    bound_11 = "" if report.norm_11_bound is None else f" (bound sqrt(S)/alpha = {report.norm_11_bound:.6g})"
    bound_2 = "" if report.norm_2_bound is None else f" (bound S/alpha = {report.norm_2_bound:.6g})"
    return f"""Model: {report.path}
Policy: {report.policy_spec}
Operators: {kind}, revealing margin alpha = {report.margin:.12g}
Trajectories enumerated: {report.trajectories}
Max |P_oom - P_forward|: {report.max_deviation:.3e}
Normalization |sum - 1|: forward {report.forward_normalization:.3e}, operators {report.oom_normalization:.3e}
max ||B_h(o,a)||_(1,1): {report.norm_11_max:.6g}{bound_11} {_fmt_check(report.norm_11_ok)}
max ||B_h(o,a)||_2: {report.norm_2_max:.6g}{bound_2} {_fmt_check(report.norm_2_ok)}"""


def create_bench_report(report: BenchReport) -> str:
    return f"""Operator equivalence corpus: {report.undercomplete_models} undercomplete, {report.overcomplete_models} overcomplete (m=2)
Max |P_oom - P_forward|: {report.max_deviation:.3e}
Max normalization error: {report.max_normalization_error:.3e}
Runtime: {report.seconds:.2f} s"""
