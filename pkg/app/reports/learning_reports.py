"""
Reports for learner runs and eluder searches
"""
from app.models.experiment import RunSummary
from app.models.reports import EluderReport


def create_learn_report(summary: RunSummary, summary_path: str) -> str:
    """Aggregate of a batch run, one line per seed"""
    per_seed = []
    for s in summary.seeds:
        per_seed.append(
            f"  seed {s.seed}: regret {s.final_regret:.4f}, containment {s.containment_rate:.2%}, "
            f"mixture value {s.mixture_value:.4f}, samples {s.samples} -> {s.csv_path}"
        )
    ratio = "n/a" if summary.max_validity_ratio is None else f"{summary.max_validity_ratio:.4g}"
    seeds_text = "\n".join(per_seed)

    return f"""Run: {summary.name} ({summary.learner}, K={summary.K}, m={summary.m})
beta = {summary.beta:.6g}, V* = {summary.optimal_value:.6g}
{seeds_text}
Final regret: mean {summary.mean_final_regret:.4f}, std {summary.std_final_regret:.4f}
Truth in every confidence set: {summary.always_contained_fraction:.2%} of seeds
Final policy optimal: {summary.final_optimal_fraction:.2%} of seeds
Mean mixture value: {summary.mean_mixture_value:.4f}
Max squared-TV / likelihood ratio: {ratio}
Summary: {summary_path}"""


def create_eluder_report(report: EluderReport) -> str:
    ordering = "yes" if report.l1_dimension <= report.l2_dimension else "NO"
    return f"""Function class: {report.path}
epsilon: {report.epsilon:g}
l1 eluder dimension: {report.l1_dimension}  witness {report.l1_witness}
l2 eluder dimension: {report.l2_dimension}  witness {report.l2_witness}
l1 <= l2: {ordering}
Search nodes: {report.nodes}"""
