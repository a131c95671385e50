import json
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from app.config import settings
from app.models.function_class import FiniteFunctionClass
from app.models.policy import HistoryPolicy
from app.models.pomdp import TabularPOMDP
from app.models.reports import (
    BenchReport,
    CheckReport,
    ConfusableWitness,
    EluderReport,
    GenReport,
    OracleReport,
)
from app.reports.learning_reports import create_eluder_report, create_learn_report
from app.reports.model_reports import (
    create_bench_report,
    create_check_report,
    create_gen_report,
    create_oracle_report,
)
from app.services.eluder import eluder_dimension, l2_eluder_dimension
from app.services.harness import run_experiment
from app.services.instances import build_from_spec, random_multistep_revealing, random_weakly_revealing
from app.services.oom import (
    find_confusable_mixtures,
    multi_step_operators,
    multistep_revealing_margin,
    operator_norm_11,
    operator_norm_2,
    single_step_operators,
    trajectory_probabilities_oom,
)
from app.services.pomdp_core import (
    load_model,
    optimal_policy,
    save_model,
    trajectory_probabilities,
    validate,
)
from app.utils.exceptions import ConfigurationException, LabException, UsageException
from app.utils.helpers import sigma_k
from app.utils.logger import setup_logger


logger = setup_logger(__name__)


def _dims(model: TabularPOMDP) -> Dict[str, int]:
    return {"S": model.S, "A": model.A, "O": model.O, "H": model.H}


def parse_policy_spec(spec: str, model: TabularPOMDP) -> HistoryPolicy:
    """uniform | random:SEED | optimal | open-loop:a1,a2,...,aH"""
    kind, _, arg = spec.partition(":")
    if kind == "uniform":
        return HistoryPolicy.uniform(model.O, model.A, model.H)
    if kind == "random":
        seed = int(arg) if arg else 0
        return HistoryPolicy.random(model.O, model.A, model.H, np.random.default_rng(seed))
    if kind == "optimal":
        return optimal_policy(model)[0]
    if kind == "open-loop":
        try:
            actions = [int(a) for a in arg.split(",") if a.strip()]
        except ValueError:
            raise UsageException(f"open-loop actions must be integers, got '{arg}'")
        if len(actions) != model.H or any(not 0 <= a < model.A for a in actions):
            raise UsageException(f"open-loop needs {model.H} actions in [0, {model.A})")
        return HistoryPolicy.open_loop(actions, model.O, model.A)
    raise UsageException(
        f"unknown policy '{spec}'; use uniform, random:SEED, optimal or open-loop:a1,...,aH"
    )


class LabCommands:
    """Command implementations; each returns the rendered report"""

    def cmd_check(self, model_path: str, ms: Optional[List[int]] = None) -> str:
        """Validation status, revealing margins and a confusable-mixture witness"""
        logger.info(f"Checking {model_path}")
        model = load_model(model_path)
        validate(model)

        report = CheckReport(path=str(model_path), dims=_dims(model), valid=True)
        step_sigmas = [sigma_k(model.emis[h], model.S) for h in range(model.H)]
        if model.S <= model.O:
            report.step_margins = step_sigmas
            report.single_step_margin = min(step_sigmas)
        for m in ms or []:
            report.multistep_margins[m] = multistep_revealing_margin(model, m)

        worst = int(np.argmin(step_sigmas))
        if step_sigmas[worst] <= settings.SVD_TOL:
            pair = find_confusable_mixtures(model.emis[worst])
            if pair is not None:
                report.witness = ConfusableWitness(
                    h=worst + 1, sigma=step_sigmas[worst],
                    nu1=pair[0].tolist(), nu2=pair[1].tolist(),
                )
        return create_check_report(report)

    def cmd_gen(self, generator: str, params: Dict[str, Any], out: str, seed: int = 0) -> str:
        """Write a generated instance with its parameters echoed into metadata"""
        logger.info(f"Generating {generator} with {params}")
        model = build_from_spec(generator, params, np.random.default_rng(seed))
        validate(model)
        metadata = {"generator": generator, "params": params, "seed": seed}
        save_model(model, out, metadata)
        return create_gen_report(GenReport(generator=generator, path=out, dims=_dims(model)))

    def cmd_learn(self, config_path: str, output_dir: Optional[str] = None,
                  progress: bool = True) -> str:
        """Run the configured learner over all seeds"""
        summary, summary_path = run_experiment(config_path, progress=progress, output_dir=output_dir)
        return create_learn_report(summary, str(summary_path))

    def cmd_eluder(self, class_path: str, eps: float, cap: Optional[int] = None) -> str:
        """l1 and l2 eluder dimensions of a function-class file"""
        try:
            function_class = FiniteFunctionClass.model_validate_json(Path(class_path).read_text())
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(part) for part in first["loc"]) or "<root>"
            raise ConfigurationException(f"{class_path}: field '{field}': {first['msg']}")

        l1 = eluder_dimension(function_class, eps, cap=cap)
        l2 = l2_eluder_dimension(function_class, eps, cap=cap)
        report = EluderReport(
            path=str(class_path), epsilon=eps,
            l1_dimension=l1.dimension, l1_witness=l1.witness,
            l2_dimension=l2.dimension, l2_witness=l2.witness,
            nodes=l1.nodes + l2.nodes,
        )
        if l1.dimension > l2.dimension:
            logger.error(f"l1 dimension {l1.dimension} exceeds l2 dimension {l2.dimension}")
            raise LabException(create_eluder_report(report))
        return create_eluder_report(report)

    def cmd_oracle(self, model_path: str, policy_spec: str = "uniform",
                   m: Optional[int] = None, cap: Optional[int] = None) -> str:
        """Max deviation between operator and forward probabilities over all trajectories"""
        model = load_model(model_path)
        validate(model)
        policy = parse_policy_spec(policy_spec, model)
        if m is None:
            if model.S > model.O:
                raise UsageException(
                    f"model is overcomplete (S={model.S} > O={model.O}); pass --m for m-step operators"
                )
            m = 1
        oom = single_step_operators(model) if m == 1 else multi_step_operators(model, m)

        forward = trajectory_probabilities(model, policy, cap)
        operators = trajectory_probabilities_oom(oom, policy, cap)
        norms = oom.ops.reshape(-1, oom.dim, oom.dim)
        norm_11 = max((operator_norm_11(b) for b in norms), default=0.0)
        norm_2 = max((operator_norm_2(b) for b in norms), default=0.0)

        report = OracleReport(
            path=str(model_path), policy_spec=policy_spec, m=m, margin=oom.margin,
            trajectories=len(forward),
            max_deviation=float(np.abs(operators - forward).max()),
            forward_normalization=abs(float(forward.sum()) - 1.0),
            oom_normalization=abs(float(operators.sum()) - 1.0),
            norm_11_max=norm_11,
            norm_11_bound=np.sqrt(model.S) / oom.margin if m == 1 else None,
            norm_2_max=norm_2,
            norm_2_bound=model.S / oom.margin if m == 1 else None,
        )
        return create_oracle_report(report)

    def cmd_bench(self, n_models: int = 50, seed: int = 0) -> str:
        """Time the operator-equivalence corpus"""
        rng = np.random.default_rng(seed)
        n_over = max(1, (2 * n_models) // 5)
        started = time.perf_counter()
        deviation, normalization = 0.0, 0.0

        corpus = []
        for i in range(n_models):
            model, _ = random_weakly_revealing(2 + i % 2, 2, 3, 3, 0.05, rng=rng)
            corpus.append((model, single_step_operators(model)))
        for _ in range(n_over):
            model, _ = random_multistep_revealing(4, 2, 3, 3, 2, 0.05, rng=rng)
            corpus.append((model, multi_step_operators(model, 2)))

        for model, oom in corpus:
            policy = HistoryPolicy.random(model.O, model.A, model.H, rng)
            forward = trajectory_probabilities(model, policy)
            operators = trajectory_probabilities_oom(oom, policy)
            deviation = max(deviation, float(np.abs(operators - forward).max()))
            normalization = max(
                normalization,
                abs(float(forward.sum()) - 1.0),
                abs(float(operators.sum()) - 1.0),
            )

        report = BenchReport(
            undercomplete_models=n_models,
            overcomplete_models=n_over,
            max_deviation=deviation,
            max_normalization_error=normalization,
            seconds=time.perf_counter() - started,
        )
        logger.info(f"Bench finished in {report.seconds:.2f} s")
        return create_bench_report(report)


def parse_params(text: Optional[str]) -> Dict[str, Any]:
    """Generator parameters given as a JSON object on the command line"""
    if not text:
        return {}
    try:
        params = json.loads(text)
    except json.JSONDecodeError as e:
        raise UsageException(f"--params is not valid JSON: {e}")
    if not isinstance(params, dict):
        raise UsageException("--params must be a JSON object")
    return params
