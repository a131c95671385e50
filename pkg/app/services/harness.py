import asyncio
import json
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from app.config import settings
from app.models.experiment import BetaSpec, ExperimentConfig, RunSummary, SeedSummary
from app.models.learner import CandidateSet, RegretTrace
from app.models.pomdp import TabularPOMDP
from app.services.instances import build_candidates_from_spec, build_from_spec
from app.services.omle import (
    beta_default,
    build_candidate_set,
    mixture_value,
    mle_validity_check,
    multistep_omle_run,
    omle_run,
)
from app.services.pomdp_core import load_model, optimal_policy, validate
from app.utils.exceptions import ConfigurationException, LabException, UsageException
from app.utils.logger import setup_logger


logger = setup_logger(__name__)

TRACE_COLUMNS = ["k", "candidate", "opt_value", "true_value", "cum_regret", "conf_size", "contains_truth"]
OPTIMALITY_TOL = 1e-10


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Experiment config from .toml or .json"""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in (".toml", ".json"):
        raise UsageException(f"config '{path}' must end in .toml or .json")
    try:
        if suffix == ".toml":
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        else:
            raw = json.loads(path.read_text())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigurationException(f"{path}: not a valid {suffix[1:].upper()} document: {e}")
    return ExperimentConfig.model_validate(raw)


def trace_frame(trace: RegretTrace) -> pd.DataFrame:
    """Trace rows in the frozen CSV column order; multi-step traces add `samples`"""
    columns = TRACE_COLUMNS + (["samples"] if trace.m > 1 else [])
    return pd.DataFrame([record.model_dump() for record in trace.records], columns=columns)


class ExperimentHarness:
    """Runs one configured learner over all seeds and writes traces plus a summary"""

    def __init__(self, config: ExperimentConfig, base_dir: Union[str, Path] = "."):
        self.config = config
        self.base_dir = Path(base_dir)
        self.output_dir = self.base_dir / config.output_dir
        self.env = self._load_env()
        self.models = self._load_candidates()
        reference = build_candidate_set(self.models, config.alpha, config.m)
        self.margins = reference.margins
        self.beta = self._resolve_beta()

    def _load_env(self) -> TabularPOMDP:
        if self.config.env_path is not None:
            env = load_model(self.base_dir / self.config.env_path)
        else:
            spec = self.config.env_generator
            env = build_from_spec(spec.name, spec.params, np.random.default_rng(spec.seed))
        validate(env)
        return env

    def _load_candidates(self) -> List[TabularPOMDP]:
        if self.config.candidate_paths is not None:
            models = [load_model(self.base_dir / p) for p in self.config.candidate_paths]
        else:
            spec = self.config.candidate_generator
            models = build_candidates_from_spec(spec.name, spec.params, np.random.default_rng(spec.seed))
        for model in models:
            validate(model)
        return models

    def _resolve_beta(self) -> float:
        if not isinstance(self.config.beta, BetaSpec):
            return float(self.config.beta)
        S, A, O, H = self.env.dims
        return beta_default(
            S, A, O, H, self.config.K, self.config.beta.delta,
            c=self.config.beta.c, m=self.config.m,
        )

    @property
    def delta(self) -> float:
        return self.config.beta.delta if isinstance(self.config.beta, BetaSpec) else 0.1

    def _candidate_set(self) -> CandidateSet:
        # one per seed so that plan caches are never shared between threads
        return CandidateSet(
            models=self.models, margins=self.margins,
            alpha=self.config.alpha, m=self.config.m,
        )

    def run_seed(self, seed: int) -> SeedSummary:
        """One full learner run; writes the seed's CSV trace"""
        started = time.perf_counter()
        candidates = self._candidate_set()
        rng = np.random.default_rng(seed)
        cap = self.config.enumeration_cap
        try:
            if self.config.learner == "omle":
                trace = omle_run(self.env, candidates, self.config.K, self.beta, rng, cap)
            else:
                trace = multistep_omle_run(
                    self.env, candidates, self.config.K, self.beta, self.config.m, rng, cap
                )
        except LabException as e:
            logger.error(f"Seed {seed} failed: {e.detail}")
            raise

        ratio = None
        if self.config.validity_check:
            ratios = [
                r.ratio for r in mle_validity_check(trace, candidates, self.env, self.delta, cap)
                if r.ratio is not None
            ]
            ratio = max(ratios) if ratios else None

        self.output_dir.mkdir(parents=True, exist_ok=True)
        csv_path = self.output_dir / f"{self.config.name}_seed{seed}.csv"
        trace_frame(trace).to_csv(csv_path, index=False)

        records = trace.records
        return SeedSummary(
            seed=seed,
            final_regret=trace.cumulative_regret,
            containment_rate=trace.containment_rate,
            always_contained=all(r.contains_truth for r in records),
            conf_sizes=[r.conf_size for r in records],
            mixture_value=mixture_value(trace),
            final_policy_optimal=records[-1].true_value >= trace.optimal_value - OPTIMALITY_TOL,
            samples=len(trace.ledger.dataset),
            max_validity_ratio=ratio,
            wall_clock=time.perf_counter() - started,
            csv_path=str(csv_path),
        )

    async def run(self, progress: bool = True) -> RunSummary:
        """Fan seeds out over a thread pool; aggregation keeps the configured seed order"""
        seeds = self.config.seeds
        logger.info(
            f"Running '{self.config.name}': {self.config.learner}, K={self.config.K}, "
            f"beta={self.beta:.4f}, {len(seeds)} seeds, {settings.MAX_WORKERS} workers"
        )
        loop = asyncio.get_event_loop()
        with ThreadPoolExecutor(max_workers=settings.MAX_WORKERS) as pool, \
                tqdm(total=len(seeds), desc=self.config.name, disable=not progress) as bar:
            futures = []
            for seed in seeds:
                future = loop.run_in_executor(pool, self.run_seed, seed)
                future.add_done_callback(lambda _: bar.update(1))
                futures.append(future)
            results = await asyncio.gather(*futures)

        summary = RunSummary.aggregate(
            name=self.config.name,
            learner=self.config.learner,
            K=self.config.K,
            m=self.config.m,
            beta=self.beta,
            optimal_value=self._optimal_value(),
            seeds=list(results),
        )
        summary_path = self.output_dir / f"{self.config.name}_summary.json"
        summary_path.write_text(summary.model_dump_json(indent=2))
        logger.info(f"Wrote {len(results)} traces and {summary_path}")
        return summary

    def _optimal_value(self) -> float:
        return optimal_policy(self.env, self.config.enumeration_cap)[1]


def run_experiment(config_path: Union[str, Path], progress: bool = True,
                   output_dir: Optional[str] = None) -> Tuple[RunSummary, Path]:
    """Load a config file, run it to completion and return the summary with its path"""
    config_path = Path(config_path)
    config = load_config(config_path)
    if output_dir is not None:
        config = config.model_copy(update={"output_dir": output_dir})
    harness = ExperimentHarness(config, base_dir=config_path.parent)
    summary = asyncio.run(harness.run(progress=progress))
    return summary, harness.output_dir / f"{config.name}_summary.json"
