import json

import numpy as np
import pandas as pd
import pytest

from app.commands.lab_commands import parse_params, parse_policy_spec
from app.config import Settings, settings
from app.main import main
from app.models.experiment import ExperimentConfig
from app.models.policy import HistoryPolicy
from app.models.pomdp import TabularPOMDP
from app.services.harness import ExperimentHarness, load_config, run_experiment
from app.services.instances import combinatorial_lock_over, combinatorial_lock_under, random_weakly_revealing
from app.services.pomdp_core import load_model, save_model, trajectory_distribution
from app.utils.exceptions import ConfigurationException, EnumerationCapException, UsageException
from tests.conftest import identity_model


LOCK_TOML = """
name = "lock"
alpha = 0.3
K = 20
seeds = [0, 1]
output_dir = "out"

[env_generator]
name = "lock_under"
params = { H = 3, A = 2, alpha = 0.3, good_actions = [1, 1] }

[candidate_generator]
name = "lock_siblings"
params = { variant = "undercomplete", depth = 3, A = 2, alpha = 0.3 }

[beta]
c = 1.0
delta = 0.1
"""

HEADER = "k,candidate,opt_value,true_value,cum_regret,conf_size,contains_truth"


@pytest.fixture
def weak_model_path(tmp_path):
    model, _ = random_weakly_revealing(2, 2, 3, 3, 0.05, rng=np.random.default_rng(0))
    path = tmp_path / "weak.json"
    save_model(model, path)
    return path


@pytest.fixture
def lock_config(tmp_path):
    path = tmp_path / "lock.toml"
    path.write_text(LOCK_TOML)
    return path


class TestExitCodes:
    def test_no_arguments(self):
        assert main([]) == 1

    def test_missing_file(self, capsys, tmp_path):
        assert main(["check", str(tmp_path / "absent.json")]) == 1
        assert "no such file" in capsys.readouterr().err

    def test_invalid_model(self, capsys, tmp_path):
        model = identity_model()
        path = tmp_path / "broken.json"
        save_model(model, path)
        document = json.loads(path.read_text())
        document["trans"][0][0][0][0] = 0.9
        path.write_text(json.dumps(document))
        assert main(["check", str(path)]) == 2
        assert "T_{1,1} column 1" in capsys.readouterr().err

    def test_malformed_document(self, capsys, tmp_path):
        path = tmp_path / "partial.json"
        path.write_text(json.dumps({"S": 2, "A": 2, "O": 2, "H": 3}))
        assert main(["check", str(path)]) == 2

    def test_resource_cap(self, weak_model_path):
        assert main(["oracle", str(weak_model_path), "--cap", "10"]) == 3


class TestCheck:
    def test_weakly_revealing_model(self, capsys, weak_model_path):
        assert main(["check", str(weak_model_path)]) == 0
        out = capsys.readouterr().out
        assert "Validation: ok" in out
        assert "per step" in out
        assert "Confusable" not in out

    def test_overcomplete_model(self, capsys, tmp_path):
        path = tmp_path / "over.json"
        save_model(combinatorial_lock_over(2, 2, [1]), path)
        assert main(["check", str(path), "--m", "2"]) == 0
        out = capsys.readouterr().out
        assert "n/a (overcomplete" in out
        assert "2-step margin min_h sigma_S(M_h): 1" in out

    def test_witness_for_rank_deficient_emission(self, capsys, tmp_path):
        model = identity_model()
        blurred = TabularPOMDP(
            S=2, A=2, O=2, H=3, mu1=model.mu1, trans=model.trans,
            emis=np.full((3, 2, 2), 0.5), rewards=model.rewards,
        )
        path = tmp_path / "blurred.json"
        save_model(blurred, path)
        assert main(["check", str(path)]) == 0
        out = capsys.readouterr().out
        assert "Confusable mixtures at h=1" in out
        assert "nu1 = [1, 0]" in out
        assert "nu2 = [0, 1]" in out


class TestGen:
    def test_writes_metadata(self, capsys, tmp_path):
        out = tmp_path / "lock.json"
        params = '{"H": 3, "A": 2, "alpha": 0.25, "good_actions": [0, 1]}'
        assert main(["gen", "lock_under", "--params", params, "--seed", "4", "-o", str(out)]) == 0
        assert "Wrote lock_under instance" in capsys.readouterr().out
        document = json.loads(out.read_text())
        assert document["metadata"]["params"]["alpha"] == 0.25
        assert document["metadata"]["seed"] == 4
        assert load_model(out).dims == (6, 2, 7, 3)

    def test_unknown_generator(self, tmp_path):
        assert main(["gen", "maze", "-o", str(tmp_path / "x.json")]) == 1

    def test_bad_params(self, tmp_path):
        assert main(["gen", "lock_under", "--params", "{H: 3}", "-o", str(tmp_path / "x.json")]) == 1

    def test_parse_params(self):
        assert parse_params(None) == {}
        assert parse_params('{"S": 2}') == {"S": 2}
        with pytest.raises(UsageException):
            parse_params("[1, 2]")


class TestOracle:
    def test_single_step(self, capsys, weak_model_path):
        assert main(["oracle", str(weak_model_path), "--policy", "random:3"]) == 0
        out = capsys.readouterr().out
        deviation = float(out.split("Max |P_oom - P_forward|: ")[1].split()[0])
        assert deviation < 1e-10
        assert "Trajectories enumerated: 216" in out
        assert "VIOLATED" not in out

    def test_overcomplete_needs_window(self, tmp_path):
        path = tmp_path / "over.json"
        save_model(combinatorial_lock_over(3, 2, [1, 0]), path)
        assert main(["oracle", str(path)]) == 1
        assert main(["oracle", str(path), "--m", "3", "--policy", "optimal"]) == 0

    def test_policy_specs(self):
        model = combinatorial_lock_under(3, 2, 0.3, good_actions=[1, 1])
        assert parse_policy_spec("open-loop:1,1,0", model).tables[1].shape == (7 * 2 * 7, 2)
        with pytest.raises(UsageException):
            parse_policy_spec("open-loop:1,1", model)
        with pytest.raises(UsageException):
            parse_policy_spec("softmax", model)


class TestEluder:
    def test_prints_ordering(self, capsys, tmp_path):
        path = tmp_path / "class.json"
        path.write_text(json.dumps({"domain_size": 3, "functions": np.eye(3).tolist()}))
        assert main(["eluder", str(path), "--eps", "0.5"]) == 0
        out = capsys.readouterr().out
        assert "l1 eluder dimension: 3" in out
        assert "l1 <= l2: yes" in out

    def test_bad_class(self, capsys, tmp_path):
        path = tmp_path / "ragged.json"
        path.write_text(json.dumps({"domain_size": 2, "functions": [[1.0]]}))
        assert main(["eluder", str(path), "--eps", "0.5"]) == 2
        assert "ragged.json" in capsys.readouterr().err

    def test_search_cap(self, tmp_path):
        path = tmp_path / "class.json"
        path.write_text(json.dumps({"domain_size": 6, "functions": np.eye(6).tolist()}))
        assert main(["eluder", str(path), "--eps", "0.5", "--cap", "3"]) == 3


class TestLearn:
    def test_traces_and_summary(self, capsys, lock_config, tmp_path):
        assert main(["learn", str(lock_config), "--no-progress"]) == 0
        assert "Truth in every confidence set" in capsys.readouterr().out

        out_dir = tmp_path / "out"
        for seed in (0, 1):
            csv_path = out_dir / f"lock_seed{seed}.csv"
            assert csv_path.read_text().splitlines()[0] == HEADER
            frame = pd.read_csv(csv_path)
            assert len(frame) == 20
            assert frame["cum_regret"].is_monotonic_increasing

        summary = json.loads((out_dir / "lock_summary.json").read_text())
        assert summary["schema_version"] == 1
        assert [s["seed"] for s in summary["seeds"]] == [0, 1]
        assert summary["beta"] == pytest.approx(
            3 * (36 * 2 + 6 * 7) * np.log(6 * 2 * 7 * 3 * 20) + np.log(20 / 0.1)
        )

    def test_runs_are_reproducible(self, lock_config, tmp_path):
        assert main(["learn", str(lock_config), "--no-progress", "--output-dir", str(tmp_path / "a")]) == 0
        assert main(["learn", str(lock_config), "--no-progress", "--output-dir", str(tmp_path / "b")]) == 0
        for seed in (0, 1):
            first = (tmp_path / "a" / f"lock_seed{seed}.csv").read_bytes()
            second = (tmp_path / "b" / f"lock_seed{seed}.csv").read_bytes()
            assert first == second

    def test_singleton_grid_has_zero_regret(self, tmp_path):
        env, _ = random_weakly_revealing(2, 2, 2, 3, 0.05, rng=np.random.default_rng(9))
        save_model(env, tmp_path / "env.json")
        config = {
            "name": "single", "env_path": "env.json", "candidate_paths": ["env.json"],
            "K": 5, "beta": 10.0, "seeds": [3],
        }
        path = tmp_path / "single.json"
        path.write_text(json.dumps(config))
        assert main(["learn", str(path), "--no-progress"]) == 0
        frame = pd.read_csv(tmp_path / "results" / "single_seed3.csv")
        assert np.allclose(frame["cum_regret"], 0.0, atol=1e-10)
        assert frame["contains_truth"].all()

    def test_multistep_trace_counts_samples(self, tmp_path):
        config = {
            "name": "over",
            "env_generator": {"name": "lock_over", "params": {"m": 2, "A": 2, "good_actions": [1]}},
            "candidate_generator": {"name": "lock_siblings",
                                    "params": {"variant": "overcomplete", "depth": 2, "A": 2}},
            "alpha": 0.5, "learner": "multistep_omle", "m": 2, "K": 10, "seeds": [0],
        }
        path = tmp_path / "over.json"
        path.write_text(json.dumps(config))
        assert main(["learn", str(path), "--no-progress"]) == 0
        frame = pd.read_csv(tmp_path / "results" / "over_seed0.csv")
        assert list(frame.columns) == HEADER.split(",") + ["samples"]
        assert frame["samples"].tolist() == [2 * k for k in range(1, 11)]

    def test_config_errors(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"K": 5, "seeds": [0]}))
        assert main(["learn", str(path), "--no-progress"]) == 2
        with pytest.raises(UsageException):
            load_config(tmp_path / "config.yaml")

    @pytest.mark.parametrize("name,text", [
        ("broken.toml", "name = \"lock\nK = 5\n"),
        ("broken.json", "{\"name\": \"lock\", \"K\": }"),
    ])
    def test_undecodable_config(self, capsys, tmp_path, name, text):
        path = tmp_path / name
        path.write_text(text)
        assert main(["learn", str(path), "--no-progress"]) == 2
        assert name in capsys.readouterr().err
        with pytest.raises(ConfigurationException):
            load_config(path)

    def test_run_experiment_reports_summary_path(self, lock_config, tmp_path):
        summary, summary_path = run_experiment(lock_config, progress=False, output_dir="direct")
        assert summary_path == tmp_path / "direct" / "lock_summary.json"
        assert json.loads(summary_path.read_text())["beta"] == pytest.approx(summary.beta)

    @pytest.mark.asyncio
    async def test_harness_keeps_seed_order(self, lock_config, tmp_path):
        config = load_config(lock_config).model_copy(update={"seeds": [5, 2, 7], "K": 5})
        harness = ExperimentHarness(config, base_dir=tmp_path)
        summary = await harness.run(progress=False)
        assert [s.seed for s in summary.seeds] == [5, 2, 7]
        assert summary.mean_final_regret == pytest.approx(
            np.mean([s.final_regret for s in summary.seeds])
        )
        assert (tmp_path / "out" / "lock_summary.json").exists()

    def test_config_schema(self):
        example = ExperimentConfig.model_config["json_schema_extra"]["example"]
        assert ExperimentConfig.model_validate(example).K == 200


class TestBench:
    def test_small_corpus(self, capsys):
        assert main(["bench", "--n-models", "2", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        deviation = float(out.split("Max |P_oom - P_forward|: ")[1].split()[0])
        assert deviation < 1e-10


class TestSettings:
    def test_environment_override(self, monkeypatch):
        monkeypatch.setenv("OMLELAB_ENUMERATION_CAP", "10")
        assert Settings().ENUMERATION_CAP == 10

    def test_cap_is_read_at_call_time(self, monkeypatch):
        monkeypatch.setattr(settings, "ENUMERATION_CAP", 10)
        model = identity_model()
        with pytest.raises(EnumerationCapException):
            trajectory_distribution(model, HistoryPolicy.uniform(2, 2, 3))
