import json
from pathlib import Path

from click.testing import CliRunner

from cbfrl.cli import main

TINY_CONFIG = """
[experiment]
env = pendulum
algorithm = safe_rpg
replications = 2
base_seed = 5
output_dir = results

[pendulum]
theta_bound = 1.0
episode_len = 15

[safe_rpg]
max_iterations = 6
eval_interval = 3
eval_episodes = 2
hidden = 8
"""


class TestPrintConfig:
    def test_prints_ini(self):
        result = CliRunner().invoke(main, ["print-config", "pendulum", "ppo_beta"])
        assert result.exit_code == 0
        assert "[experiment]" in result.output
        assert "algorithm = ppo_beta" in result.output

    def test_unknown_pair_exits_2(self):
        result = CliRunner().invoke(main, ["print-config", "pendulum", "dqn"])
        assert result.exit_code == 2


class TestRun:
    def test_run_writes_outputs(self, tmp_path):
        cfg_path = tmp_path / "exp.ini"
        cfg_path.write_text(TINY_CONFIG)
        out_dir = tmp_path / "metrics"
        result = CliRunner().invoke(
            main,
            ["run", str(cfg_path), "--output-dir", str(out_dir), "--poll-interval", "0.1"],
        )
        assert result.exit_code == 0, result.output
        csvs = sorted(p.name for p in out_dir.glob("replication_*.csv"))
        assert csvs == ["replication_00_seed_5.csv", "replication_01_seed_6.csv"]
        agg = json.loads((out_dir / "aggregate.json").read_text())
        assert agg["replications"] == 2
        assert (out_dir / "timings.txt").exists()

    def test_run_determinism_byte_identical(self, tmp_path):
        cfg_path = tmp_path / "exp.ini"
        cfg_path.write_text(TINY_CONFIG)
        outs = []
        for d in ("m1", "m2"):
            out_dir = tmp_path / d
            result = CliRunner().invoke(
                main,
                ["run", str(cfg_path), "--output-dir", str(out_dir), "--poll-interval", "0.1"],
            )
            assert result.exit_code == 0, result.output
            outs.append(out_dir)
        for name in ("replication_00_seed_5.csv", "replication_01_seed_6.csv", "aggregate.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_seed_and_replication_overrides(self, tmp_path):
        cfg_path = tmp_path / "exp.ini"
        cfg_path.write_text(TINY_CONFIG)
        out_dir = tmp_path / "metrics"
        result = CliRunner().invoke(
            main,
            [
                "run",
                str(cfg_path),
                "--seed",
                "42",
                "--replications",
                "1",
                "--output-dir",
                str(out_dir),
                "--poll-interval",
                "0.1",
            ],
        )
        assert result.exit_code == 0, result.output
        assert [p.name for p in out_dir.glob("*.csv")] == ["replication_00_seed_42.csv"]

    def test_missing_config_exits_2(self, tmp_path):
        result = CliRunner().invoke(main, ["run", str(tmp_path / "nope.ini")])
        assert result.exit_code == 2

    def test_invalid_config_exits_2(self, tmp_path):
        cfg_path = tmp_path / "bad.ini"
        cfg_path.write_text("[experiment]\nenv = pendulum\nalgorithm = dqn\n")
        result = CliRunner().invoke(main, ["run", str(cfg_path)])
        assert result.exit_code == 2


class TestVerify:
    def test_unknown_suite_exits_2(self):
        result = CliRunner().invoke(main, ["verify", "bogus"])
        assert result.exit_code == 2

    def test_normalization_suite_passes(self):
        result = CliRunner().invoke(main, ["verify", "normalization"])
        assert result.exit_code == 0, result.output
        assert "[PASS]" in result.output
        assert "[FAIL]" not in result.output
