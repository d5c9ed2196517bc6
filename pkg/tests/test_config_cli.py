import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from fedsample.cli import main
from fedsample.config import config_from_dict, load_config
from fedsample.errors import ConfigError
from fedsample.optimizer import optimize

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_yaml(tmp_path, obj, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(obj))
    return path


def tiny_dict():
    return yaml.safe_load((CONFIGS / "tiny.yaml").read_text())


class TestConfig:
    def test_default_config(self):
        cfg = load_config(CONFIGS / "default.yaml")
        assert cfg.fleet.n == 100
        assert cfg.fleet.tau.max() / cfg.fleet.tau.min() >= 5
        assert cfg.fleet.t.max() / cfg.fleet.t.min() >= 5
        plan = cfg.plan()
        assert plan.seeds == (0, 1, 2) and plan.bandwidth_multipliers == (1, 2, 4)
        assert cfg.target.kind == "loss"

    def test_explicit_clients(self):
        cfg = load_config(CONFIGS / "tiny.yaml")
        assert [c.id for c in cfg.fleet.clients] == [1, 2, 3, 4]
        np.testing.assert_allclose(cfg.fleet.data_weights, [0.3, 0.2, 0.25, 0.25])
        assert cfg.constants.alpha == 200.0

    def test_generated_fleet_defaults(self):
        cfg = config_from_dict({"fleet": {"per_class": 2}})
        assert cfg.fleet.n == 10 and cfg.fleet.total_bandwidth == 100.0

    def test_overrides(self):
        plan = load_config(CONFIGS / "tiny.yaml").plan(seeds=[5, 6], f_tot=33.0)
        assert plan.seeds == (5, 6) and plan.fleet.total_bandwidth == 33.0

    @pytest.mark.parametrize("mutate", [
        lambda d: d.update(extra=1),
        lambda d: d["task"].update(learning_rate=0.1),
        lambda d: d["fleet"].update(per_class=3),
        lambda d: d["fleet"]["clients"][0].update(speed=2),
        lambda d: d["fleet"]["clients"][0].update(compute_time=-1.0),
        lambda d: d["target"].update(kind="perplexity"),
        lambda d: d["experiment"].update(seeds=[]),
        lambda d: d.pop("fleet"),
        lambda d: d["constants"].update(beta=-1.0),
    ])
    def test_rejects_bad_config(self, mutate):
        d = tiny_dict()
        mutate(d)
        with pytest.raises(ConfigError):
            cfg = config_from_dict(d)
            cfg.plan()

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("fleet: [unclosed")
        with pytest.raises(ConfigError):
            load_config(path)


class TestCli:
    def test_optimize_writes_q_and_grid(self, tmp_path, capsys):
        assert main(["optimize", "--config", str(CONFIGS / "tiny.yaml"), "--out", str(tmp_path)]) == 0
        saved = json.loads((tmp_path / "q_star.json").read_text())
        cfg = load_config(CONFIGS / "tiny.yaml")
        expected = optimize(cfg.constants, cfg.fleet, cfg.optimizer)
        assert saved["q_star"] == expected.q_star.tolist()
        assert saved["client_ids"] == [1, 2, 3, 4]
        rows = list(csv.reader(open(tmp_path / "grid.csv")))
        assert rows[0][:2] == ["M", "objective"] and len(rows) == 202
        assert "M* =" in capsys.readouterr().out

    def test_f_tot_override_changes_solution(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["optimize", "--config", str(CONFIGS / "tiny.yaml"), "--out", str(a)])
        main(["optimize", "--config", str(CONFIGS / "tiny.yaml"), "--out", str(b), "--f-tot", "1000"])
        qa = json.loads((a / "q_star.json").read_text())["q_star"]
        qb = json.loads((b / "q_star.json").read_text())["q_star"]
        assert qa != qb

    def test_constants_file_feeds_optimize(self, tmp_path):
        d = tiny_dict()
        d.pop("constants")
        cfg = write_yaml(tmp_path, d)
        assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        consts = tmp_path / "c.json"
        consts.write_text(json.dumps({"alpha": 200.0, "beta": 4.0}))
        assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path), "--constants", str(consts)]) == 0

    def test_pilot_then_train_with_q_file(self, tmp_path):
        cfg = str(CONFIGS / "tiny.yaml")
        assert main(["pilot", "--config", cfg, "--out", str(tmp_path), "--seeds", "0"]) == 0
        consts = tmp_path / "constants_seed0.json"
        assert json.loads(consts.read_text())["beta"] > 0
        assert main(["optimize", "--config", cfg, "--out", str(tmp_path), "--constants", str(consts)]) == 0
        assert main(["train", "--config", cfg, "--out", str(tmp_path), "--seeds", "0",
                     "--q-file", str(tmp_path / "q_star.json")]) == 0
        lines = (tmp_path / "trace_custom_seed0.csv").read_text().splitlines()
        assert lines[0].startswith("round,wallclock_s,cumulative_s")

    def test_train_baseline(self, tmp_path, capsys):
        assert main(["train", "--config", str(CONFIGS / "tiny.yaml"), "--out", str(tmp_path),
                     "--seeds", "0", "--scheme", "uniform"]) == 0
        assert (tmp_path / "trace_uniform_seed0.csv").exists()
        assert "seed 0 uniform" in capsys.readouterr().out

    def test_experiment_outputs(self, tmp_path, capsys):
        assert main(["experiment", "--config", str(CONFIGS / "tiny.yaml"), "--out", str(tmp_path),
                     "--seeds", "0"]) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary["summary"]) == {"proposed", "full", "fixed", "uniform", "weighted"}
        assert (tmp_path / "trace_proposed_seed0.csv").exists()
        assert (tmp_path / "grid_seed0.csv").exists()
        assert "bandwidth sweep" in capsys.readouterr().out

    def test_errors_exit_nonzero(self, tmp_path, capsys):
        assert main(["optimize", "--config", str(tmp_path / "missing.yaml")]) == 2
        d = tiny_dict()
        d["experiment"]["seeds"] = [2]  # this seed's pilot is degenerate
        cfg = write_yaml(tmp_path, d)
        assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        err = capsys.readouterr().err
        assert "[pilot]" in err and "DegeneratePilot" in err

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "fedsample", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        for verb in ("optimize", "pilot", "train", "experiment"):
            assert verb in out.stdout
