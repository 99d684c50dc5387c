import csv
import json
import hashlib
from pathlib import Path

import numpy as np
import pytest

from mialab.cli import main
from mialab.config import expand_sweep, load_config, parse_config
from mialab.data import load_csv
from mialab.errors import ConfigError


def small_config(**training_overrides):
    training = {
        "defense": "ce",
        "epochs": 8,
        "batch_size": 32,
        "lr": 0.3,
        "seed": 0,
    }
    training.update(training_overrides)
    return {
        "dataset": {
            "generator": {
                "seed": 0, "n": 240, "d": 6, "classes": 3,
                "separation": 3.0, "label_noise": 0.2,
            }
        },
        "model": {"layer_sizes": [6, 12, 8, 3]},
        "split": {"base_seed": 0, "n_shadow": 2},
        "training": training,
        "attack": {
            "attacks": ["entropy", "m_entropy", "grad_x", "nn"],
            "attack_seed": 0,
            "histogram_bins": 12,
            "nn": {"epochs": 8},
        },
    }


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def file_sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestConfigParsing:
    def test_round_trip(self):
        cfg = parse_config(small_config())
        assert cfg.training.defense == "ce"
        assert cfg.layer_sizes == [6, 12, 8, 3]
        assert cfg.n_shadow == 2
        assert cfg.suite.histogram_bins == 12

    def test_unknown_key_names_path(self):
        doc = small_config()
        doc["training"]["relax"] = {"alpha_rcx": 0.1}
        with pytest.raises(ConfigError, match="training.relax"):
            parse_config(doc)

    def test_unknown_top_level_key(self):
        doc = small_config()
        doc["extras"] = {}
        with pytest.raises(ConfigError, match="extras"):
            parse_config(doc)

    def test_missing_required_field(self):
        doc = small_config()
        del doc["training"]["lr"]
        with pytest.raises(ConfigError, match="training.lr"):
            parse_config(doc)

    def test_generator_must_match_model_widths(self):
        doc = small_config()
        doc["model"]["layer_sizes"] = [6, 12, 8, 4]
        with pytest.raises(ConfigError, match="classes"):
            parse_config(doc)

    def test_dataset_requires_exactly_one_source(self):
        doc = small_config()
        doc["dataset"]["csv"] = "x.csv"
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(doc)

    def test_sweep_expansion_order_and_count(self):
        doc = small_config()
        doc["sweep"] = {"alpha_rce": [0.5, 1.0], "alpha_rcl": [0.1, 0.5]}
        points = expand_sweep(parse_config(doc))
        assert len(points) == 4
        assert points[0][0] == {"alpha_rce": 0.5, "alpha_rcl": 0.1}
        assert points[1][0] == {"alpha_rce": 0.5, "alpha_rcl": 0.5}
        assert points[3][1].training.relax.alpha_rce == 1.0

    def test_sweep_eps_and_beta_map_to_training(self):
        doc = small_config()
        doc["sweep"] = {"eps": [0.1], "beta": [0.2]}
        (_, cfg), = expand_sweep(parse_config(doc))
        assert cfg.training.smoothing_eps == 0.1
        assert cfg.training.penalty_beta == 0.2

    def test_nn_attack_without_shadows_rejected_up_front(self):
        doc = small_config()
        doc["split"]["n_shadow"] = 0
        with pytest.raises(ConfigError, match="n_shadow"):
            parse_config(doc)

    def test_boolean_where_number_expected_rejected(self):
        doc = small_config()
        doc["training"]["lr"] = True
        with pytest.raises(ConfigError, match="training.lr"):
            parse_config(doc)


class TestGenData:
    def test_writes_expected_rows(self, tmp_path, capsys):
        out = tmp_path / "data.csv"
        rc = main(["gen-data", "--seed", "0", "--n", "200", "--d", "5", "--classes", "4",
                   "--sep", "3.0", "--noise", "0.2", "--out", str(out)])
        assert rc == 0
        ds = load_csv(str(out))
        assert ds.n == 200 and ds.dim == 5 and ds.n_classes == 4

    def test_same_flags_identical_files(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["gen-data", "--seed", "1", "--n", "100", "--d", "4", "--classes", "3",
                "--sep", "2.5", "--noise", "0.1"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_value_exits_nonzero(self, tmp_path, capsys):
        rc = main(["gen-data", "--seed", "0", "--n", "100", "--d", "4", "--classes", "3",
                   "--sep", "-1.0", "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "error" in capsys.readouterr().err


class TestTrainCommand:
    def test_writes_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, small_config())
        out = tmp_path / "run"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        for name in ("model.json", "model.bin", "centers.bin", "history.csv",
                     "split.json", "manifest.json"):
            assert (out / name).exists(), name

    def test_determinism_identical_checkpoint_hashes(self, tmp_path):
        cfg = write_config(tmp_path, small_config())
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["train", "--config", cfg, "--out", str(out2)]) == 0
        for name in ("model.bin", "model.json", "centers.bin", "history.csv"):
            assert file_sha(out1 / name) == file_sha(out2 / name), name

    def test_crl_history_contains_branch_counts(self, tmp_path):
        doc = small_config(defense="crl",
                           relax={"alpha_rce": 0.8, "alpha_rcl": 0.3,
                                  "tau_rce": 0.1, "tau_rcl": 0.1, "lambda": 1.0})
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "crl"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "history.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        assert "rcl_reflect" in header
        reflect_idx = header.index("rcl_reflect")
        total_reflect = sum(int(line.split(",")[reflect_idx]) for line in lines[1:])
        assert total_reflect > 0  # even epochs fired the keep-distance scenario

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        doc = small_config()
        doc["training"]["defense"] = "nonsense"
        cfg = write_config(tmp_path, doc)
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        assert "defense" in capsys.readouterr().err

    def test_shipped_ce_benchmark_reaches_full_train_accuracy(self, tmp_path):
        cfg = Path(__file__).resolve().parent.parent / "configs" / "ce_benchmark.json"
        out = tmp_path / "bench"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        with open(out / "history.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert float(rows[-1]["train_acc"]) == 1.0

    def test_train_from_csv_dataset(self, tmp_path):
        data = tmp_path / "data.csv"
        assert main(["gen-data", "--seed", "0", "--n", "240", "--d", "6", "--classes", "3",
                     "--sep", "3.0", "--noise", "0.2", "--out", str(data)]) == 0
        doc = small_config()
        doc["dataset"] = {"csv": str(data)}
        cfg = write_config(tmp_path, doc, name="csv_config.json")
        out = tmp_path / "csv_run"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "model.bin").exists()

    def test_csv_dimension_mismatch_exits_2(self, tmp_path, capsys):
        data = tmp_path / "narrow.csv"
        assert main(["gen-data", "--seed", "0", "--n", "120", "--d", "4", "--classes", "3",
                     "--sep", "3.0", "--noise", "0.0", "--out", str(data)]) == 0
        doc = small_config()
        doc["dataset"] = {"csv": str(data)}  # model expects 6 input features
        cfg = write_config(tmp_path, doc, name="bad_csv.json")
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        assert "input width" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("attack_cmd")
    cfg = write_config(tmp, small_config())
    out = tmp / "run"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    return tmp, cfg, out


class TestAttackCommand:
    def test_reports_and_histograms(self, trained_dir):
        tmp, cfg, out = trained_dir
        assert main(["attack", "--target", str(out), "--config", cfg, "--out", str(out)]) == 0
        reports = json.loads((out / "attack_reports.json").read_text())
        assert {r["attack"] for r in reports} == {"entropy", "m_entropy", "grad_x", "nn"}
        for r in reports:
            assert 0.0 <= r["auc"] <= 1.0
        for name in ("hist_entropy.csv", "hist_distance_to_boundary.csv"):
            rows = (out / name).read_text().strip().splitlines()
            assert len(rows) == 1 + 12  # header + configured bin count

    def test_missing_checkpoint_exits_2(self, trained_dir, capsys):
        tmp, cfg, out = trained_dir
        rc = main(["attack", "--target", str(tmp / "nowhere"), "--config", cfg,
                   "--out", str(tmp / "o")])
        assert rc == 2

    def test_config_mismatch_warns(self, trained_dir, capsys):
        tmp, cfg, out = trained_dir
        doc = small_config(seed=1)
        other = write_config(tmp, doc, name="other.json")
        assert main(["attack", "--target", str(out), "--config", other,
                     "--out", str(tmp / "warned")]) == 0
        assert "adaptive" in capsys.readouterr().err

    def test_attack_outputs_reproducible(self, trained_dir):
        tmp, cfg, out = trained_dir
        a, b = tmp / "rep_a", tmp / "rep_b"
        assert main(["attack", "--target", str(out), "--config", cfg, "--out", str(a)]) == 0
        assert main(["attack", "--target", str(out), "--config", cfg, "--out", str(b)]) == 0
        for name in ("attack_reports.json", "hist_entropy.csv", "hist_distance_to_boundary.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestSweepCommand:
    def test_grid_rows_and_point_consistency(self, tmp_path):
        doc = small_config(defense="crl",
                           relax={"alpha_rce": 0.8, "alpha_rcl": 0.3,
                                  "tau_rce": 0.1, "tau_rcl": 0.1, "lambda": 1.0})
        doc["attack"]["attacks"] = ["entropy", "m_entropy"]
        doc["sweep"] = {"alpha_rce": [0.5, 1.0], "alpha_rcl": [0.1, 0.3]}
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == "alpha_rce,alpha_rcl,train_acc,test_acc,auc_entropy,auc_m_entropy"
        assert len(lines) == 5
        # grid point artifacts match a plain train+attack of the same settings
        assert (out / "point_000" / "attack_reports.json").exists()
        single_doc = json.loads((tmp_path / "config.json").read_text())
        single_doc["training"]["relax"]["alpha_rce"] = 0.5
        single_doc["training"]["relax"]["alpha_rcl"] = 0.1
        del single_doc["sweep"]
        single_cfg = write_config(tmp_path, single_doc, name="single.json")
        single_out = tmp_path / "single"
        assert main(["train", "--config", single_cfg, "--out", str(single_out)]) == 0
        assert main(["attack", "--target", str(single_out), "--config", single_cfg,
                     "--out", str(single_out)]) == 0
        a = json.loads((out / "point_000" / "attack_reports.json").read_text())
        b = json.loads((single_out / "attack_reports.json").read_text())
        assert a == b
        assert main(["report", "--sweep", str(out)]) == 0
        assert (out / "frontier.png").exists()

    def test_missing_grid_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, small_config())
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 2


class TestReportCommand:
    def test_renders_figures_and_summary(self, tmp_path, capsys):
        doc = small_config()
        doc["attack"]["attacks"] = ["entropy"]
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "run"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        assert main(["attack", "--target", str(out), "--config", cfg, "--out", str(out)]) == 0
        assert main(["report", "--run", str(out)]) == 0
        captured = capsys.readouterr().out
        assert "entropy" in captured
        for name in ("training_curves.png", "summary.csv", "hist_entropy.png",
                     "hist_distance_to_boundary.png"):
            assert (out / name).exists(), name

    def test_requires_some_input(self, capsys):
        assert main(["report"]) == 2

    def test_usage_error_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--config"])  # missing value
        assert exc.value.code == 2
