import hashlib
import json

import numpy as np
import pytest

from mbpolicy import TreePolicy
from mbpolicy.cli import main


@pytest.fixture
def learn_csv(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("w,y,x\n1,0,0\n0,1,1\n1,4,2\n0,2,3\n")
    return path


@pytest.fixture
def eval_csv(tmp_path):
    rng = np.random.default_rng(101)
    lines = ["treat,re78,a,b"]
    for i in range(20):
        w = i % 2
        a, b = rng.normal(), rng.normal()
        y = 2.0 + a - 0.5 * b + w * (1.0 + (a > 0)) + rng.normal() * 0.3
        lines.append(f"{w},{y:.6f},{a:.6f},{b:.6f}")
    path = tmp_path / "study.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def simulate_args(out, extra=()):
    return [
        "simulate", "--scenario", "1", "--main", "linear", "--contrast", "tree",
        "--n", "80", "--method", "mb-m1", "--reps", "2", "--test-n", "400",
        "--out", str(out), *extra,
    ]


class TestSimulate:
    def test_smoke_outputs_and_rerun_identical(self, tmp_path, capsys):
        first, second = tmp_path / "run1", tmp_path / "run2"
        assert main(simulate_args(first)) == 0
        for name in ("results.csv", "summary.csv", "timings.csv",
                      "manifest.json", "outputs.sha256"):
            assert (first / name).exists()
        assert "mb-m1: mean value" in capsys.readouterr().out

        assert main(simulate_args(second)) == 0
        assert (first / "results.csv").read_bytes() == (second / "results.csv").read_bytes()
        assert (first / "summary.csv").read_bytes() == (second / "summary.csv").read_bytes()
        assert (first / "outputs.sha256").read_text() == (second / "outputs.sha256").read_text()

    def test_checksum_file_matches_outputs(self, tmp_path):
        out = tmp_path / "run"
        assert main(simulate_args(out)) == 0
        for line in (out / "outputs.sha256").read_text().splitlines():
            digest, name = line.split("  ")
            assert digest == sha256(out / name)

    def test_zero_reps_is_a_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main([
                "simulate", "--scenario", "1", "--main", "linear",
                "--contrast", "tree", "--n", "80", "--reps", "0",
                "--out", str(tmp_path / "run"),
            ])
        assert excinfo.value.code == 2

    def test_unknown_method_is_a_usage_error(self, tmp_path, capsys):
        code = main(simulate_args(tmp_path / "x", extra=["--method", "forest"]))
        assert code == 2
        assert "unknown method" in capsys.readouterr().err

    def test_manifest_records_parameters(self, tmp_path):
        out = tmp_path / "run"
        assert main(simulate_args(out)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["parameters"]["n"] == 80
        assert manifest["parameters"]["methods"] == ["mb-m1"]
        assert manifest["inputs"] == {}


class TestLearn:
    def test_four_row_stump(self, learn_csv, tmp_path, capsys):
        out = tmp_path / "fit"
        code = main([
            "learn", "--data", str(learn_csv), "--treatment-col", "w",
            "--outcome-col", "y", "--m", "1", "--correction", "none",
            "--depth", "1", "--out", str(out),
        ])
        assert code == 0
        tree = TreePolicy.from_text((out / "policy.txt").read_text())
        assert tree.depth == 1
        assert tree.features[0] == 0
        assert tree.thresholds[0] == 1.5
        np.testing.assert_array_equal(tree.leaf_actions, [0, 1])
        assert TreePolicy.from_json((out / "policy.json").read_text()) == tree
        assert "if x[0] (x) <= 1.5:" in capsys.readouterr().out

        gamma_lines = (out / "gamma.csv").read_text().strip().splitlines()
        assert gamma_lines[0] == "unit,w,y,y0_imputed,y1_imputed,gamma"
        gammas = [float(line.split(",")[-1]) for line in gamma_lines[1:]]
        assert gammas == [-1.0, -1.0, 3.0, 2.0]

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["inputs"]["data"]["sha256"] == sha256(learn_csv)

    def test_exclude_restricts_splits(self, eval_csv, tmp_path):
        out = tmp_path / "fit"
        code = main([
            "learn", "--data", str(eval_csv), "--m", "1", "--correction", "none",
            "--depth", "1", "--exclude", "a", "--out", str(out),
        ])
        assert code == 0
        tree = TreePolicy.from_json((out / "policy.json").read_text())
        assert set(tree.features.tolist()) == {1}  # only column b is eligible
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["parameters"]["excluded_from_policy"] == ["a"]

    def test_missing_column_is_a_runtime_error(self, learn_csv, tmp_path, capsys):
        code = main([
            "learn", "--data", str(learn_csv), "--treatment-col", "w",
            "--outcome-col", "z", "--out", str(tmp_path / "fit"),
        ])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and "'z'" in err

    def test_missing_file_is_a_runtime_error(self, tmp_path, capsys):
        code = main(["learn", "--data", str(tmp_path / "absent.csv"),
                     "--out", str(tmp_path / "fit")])
        assert code == 1
        assert "not found" in capsys.readouterr().err


class TestEvaluate:
    def test_treat_all_policy(self, eval_csv, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main(["evaluate", "--data", str(eval_csv), "--policy", "treat-all",
                     "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "evaluation.json").read_text())
        assert payload["policy"] == "treat-all"
        assert payload["n_treated_by_policy"] == 20
        assert np.isfinite(payload["value"])
        assert "estimated value" in capsys.readouterr().out

    def test_treat_none_policy(self, eval_csv, tmp_path):
        out = tmp_path / "eval"
        assert main(["evaluate", "--data", str(eval_csv), "--policy", "treat-none",
                     "--out", str(out)]) == 0
        payload = json.loads((out / "evaluation.json").read_text())
        assert payload["n_treated_by_policy"] == 0

    def test_policy_file_round_trip(self, eval_csv, tmp_path):
        fit = tmp_path / "fit"
        assert main(["learn", "--data", str(eval_csv), "--m", "1",
                     "--correction", "none", "--depth", "1", "--out", str(fit)]) == 0
        out = tmp_path / "eval"
        code = main(["evaluate", "--data", str(eval_csv),
                     "--policy", str(fit / "policy.json"), "--out", str(out)])
        assert code == 0
        payload = json.loads((out / "evaluation.json").read_text())
        assert 0 <= payload["n_treated_by_policy"] <= 20

    def test_missing_policy_file(self, eval_csv, tmp_path, capsys):
        code = main(["evaluate", "--data", str(eval_csv),
                     "--policy", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "e")])
        assert code == 1
        assert "treat-all" in capsys.readouterr().err

    def test_cross_validated_value_reproducible(self, eval_csv, tmp_path, capsys):
        args = lambda out: [
            "evaluate", "--data", str(eval_csv), "--cv", "--method", "mb-m1",
            "--folds", "5", "--repeats", "3", "--out", str(out),
        ]
        first, second = tmp_path / "cv1", tmp_path / "cv2"
        assert main(args(first)) == 0
        assert "cross-validated value" in capsys.readouterr().out
        payload = json.loads((first / "evaluation.json").read_text())
        assert payload["repeats"] == 3 and payload["folds"] == 5
        assert payload["method"] == "mb-m1"
        lines = (first / "cv_values.csv").read_text().strip().splitlines()
        assert lines[0] == "repeat,value" and len(lines) == 4

        assert main(args(second)) == 0
        assert (first / "cv_values.csv").read_bytes() == (second / "cv_values.csv").read_bytes()
        assert (first / "evaluation.json").read_bytes() == (second / "evaluation.json").read_bytes()


class TestBalance:
    def test_balance_table(self, eval_csv, tmp_path, capsys):
        out = tmp_path / "bal"
        assert main(["balance", "--data", str(eval_csv), "--out", str(out)]) == 0
        lines = (out / "balance.csv").read_text().strip().splitlines()
        assert lines[0].startswith("feature")
        assert len(lines) == 3  # header + covariates a, b
        console = capsys.readouterr().out
        assert "normalized difference" in console
        assert "(control n=10, treated n=10)" in console


class TestOutputDirEnv:
    def test_env_var_sets_default_out_dir(self, learn_csv, tmp_path, monkeypatch):
        target = tmp_path / "from-env"
        monkeypatch.setenv("MBPOLICY_OUT", str(target))
        code = main([
            "learn", "--data", str(learn_csv), "--treatment-col", "w",
            "--outcome-col", "y", "--m", "1", "--correction", "none",
        ])
        assert code == 0
        assert (target / "policy.txt").exists()


@pytest.mark.slow
class TestReplicate:
    def test_smoke_budget(self, tmp_path, capsys):
        out = tmp_path / "rep"
        code = main(["replicate", "--budget", "smoke", "--test-n", "300",
                     "--out", str(out)])
        assert code == 0
        assert "replicate rows written" in capsys.readouterr().out
        lines = (out / "results.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 2 * 3  # two methods x three replications
