"""End-to-end CLI pipelines through the click runner."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from cxrtrees.cli import main
from cxrtrees.ensembling import read_predictions_csv
from cxrtrees.store import read_embedding_file

FOCUS = "Atelectasis,Cardiomegaly,Consolidation,Edema,Pleural Effusion"


@pytest.fixture()
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def gen_dataset(runner, d, n=400, seed=3, sigma=0.3):
    run_ok(runner, [
        "gen-synthetic", "--n", str(n), "--dim", "16", "--sigma", str(sigma),
        "--uncertain-fraction", "0.05", "--seed", str(seed),
        "--out-embeddings", str(d / "e.emb"),
        "--out-labels", str(d / "labels.csv"),
        "--out-truth", str(d / "truth.csv"),
    ])


def train_model(runner, d, out, family="forest", seed=1, estimators=20, rounds=10):
    args = [
        "train", "--embeddings", str(d / "e.emb"), "--labels", str(d / "labels.csv"),
        "--family", family, "--seed", str(seed), "--threads", "2",
        "--min-samples-leaf", "5", "--out", str(d / out),
    ]
    if family == "forest":
        args += ["--n-estimators", str(estimators), "--max-depth", "8"]
    else:
        args += ["--rounds", str(rounds)]
    run_ok(runner, args)


def predict_csv(runner, d, model, out, name=None):
    args = [
        "predict", "--model", str(d / model), "--embeddings", str(d / "e.emb"),
        "--out", str(d / out),
    ]
    if name:
        args += ["--classifier-name", name]
    run_ok(runner, args)


class TestPipeline:
    def test_full_synthetic_pipeline(self, runner, tmp_path):
        d = tmp_path
        gen_dataset(runner, d)
        assert read_embedding_file(str(d / "e.emb")).n == 400

        train_model(runner, d, "m1.tem", seed=1)
        train_model(runner, d, "m2.tem", seed=2)
        train_model(runner, d, "m3.tem", family="boosted", seed=3)
        for i in (1, 2, 3):
            predict_csv(runner, d, f"m{i}.tem", f"p{i}.csv", name=f"m{i}")

        run_ok(runner, [
            "ensemble", "--strategy", "simple", "--out", str(d / "simple.csv"),
            str(d / "p1.csv"), str(d / "p2.csv"), str(d / "p3.csv"),
        ])
        run_ok(runner, [
            "ensemble", "--strategy", "entropy", "--out", str(d / "entropy.csv"),
            str(d / "p1.csv"), str(d / "p2.csv"), str(d / "p3.csv"),
        ])

        result = run_ok(runner, [
            "eval", "--predictions", str(d / "entropy.csv"),
            "--truth", str(d / "truth.csv"), "--out", str(d / "report.json"),
        ])
        report = json.loads((d / "report.json").read_text())
        entry = report["classifiers"]["ensemble_entropy"]
        for label in FOCUS.split(","):
            assert label in entry["auroc"]
            assert entry["auroc"][label] > 0.6
        assert "sha256" in report["inputs"]["predictions"]

    def test_ensemble_identity_on_identical_inputs(self, runner, tmp_path):
        d = tmp_path
        gen_dataset(runner, d, n=120)
        train_model(runner, d, "m.tem", estimators=5)
        predict_csv(runner, d, "m.tem", "a.csv", name="m")
        predict_csv(runner, d, "m.tem", "b.csv", name="m2")
        run_ok(runner, [
            "ensemble", "--strategy", "simple", "--out", str(d / "out.csv"),
            str(d / "a.csv"), str(d / "b.csv"),
        ])
        source = read_predictions_csv(str(d / "a.csv"))
        combined = read_predictions_csv(str(d / "out.csv"))
        np.testing.assert_array_equal(combined.values[0], source.values[0])

    def test_stacking_commands(self, runner, tmp_path):
        d = tmp_path
        gen_dataset(runner, d, n=200)
        train_model(runner, d, "m1.tem", seed=1, estimators=8)
        train_model(runner, d, "m2.tem", seed=2, estimators=8)
        predict_csv(runner, d, "m1.tem", "p1.csv", name="m1")
        predict_csv(runner, d, "m2.tem", "p2.csv", name="m2")
        run_ok(runner, [
            "stack", "train", "--labels", str(d / "labels.csv"),
            "--n-estimators", "10", "--max-depth", "6",
            "--out", str(d / "meta.stk"),
            str(d / "p1.csv"), str(d / "p2.csv"),
        ])
        run_ok(runner, [
            "stack", "apply", "--model", str(d / "meta.stk"),
            "--out", str(d / "stacked.csv"),
            str(d / "p1.csv"), str(d / "p2.csv"),
        ])
        stacked = read_predictions_csv(str(d / "stacked.csv"))
        assert stacked.classifier_names == ("ensemble_stacking",)
        assert stacked.n_samples == 200

    def test_calibrate_then_eval_confusion(self, runner, tmp_path):
        d = tmp_path
        gen_dataset(runner, d, n=300)
        train_model(runner, d, "m.tem", estimators=10)
        predict_csv(runner, d, "m.tem", "p.csv", name="m")
        run_ok(runner, [
            "calibrate", "--predictions", str(d / "p.csv"),
            "--band-delta", "0.07", "--out", str(d / "cal.json"),
        ])
        cal = json.loads((d / "cal.json").read_text())
        assert cal["delta"] == 0.07
        assert set(cal["thresholds"]) == set(FOCUS.split(","))

        run_ok(runner, [
            "eval", "--predictions", str(d / "p.csv"), "--truth", str(d / "truth.csv"),
            "--calibration", str(d / "cal.json"), "--out", str(d / "report.json"),
        ])
        report = json.loads((d / "report.json").read_text())
        conf = report["classifiers"]["m"]["confusion"]
        for label in FOCUS.split(","):
            counts = conf[label]
            assert sum(counts.values()) == 300

    def test_roc_points_export(self, runner, tmp_path):
        d = tmp_path
        gen_dataset(runner, d, n=150)
        train_model(runner, d, "m.tem", estimators=5)
        predict_csv(runner, d, "m.tem", "p.csv", name="m")
        run_ok(runner, [
            "eval", "--predictions", str(d / "p.csv"), "--truth", str(d / "truth.csv"),
            "--roc-out", str(d / "roc.csv"), "--out", str(d / "r.json"),
        ])
        lines = (d / "roc.csv").read_text().splitlines()
        assert lines[0] == "classifier,label,threshold,fpr,tpr"
        assert len(lines) > 10


class TestDeterminism:
    def test_rerun_is_byte_identical(self, runner, tmp_path):
        # Identical flags (same paths) twice; outputs must match byte for byte.
        outputs = []
        d = tmp_path / "run"
        for _ in range(2):
            if d.exists():
                for f in d.iterdir():
                    f.unlink()
            else:
                d.mkdir()
            gen_dataset(runner, d, n=150)
            train_model(runner, d, "m.tem", estimators=6)
            predict_csv(runner, d, "m.tem", "p.csv", name="m")
            run_ok(runner, [
                "eval", "--predictions", str(d / "p.csv"),
                "--truth", str(d / "truth.csv"), "--out", str(d / "report.json"),
            ])
            outputs.append({
                name: (d / name).read_bytes()
                for name in ("e.emb", "labels.csv", "m.tem", "p.csv", "report.json")
            })
        assert outputs[0] == outputs[1]


class TestErrorSurface:
    def test_eval_degenerate_truth_fails_cleanly(self, runner, tmp_path):
        d = tmp_path
        gen_dataset(runner, d, n=60)
        train_model(runner, d, "m.tem", estimators=3)
        predict_csv(runner, d, "m.tem", "p.csv", name="m")
        # All-positive truth for every label.
        header = "sample_id," + FOCUS
        rows = [f"s{i:06d}," + ",".join(["1.0"] * 5) for i in range(60)]
        (d / "allpos.csv").write_text(header + "\n" + "\n".join(rows) + "\n")
        result = runner.invoke(main, [
            "eval", "--predictions", str(d / "p.csv"), "--truth", str(d / "allpos.csv"),
        ])
        assert result.exit_code == 1
        err_lines = [l for l in result.output.splitlines() if l.startswith("error:")]
        assert len(err_lines) == 1
        assert "DegenerateTruthError" in err_lines[0]

    def test_unknown_flag_exits_2(self, runner):
        result = runner.invoke(main, ["train", "--bogus-flag", "x"])
        assert result.exit_code == 2

    def test_missing_input_file(self, runner, tmp_path):
        result = runner.invoke(main, [
            "predict", "--model", str(tmp_path / "nope.tem"),
            "--embeddings", str(tmp_path / "nope.emb"), "--out", str(tmp_path / "o.csv"),
        ])
        assert result.exit_code == 2  # click path validation

    def test_calibrate_rejects_multi_classifier_input(self, runner, tmp_path):
        d = tmp_path
        (d / "p.csv").write_text(
            "classifier,sample_id,A\nm1,s1,0.5\nm1,s2,0.4\nm2,s1,0.6\nm2,s2,0.7\n"
        )
        result = runner.invoke(main, [
            "calibrate", "--predictions", str(d / "p.csv"), "--out", str(d / "c.json"),
        ])
        assert result.exit_code == 1
        assert "single-classifier" in result.output


class TestConfigFile:
    def test_config_provides_defaults_and_flags_override(self, runner, tmp_path):
        d = tmp_path
        (d / "cfg.ini").write_text(
            "[gen-synthetic]\nn = 77\ndim = 16\nseed = 5\n"
            f"out-embeddings = {d / 'e.emb'}\n"
            f"out-labels = {d / 'labels.csv'}\n"
        )
        run_ok(runner, ["--config", str(d / "cfg.ini"), "gen-synthetic"])
        assert read_embedding_file(str(d / "e.emb")).n == 77

        run_ok(runner, ["--config", str(d / "cfg.ini"), "gen-synthetic", "--n", "33"])
        assert read_embedding_file(str(d / "e.emb")).n == 33
