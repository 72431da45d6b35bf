"""CLI subcommands: flows, usage errors, exit codes, and rerun determinism."""

from __future__ import annotations

import numpy as np
import pytest

from mobmod.cli import EXIT_EMPTY, EXIT_ERROR, EXIT_OK, main
from mobmod.training import ProjectionLayer, load_projection

RECORDS_CSV = """template_id,strategy,tokens,accuracy,n_samples
t1,pair,clip:image;ctx:cartoon;fmt:1,0.700000,10
t2,pair,clip:image;ctx:cartoon;fmt:2,0.680000,10
t3,pair,clip:example;ctx:comic;fmt:1,0.400000,10
t4,pair,clip:image;ctx:comic;fmt:1,0.350000,10
"""


def run(*argv):
    return main([str(a) for a in argv])


class TestGenPrompts:
    def test_default_three_lines(self, tmp_path):
        out = tmp_path / "templates.txt"
        assert run("gen-prompts", "--strategy", "default", "--out", out) == EXIT_OK
        assert out.read_text().splitlines() == [
            "a photo of a {}.",
            "a {} cartoon.",
            "a photo of a {} cartoon.",
        ]

    def test_pairs_with_candidate_tokens(self, tmp_path):
        out = tmp_path / "templates.txt"
        assert (
            run("gen-prompts", "--strategy", "pairs", "--tokens", "candidate", "--out", out)
            == EXIT_OK
        )
        assert len(out.read_text().splitlines()) == 15

    def test_missing_tokens_is_usage_error(self, tmp_path, capsys):
        rc = run("gen-prompts", "--strategy", "pairs", "--out", tmp_path / "x.txt")
        assert rc == EXIT_ERROR
        assert "usage error" in capsys.readouterr().err

    def test_unknown_strategy_is_usage_error(self, tmp_path):
        rc = run("gen-prompts", "--strategy", "sideways", "--out", tmp_path / "x.txt")
        assert rc == EXIT_ERROR

    def test_apriori_regenerate(self, tmp_path):
        pairs = tmp_path / "pairs.txt"
        pairs.write_text("clip:image ctx:cartoon 0.500000\n")
        out = tmp_path / "templates.txt"
        rc = run("gen-prompts", "--strategy", "apriori-regenerate", "--pairs", pairs, "--out", out)
        assert rc == EXIT_OK
        assert len(out.read_text().splitlines()) == 3


class TestZeroShot:
    def test_runs_and_reruns_byte_identical(self, synthetic_manifest, tmp_path):
        outputs = []
        for i in range(2):
            report = tmp_path / f"report{i}.csv"
            md = tmp_path / f"report{i}.md"
            rc = run(
                "zero-shot", "--manifest", synthetic_manifest, "--strategy", "default",
                "--report", report, "--markdown", md, "--frames", 4, "--seed", 42,
            )
            assert rc == EXIT_OK
            outputs.append((report.read_bytes(), md.read_bytes()))
        assert outputs[0] == outputs[1]

    def test_model_backend_requires_paths(self, synthetic_manifest, tmp_path, capsys):
        rc = run(
            "zero-shot", "--manifest", synthetic_manifest, "--strategy", "default",
            "--backend", "model", "--report", tmp_path / "r.csv",
        )
        assert rc == EXIT_ERROR
        assert "usage error" in capsys.readouterr().err

    def test_templates_and_strategy_exclusive(self, synthetic_manifest, tmp_path):
        lib = tmp_path / "lib.txt"
        lib.write_text("a {} cartoon.\n")
        rc = run(
            "zero-shot", "--manifest", synthetic_manifest, "--templates", lib,
            "--strategy", "default", "--report", tmp_path / "r.csv",
        )
        assert rc == EXIT_ERROR

    def test_template_library_input(self, synthetic_manifest, tmp_path):
        lib = tmp_path / "lib.txt"
        lib.write_text("a {} cartoon.\na photo of a {}.\n")
        report = tmp_path / "r.csv"
        rc = run(
            "zero-shot", "--manifest", synthetic_manifest, "--templates", lib,
            "--report", report, "--frames", 4,
        )
        assert rc == EXIT_OK
        assert report.exists()


class TestTrainEval:
    def test_train_then_eval(self, synthetic_manifest, tmp_path):
        proj = tmp_path / "proj.bin"
        rc = run(
            "train", "--manifest", synthetic_manifest, "--strategy", "default",
            "--epochs", 3, "--batch", 4, "--frames", 4, "--lr", "1e-3", "--out", proj,
        )
        assert rc == EXIT_OK
        layer = load_projection(proj)
        assert layer.W.shape == (512, 768)
        metrics = (tmp_path / "proj.bin.metrics.csv").read_text().splitlines()
        assert metrics[0].startswith("# config:")
        assert metrics[1] == "epoch,loss,accuracy"
        assert len(metrics) == 5

        report = tmp_path / "eval.csv"
        rc = run(
            "eval", "--manifest", synthetic_manifest, "--proj", proj,
            "--strategy", "default", "--report", report, "--frames", 4,
        )
        assert rc == EXIT_OK
        assert report.exists()

    def test_lr_zero_keeps_initial_weights_and_loss(self, synthetic_manifest, tmp_path):
        proj = tmp_path / "proj.bin"
        rc = run(
            "train", "--manifest", synthetic_manifest, "--strategy", "default",
            "--epochs", 3, "--frames", 4, "--lr", "0", "--out", proj, "--seed", 5,
        )
        assert rc == EXIT_OK
        layer = load_projection(proj)
        init = ProjectionLayer.initialize(5)
        np.testing.assert_array_equal(layer.W, init.W)
        losses = [
            line.split(",")[1]
            for line in (tmp_path / "proj.bin.metrics.csv").read_text().splitlines()[2:]
        ]
        assert len(set(losses)) == 1

    def test_default_flags_echo_into_snapshot(self, synthetic_manifest, tmp_path):
        proj = tmp_path / "proj.bin"
        rc = run(
            "train", "--manifest", synthetic_manifest, "--strategy", "default",
            "--out", proj, "--frames", 4,
        )
        assert rc == EXIT_OK
        config_line = (tmp_path / "proj.bin.metrics.csv").read_text().splitlines()[0]
        for fragment in ('"epochs": 20', '"batch": 16', '"lr": 0.0001'):
            assert fragment in config_line

    def test_feature_cache_reused(self, synthetic_manifest, tmp_path):
        cache = tmp_path / "features.bin"
        outs = []
        for i in range(2):
            proj = tmp_path / f"proj{i}.bin"
            rc = run(
                "train", "--manifest", synthetic_manifest, "--strategy", "default",
                "--epochs", 2, "--frames", 4, "--out", proj, "--feature-cache", cache,
            )
            assert rc == EXIT_OK
            outs.append(proj.read_bytes())
        assert cache.exists()
        assert outs[0] == outs[1]

    def test_feature_cache_seed_mismatch(self, synthetic_manifest, tmp_path, capsys):
        cache = tmp_path / "features.bin"
        proj = tmp_path / "proj.bin"
        assert run(
            "train", "--manifest", synthetic_manifest, "--strategy", "default",
            "--epochs", 1, "--frames", 4, "--out", proj, "--feature-cache", cache,
            "--seed", 1,
        ) == EXIT_OK
        rc = run(
            "train", "--manifest", synthetic_manifest, "--strategy", "default",
            "--epochs", 1, "--frames", 4, "--out", proj, "--feature-cache", cache,
            "--seed", 2,
        )
        assert rc == EXIT_ERROR
        assert "seed" in capsys.readouterr().err


class TestApriori:
    def test_pairs_match_oracle(self, tmp_path):
        records = tmp_path / "records.csv"
        records.write_text(RECORDS_CSV)
        pairs_out = tmp_path / "pairs.txt"
        templates_out = tmp_path / "templates.txt"
        rc = run(
            "apriori", "--records", records, "--min-support", "0.5",
            "--out-pairs", pairs_out, "--out-templates", templates_out,
        )
        assert rc == EXIT_OK
        # Above median (0.54): t1 and t2, both {clip:image, ctx:cartoon, fmt:*}.
        lines = pairs_out.read_text().splitlines()
        assert "clip:image ctx:cartoon 1.000000" in lines
        assert len(templates_out.read_text().splitlines()) == 3

    def test_min_support_out_of_range(self, tmp_path, capsys):
        records = tmp_path / "records.csv"
        records.write_text(RECORDS_CSV)
        rc = run(
            "apriori", "--records", records, "--min-support", "1.5",
            "--out-pairs", tmp_path / "p.txt", "--out-templates", tmp_path / "t.txt",
        )
        assert rc == EXIT_ERROR
        assert "usage error" in capsys.readouterr().err

    def test_all_equal_accuracy_warns_exit_2(self, tmp_path, capsys):
        records = tmp_path / "records.csv"
        records.write_text(
            "template_id,strategy,tokens,accuracy,n_samples\n"
            "t1,pair,clip:a;ctx:x,0.500000,10\n"
            "t2,pair,clip:b;ctx:y,0.500000,10\n"
        )
        pairs_out = tmp_path / "pairs.txt"
        rc = run(
            "apriori", "--records", records,
            "--out-pairs", pairs_out, "--out-templates", tmp_path / "t.txt",
        )
        assert rc == EXIT_EMPTY
        assert pairs_out.read_text() == ""
        assert "warning" in capsys.readouterr().err


class TestCheckGrads:
    def test_passes(self, capsys):
        assert run("check-grads", "--trials", 3) == EXIT_OK
        assert "max relative gradient error" in capsys.readouterr().out

    def test_injected_bug_fails(self, monkeypatch):
        monkeypatch.setenv("MOBMOD_GRADCHECK_BUG", "1")
        assert run("check-grads", "--trials", 2) == EXIT_ERROR

    def test_zero_trials_usage_error(self, capsys):
        assert run("check-grads", "--trials", 0) == EXIT_ERROR
        assert "usage error" in capsys.readouterr().err


class TestThreadsEnv:
    def test_env_fallback(self, synthetic_manifest, tmp_path, monkeypatch):
        monkeypatch.setenv("MOBMOD_THREADS", "2")
        report = tmp_path / "r.csv"
        rc = run(
            "zero-shot", "--manifest", synthetic_manifest, "--strategy", "default",
            "--report", report, "--frames", 4,
        )
        assert rc == EXIT_OK
