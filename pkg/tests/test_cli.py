import json
import subprocess
import sys

import numpy as np
import pytest

from seggraph import container
from seggraph.cli import main


def run_cli(*argv):
    return main(list(argv))


class TestEval:
    def make_labels(self, tmp_path):
        labels = np.array([0, 1, 2, 3, 1, 0], dtype=np.int64)
        path = tmp_path / "labels.sgb"
        container.write_blob(path, container.encode_labels(labels))
        return path

    def test_identical_files_give_miou_one(self, tmp_path, capsys):
        path = self.make_labels(tmp_path)
        code = run_cli("eval", "--pred", str(path), "--gt", str(path), "--k", "4")
        out = json.loads(capsys.readouterr().out)
        assert code == 0
        assert out["miou"] == 1.0

    def test_missing_required_argument_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_cli("eval", "--gt", "x", "--k", "4")
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("eval", "--nonsense")
        assert exc.value.code == 2

    def test_missing_file_is_runtime_error(self, tmp_path, capsys):
        code = run_cli("eval", "--pred", str(tmp_path / "nope.sgb"), "--gt", str(tmp_path / "nope.sgb"), "--k", "2")
        assert code == 1
        assert capsys.readouterr().err.startswith("error:")


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    code = main([
        "synth", "--out", str(root), "--seed", "0",
        "--num-train", "2", "--num-test", "1", "--parts", "3", "--points", "400",
    ])
    assert code == 0
    assert main(["preprocess", "--data", str(root)]) == 0
    return root


class TestPipelineCommands:
    def test_preprocess_is_idempotent(self, tiny_corpus):
        shape_dir = tiny_corpus / "shape_0000"
        rel = lambda p: p.relative_to(shape_dir).as_posix()
        before = {rel(p): p.read_bytes() for p in shape_dir.rglob("*") if p.is_file()}
        assert main(["preprocess", "--data", str(shape_dir)]) == 0
        for p in shape_dir.rglob("*"):
            if p.is_file():
                assert before[rel(p)] == p.read_bytes(), rel(p)

    def test_train_predict_eval_roundtrip(self, tiny_corpus, tmp_path, capsys):
        ckpt = tmp_path / "ckpt"
        assert main([
            "train", "--data", str(tiny_corpus), "--out", str(ckpt),
            "--epochs", "3", "--shots", "2", "--width", "32", "--seed", "0",
        ]) == 0
        capsys.readouterr()
        shape = tiny_corpus / "shape_0002"
        pred_path = tmp_path / "pred.sgb"
        assert main(["predict", "--checkpoint", str(ckpt), "--shape", str(shape), "--out", str(pred_path)]) == 0
        capsys.readouterr()
        gt_path = shape / "labels.sgb"
        assert main(["eval", "--pred", str(pred_path), "--gt", str(gt_path), "--k", "3"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert 0.0 <= report["miou"] <= 1.0

    def test_train_seeds_reports_mean_sd(self, tiny_corpus, tmp_path, capsys):
        assert main([
            "train", "--data", str(tiny_corpus), "--out", str(tmp_path / "multi"),
            "--epochs", "2", "--shots", "2", "--width", "32",
            "--seeds", "0,1", "--eval-test", "--mlp-baseline",
        ]) == 0
        out = capsys.readouterr().out
        line = [l for l in out.splitlines() if l.startswith("category=")][0]
        assert "miou_mean=" in line and "miou_sd=" in line
        assert (tmp_path / "multi" / "seed_0" / "params.sgb").is_file()
        assert (tmp_path / "multi" / "seed_1" / "params.sgb").is_file()

    def test_export_pca_writes_ply(self, tiny_corpus, tmp_path, capsys):
        ckpt = tmp_path / "ckpt2"
        assert main([
            "train", "--data", str(tiny_corpus), "--out", str(ckpt),
            "--epochs", "2", "--shots", "2", "--width", "32",
        ]) == 0
        out_ply = tmp_path / "colors.ply"
        assert main(["export-pca", "--checkpoint", str(ckpt), "--shape", str(tiny_corpus / "shape_0000"),
                     "--out", str(out_ply)]) == 0
        text = out_ply.read_text().splitlines()
        assert text[0] == "ply" and "end_header" in text

    def test_predict_channel_mismatch_is_config_error(self, tiny_corpus, tmp_path, capsys):
        ckpt = tmp_path / "ckpt3"
        assert main([
            "train", "--data", str(tiny_corpus), "--out", str(ckpt),
            "--epochs", "1", "--shots", "2", "--width", "32",
        ]) == 0
        meta = json.loads((ckpt / "checkpoint.json").read_text())
        meta["model"]["c_in"] = 24
        (ckpt / "checkpoint.json").write_text(json.dumps(meta))
        code = main(["predict", "--checkpoint", str(ckpt), "--shape", str(tiny_corpus / "shape_0000"),
                     "--out", str(tmp_path / "p.sgb")])
        assert code == 1

    def test_timing_log_fields(self, tiny_corpus, capsys):
        assert main(["preprocess", "--data", str(tiny_corpus / "shape_0000")]) == 0
        out = capsys.readouterr().out
        assert "[time]" in out and "render=" in out and "masks=" in out and "build-graph=" in out

    def test_validate_subcommand(self, tiny_corpus, tmp_path, capsys):
        assert main(["validate", "--shape", str(tiny_corpus / "shape_0000")]) == 0
        assert capsys.readouterr().out.startswith("ok:")
        assert main(["validate", "--shape", str(tmp_path)]) == 1

    def test_parallel_jobs_reproduce_serial_outputs(self, tmp_path):
        for jobs, name in ((1, "serial"), (2, "parallel")):
            out = tmp_path / name
            assert main([
                "synth", "--out", str(out), "--seed", "4",
                "--num-train", "2", "--num-test", "0", "--parts", "2", "--points", "250",
            ]) == 0
            assert main(["preprocess", "--data", str(out), "--jobs", str(jobs)]) == 0
        serial, parallel = tmp_path / "serial", tmp_path / "parallel"
        for p in sorted(serial.rglob("*")):
            if p.is_file():
                twin = parallel / p.relative_to(serial)
                assert twin.read_bytes() == p.read_bytes(), p.name


class TestConfigFile:
    def test_config_file_sets_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("num-train = 1\nnum-test = 1\nparts = 2\npoints = 300\n# comment\n")
        out_dir = tmp_path / "corpus"
        assert main(["--config", str(cfg), "synth", "--out", str(out_dir), "--seed", "3"]) == 0
        corpus = json.loads((out_dir / "corpus.json").read_text())
        assert len(corpus["train"]) == 1 and len(corpus["test"]) == 1
        assert corpus["k"] == 2

    def test_explicit_flag_overrides_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("parts = 2\n")
        out_dir = tmp_path / "corpus"
        assert main(["--config", str(cfg), "synth", "--out", str(out_dir), "--parts", "4",
                     "--num-train", "1", "--num-test", "0", "--points", "300"]) == 0
        corpus = json.loads((out_dir / "corpus.json").read_text())
        assert corpus["k"] == 4


class TestGradcheckCommand:
    def test_prints_per_op_errors_and_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "gradcheck matmul:" in out
        assert "gradcheck end_to_end:" in out


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "seggraph.cli", "eval", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "--pred" in proc.stdout
