import csv
import json
import subprocess
import sys

import pytest

from cycleasr.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_MISSING, EXIT_USAGE, main
from cycleasr.config import load_config
from cycleasr.decoder import read_decode_output

SMALL = [
    "--set", "corpus.utterances=40", "--set", "corpus.dev_utterances=6", "--set", "corpus.eval_utterances=6",
    "--set", "corpus.feat_dim=8",
    "--set", "experiment.hidden=6", "--set", "experiment.att_dim=6", "--set", "experiment.embed_dim=4",
    "--set", "experiment.epochs_initial=1", "--set", "experiment.epochs_retrain=1",
    "--set", "experiment.epochs_lm=1", "--set", "experiment.lm_hidden=6", "--set", "experiment.beam_width=2",
]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--output-dir", str(out), *SMALL]) == 0
    assert main(["train-initial", "--output-dir", str(out), *SMALL]) == 0
    return out


def files_in(path):
    return sorted(p.name for p in path.iterdir()) if path.exists() else []


class TestStages:
    def test_gen_data_writes_corpus_and_config(self, run_dir):
        assert (run_dir / "corpus" / "manifest.jsonl").exists()
        corpus_cfg, exp = load_config(run_dir / "gen-data.config.ini")
        assert corpus_cfg.utterances == 40 and exp.hidden == 6

    def test_train_initial_checkpoint(self, run_dir):
        assert (run_dir / "initial.ckpt").exists()
        assert (run_dir / "initial_log.csv").exists()

    def test_retrain_decode_score(self, run_dir, capsys):
        init = str(run_dir / "initial.ckpt")
        assert main(["retrain", "--output-dir", str(run_dir), "--init-checkpoint", init,
                     "--variant", "Retrain-idt", "--beta", "0.2", *SMALL]) == 0
        ckpt = run_dir / "retrain_Retrain-idt_beta0.2.ckpt"
        assert ckpt.exists()
        dec = run_dir / "dec.jsonl"
        assert main(["decode", "--output-dir", str(run_dir), "--checkpoint", str(ckpt), "--out", str(dec), *SMALL]) == 0
        assert len(read_decode_output(dec)) == 6
        capsys.readouterr()
        assert main(["score", "--output-dir", str(run_dir), "--hyp", str(dec), "--model", "idt", *SMALL]) == 0
        assert capsys.readouterr().out.splitlines()[0].split() == ["Model", "Type", "LM", "CER(%)", "WER(%)"]
        rows = list(csv.DictReader(open(run_dir / "score.csv")))
        assert rows[0]["model"] == "idt"

    def test_score_against_reference_file(self, tmp_path):
        (tmp_path / "hyp.jsonl").write_text(json.dumps({"id": "a", "text": "ab", "score": 0.0}) + "\n")
        (tmp_path / "ref.jsonl").write_text(json.dumps({"id": "a", "text": "abc", "score": 0.0}) + "\n")
        assert main(["score", "--output-dir", str(tmp_path), "--hyp", str(tmp_path / "hyp.jsonl"),
                     "--ref", str(tmp_path / "ref.jsonl")]) == 0
        row = next(csv.DictReader(open(tmp_path / "score.csv")))
        assert row["char_del"] == "1"

    def test_lm_and_fused_decode(self, run_dir):
        assert main(["train-lm", "--output-dir", str(run_dir), *SMALL]) == 0
        assert main(["decode", "--output-dir", str(run_dir), "--checkpoint", str(run_dir / "initial.ckpt"),
                     "--lm", str(run_dir / "rnnlm.ckpt"), "--lm-weight", "0.3", "--split", "dev", *SMALL]) == 0
        assert len(read_decode_output(run_dir / "decode_dev.jsonl")) == 6

    def test_sweep_beta(self, run_dir):
        out = run_dir / "sweep.csv"
        assert main(["sweep-beta", "--output-dir", str(run_dir), "--init-checkpoint", str(run_dir / "initial.ckpt"),
                     "--betas", "0,1", "--variants", "Baseline,Retrain-cyc", "--out", str(out), *SMALL]) == 0
        rows = list(csv.DictReader(open(out)))
        assert [(r["variant"], r["beta"]) for r in rows] == [
            ("Baseline", "0"), ("Baseline", "1"), ("Retrain-cyc", "0"), ("Retrain-cyc", "1")]

    def test_export_embeddings(self, run_dir):
        out = run_dir / "emb.csv"
        assert main(["export-embeddings", "--output-dir", str(run_dir), "--checkpoint", str(run_dir / "initial.ckpt"),
                     "--out", str(out), *SMALL]) == 0
        header = out.read_text().splitlines()[0].split(",")
        assert header[:3] == ["utt_id", "source", "frame"] and header[-1] == "proj1"

    def test_output_root_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CYCLEASR_OUTPUT_ROOT", str(tmp_path / "env"))
        assert main(["gen-data", *SMALL]) == 0
        assert (tmp_path / "env" / "corpus" / "manifest.jsonl").exists()


class TestExitCodes:
    def test_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["retrain"])
        assert exc.value.code == EXIT_USAGE

    def test_bad_config_value(self, tmp_path, capsys):
        assert main(["gen-data", "--output-dir", str(tmp_path), "--set", "experiment.beta=2"]) == EXIT_CONFIG
        assert capsys.readouterr().err.startswith("cycleasr: invalid configuration:")

    def test_retrain_rejects_initial_variant(self, run_dir, capsys):
        code = main(["retrain", "--output-dir", str(run_dir), "--init-checkpoint", str(run_dir / "initial.ckpt"),
                     "--variant", "Initial", *SMALL])
        assert code == EXIT_CONFIG

    def test_missing_checkpoint_writes_nothing(self, tmp_path, capsys):
        out = tmp_path / "never"
        code = main(["decode", "--output-dir", str(out), "--checkpoint", str(tmp_path / "x.ckpt")])
        assert code == EXIT_MISSING
        assert "missing input" in capsys.readouterr().err
        assert files_in(out) == []

    def test_corrupt_checkpoint(self, run_dir, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint")
        assert main(["decode", "--output-dir", str(tmp_path), "--corpus", str(run_dir / "corpus"),
                     "--checkpoint", str(bad), *SMALL]) == EXIT_MISSING
        assert "unreadable checkpoint" in capsys.readouterr().err

    def test_missing_corpus(self, tmp_path):
        assert main(["train-initial", "--output-dir", str(tmp_path)]) == EXIT_MISSING

    def test_invalid_input(self, tmp_path, capsys):
        (tmp_path / "hyp.jsonl").write_text(json.dumps({"id": "a", "text": "x", "score": 0.0}) + "\n")
        (tmp_path / "ref.jsonl").write_text(json.dumps({"id": "b", "text": "y", "score": 0.0}) + "\n")
        code = main(["score", "--output-dir", str(tmp_path), "--hyp", str(tmp_path / "hyp.jsonl"),
                     "--ref", str(tmp_path / "ref.jsonl")])
        assert code == EXIT_INPUT
        assert capsys.readouterr().err.startswith("cycleasr: invalid input:")

    def test_console_script_entry(self):
        proc = subprocess.run([sys.executable, "-m", "cycleasr.cli", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "gen-data" in proc.stdout
