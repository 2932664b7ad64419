import os
import subprocess
import sys

import pytest

from senselab.cli import main, parse_config, UsageError
from senselab.corpus import Vocabulary
from senselab.lstm_lm import load_checkpoint

LM_TEXT = "the bank is open\nthe river bank is wet\nmoney in the bank\nthe river is wide\n" * 5


@pytest.fixture
def lm_files(tmp_path):
    corpus = tmp_path / "lm.txt"
    corpus.write_text(LM_TEXT)
    vocab = tmp_path / "vocab.txt"
    assert main(["build-vocab", "--corpus", str(corpus), "--out", str(vocab), "--quiet"]) == 0
    return corpus, vocab


def _train(corpus, vocab, out, *extra):
    return main(["train-lm", "--corpus", str(corpus), "--vocab", str(vocab), "--out", str(out), "--p", "4",
                 "--h", "6", "--epochs", "2", "--quiet", *extra])


def test_selfcheck_exits_zero(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_score_prints_two_thirds(tmp_path, capsys):
    gold = tmp_path / "gold.key"
    gold.write_text("a k1\nb k2\nc k3\n")
    pred = tmp_path / "pred.key"
    pred.write_text("a k1\nb k2\nc nope\n")
    report = tmp_path / "report.tsv"
    assert main(["score", "--pred", str(pred), "--gold", str(gold), "--report", str(report)]) == 0
    assert "f1         0.6667" in capsys.readouterr().out
    assert "f1\t0.6666666666666666" in report.read_text()


def test_score_with_pos_breakdown(data_dir, tmp_path, capsys):
    pred = tmp_path / "pred.key"
    pred.write_text("d0.s0.t0 bank%1:14:00::\n")
    assert main(["score", "--pred", str(pred), "--gold", str(data_dir / "fixture.key"),
                 "--xml", str(data_dir / "fixture.xml")]) == 0
    out = capsys.readouterr().out
    assert "f1         1.0000" in out and "noun" in out


def test_missing_input_is_data_error(tmp_path, capsys):
    missing = tmp_path / "nope.key"
    assert main(["score", "--pred", str(missing), "--gold", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_malformed_xml_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.xml"
    bad.write_text("<corpus><text id='d'>\n<sentence></text></corpus>")
    pred = tmp_path / "p.key"
    pred.write_text("")
    gold = tmp_path / "g.key"
    gold.write_text("")
    assert main(["score", "--pred", str(pred), "--gold", str(gold), "--xml", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["train-lm", "--bogus"], ["frobnicate"], [], ["score", "--threads", "x"]])
def test_usage_errors_exit_one(argv):
    assert main(argv) == 1


def test_bad_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text("nonsense = 1\n")
    assert main(["synth", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 1


def test_parse_config():
    assert parse_config("# c\nepochs = 3\nlearning-rate=0.1 # x\n\n") == {"epochs": "3", "learning_rate": "0.1"}
    with pytest.raises(UsageError):
        parse_config("epochs 3\n")


def test_config_file_then_env_then_flag(lm_files, tmp_path, monkeypatch):
    corpus, vocab = lm_files
    cfg = tmp_path / "train.conf"
    cfg.write_text(f"corpus = {corpus}\nvocab = {vocab}\nepochs = 1\nseed = 5\np = 4\nh = 6\n")
    out = tmp_path / "lm.ckpt"
    monkeypatch.delenv("SENSELAB_SEED", raising=False)
    assert main(["train-lm", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert load_checkpoint(out)[1].seed == 5
    manifest = (tmp_path / "lm.ckpt.manifest").read_text()
    assert "epochs = 1" in manifest and "seed = 5" in manifest
    monkeypatch.setenv("SENSELAB_SEED", "8")
    assert main(["train-lm", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert load_checkpoint(out)[1].seed == 8
    assert main(["train-lm", "--config", str(cfg), "--out", str(out), "--seed", "9", "--epochs", "2",
                 "--quiet"]) == 0
    assert load_checkpoint(out)[1].seed == 9
    assert len((tmp_path / "lm.ckpt.loss.tsv").read_text().splitlines()) == 2


def test_manifest_contents(lm_files, tmp_path):
    corpus, vocab = lm_files
    manifest = (tmp_path / "vocab.txt.manifest").read_text()
    assert "command = build-vocab" in manifest and "kernel_backend = " in manifest
    assert "input.corpus.sha256 = " in manifest
    assert Vocabulary.load(vocab).id_of["bank"] >= 4


def test_full_pipeline_and_determinism(lm_files, data_dir, tmp_path, capsys):
    corpus, vocab = lm_files
    outs = []
    for run in ("a", "b"):
        model = tmp_path / f"{run}.ckpt"
        assert _train(corpus, vocab, model, "--seed", "3") == 0
        senses = tmp_path / f"{run}.senses"
        assert main(["build-senses", "--model", str(model), "--vocab", str(vocab), "--xml",
                     str(data_dir / "two_docs.xml"), "--keys", str(data_dir / "two_docs.key"), "--out",
                     str(senses), "--quiet"]) == 0
        pred = tmp_path / f"{run}.pred"
        assert main(["disambiguate", "--model", str(model), "--vocab", str(vocab), "--senses", str(senses),
                     "--xml", str(data_dir / "two_docs.xml"), "--out", str(pred), "--quiet"]) == 0
        lp = tmp_path / f"{run}.lp"
        assert main(["propagate", "--model", str(model), "--vocab", str(vocab), "--train-xml",
                     str(data_dir / "two_docs.xml"), "--train-keys", str(data_dir / "two_docs.key"),
                     "--xml", str(data_dir / "two_docs.xml"), "--out", str(lp), "--quiet"]) == 0
        outs.append([p.read_bytes() for p in (model, senses, pred, lp)])
    assert outs[0] == outs[1]
    assert main(["score", "--pred", str(tmp_path / "a.pred"), "--gold", str(data_dir / "two_docs.key")]) == 0
    assert "f1" in capsys.readouterr().out


def test_checkpoint_with_other_vocab_is_rejected(lm_files, data_dir, tmp_path, capsys):
    corpus, vocab = lm_files
    model = tmp_path / "m.ckpt"
    assert _train(corpus, vocab, model) == 0
    other = tmp_path / "other.txt"
    other.write_text("<unk>\t0\n<tgt>\t0\n<eos>\t0\n<pad>\t0\nzebra\t1\n")
    assert main(["build-senses", "--model", str(model), "--vocab", str(other), "--xml",
                 str(data_dir / "fixture.xml"), "--keys", str(data_dir / "fixture.key"), "--out",
                 str(tmp_path / "s")]) == 2
    assert "digest" in capsys.readouterr().err


def test_synth_writes_benchmark(tmp_path):
    d = tmp_path / "bench"
    assert main(["synth", "--out-dir", str(d), "--n-lm", "40", "--n-train", "3", "--n-test", "6", "--quiet"]) == 0
    assert sorted(os.listdir(d)) == ["lm.txt", "synth.manifest", "test.key", "test.xml", "train.key", "train.xml"]
    assert len((d / "test.key").read_text().splitlines()) == 6


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "senselab", "score", "--pred", str(tmp_path / "x"), "--gold",
                        str(tmp_path / "x")], capture_output=True, text=True)
    assert r.returncode == 2 and "not found" in r.stderr
