import subprocess
import sys

import pytest

from dialcl.checkpoint import load_checkpoint
from dialcl.cli import dispatch, read_config_file
from dialcl.corpus import read_dataset

SMALL = ["--epochs", "1", "--batch-size", "8", "--dim", "8", "--hidden", "16", "--max-len", "32", "--eval-interval", "3"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert dispatch(["prepare", "--synthetic", "60", "--out-dir", str(d)]) == 0
    return d


def run(argv, capsys):
    code = dispatch(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_prepare_reports_statistics(data, capsys):
    code, out, err = run(["prepare", "--input", str(data / "train.tsv"), "--vocab-out", str(data / "v.txt"),
                          "--diagnostics", str(data / "diag.txt")], capsys)
    assert code == 0
    assert "Pos:Neg 1:1" in out and "vocabulary:" in out
    assert "resolved configuration" in err
    assert (data / "v.txt").read_text().startswith("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n")


def test_train_eval_headline_config(data, capsys):
    ck = data / "m.dclr"
    code, out, err = run(["train", "--train", str(data / "train.tsv"), "--dev", str(data / "dev.tsv"),
                          "--out", str(ck), "--strategy", "tl", "--tau", "0.05", "--alpha", "1.0", "--lambda", "1.0",
                          "--state-out", str(data / "state.dclr"), "--history", str(data / "hist.jsonl"), *SMALL], capsys)
    assert code == 0, err
    for key in ("tau = 0.05  [flag]", "alpha = 1.0  [flag]", "lam = 1.0  [flag]", "seed = 0  [default]",
                "eval_interval = 3  [flag]"):
        assert key in err
    header = load_checkpoint(ck).header
    assert header["config"]["tau"] == 0.05 and header["config"]["strategy"] == "tl"
    assert (data / "hist.jsonl").read_text().count('"split": "train"') > 0
    code, out, err = run(["eval", "--checkpoint", str(ck), "--test", str(data / "dev.tsv"), "--pairwise",
                          "--records", str(data / "rec.jsonl")], capsys)
    assert code == 0, err
    assert "R@1" in out and len((data / "rec.jsonl").read_text().splitlines()) == 6


def test_bad_strategy_is_usage_error(capsys):
    code, out, err = run(["train", "--train", "x", "--out", "y", "--strategy", "bogus"], capsys)
    assert code == 1 and out == ""
    assert "usage:" in err and "invalid choice" in err


@pytest.mark.parametrize("argv", [
    ["train", "--train", "x", "--out", "y", "--frobnicate"],
    ["nosuchcommand"],
    [],
    ["eval", "--test", "t.tsv"],
])
def test_usage_errors(argv, capsys):
    code, out, err = run(argv, capsys)
    assert code == 1 and out == "" and "usage:" in err


def test_missing_checkpoint_is_runtime_error(data, capsys):
    code, out, err = run(["eval", "--checkpoint", str(data / "missing.dclr"), "--test", str(data / "dev.tsv")], capsys)
    assert code == 2 and out == ""
    assert "missing.dclr" in err


def test_malformed_corpus_is_runtime_error(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("1\ta\tb\n7\tc\td\n")
    code, out, err = run(["prepare", "--input", str(bad)], capsys)
    assert code == 2 and out == "" and "line 2" in err


def test_missing_input_file(tmp_path, capsys):
    code, out, err = run(["prepare", "--input", str(tmp_path / "nope.tsv")], capsys)
    assert code == 2 and "nope.tsv" in err


def test_vocab_mismatch_is_refused(data, tmp_path, capsys):
    ck = data / "m.dclr"
    if not ck.exists():
        pytest.skip("needs the trained checkpoint")
    other = tmp_path / "v.txt"
    other.write_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nzz\n")
    code, _, err = run(["eval", "--checkpoint", str(ck), "--test", str(data / "dev.tsv"), "--vocab", str(other)], capsys)
    assert code == 2 and "digest" in err


def test_config_file_precedence(data, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ntau = 0.2\nalpha = 0.5\nlambda = 2.0\nscl = false\n")
    ck = tmp_path / "m.dclr"
    code, _, err = run(["--config", str(cfg), "train", "--train", str(data / "train.tsv"), "--out", str(ck),
                        "--alpha", "0.7", *SMALL], capsys)
    assert code == 0, err
    assert "tau = 0.2  [config]" in err and "alpha = 0.7  [flag]" in err and "lam = 2.0  [config]" in err
    assert "use_scl = False  [config]" in err and "lr = 0.02  [default]" in err
    c = load_checkpoint(ck).header["config"]
    assert (c["tau"], c["alpha"], c["lam"], c["use_scl"]) == (0.2, 0.7, 2.0, False)


def test_config_file_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense_key = 3\n")
    assert run(["--config", str(cfg), "train", "--train", "x", "--out", "y"], capsys)[0] == 1
    cfg.write_text("tau 3\n")
    assert run(["--config", str(cfg), "train", "--train", "x", "--out", "y"], capsys)[0] == 1
    cfg.write_text("strategy = bogus\n")
    assert run(["--config", str(cfg), "train", "--train", "x", "--out", "y"], capsys)[0] == 1
    assert run(["--config", str(tmp_path / "none.cfg"), "train", "--train", "x", "--out", "y"], capsys)[0] == 1


def test_read_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("batch-size = 4\n\n# x\nstrategy=sr\n")
    assert read_config_file(p) == {"batch_size": "4", "strategy": "sr"}


def test_augment_preview(data, capsys):
    code, out, _ = run(["augment-preview", "--input", str(data / "dev.tsv"), "--strategy", "tl", "--limit", "2"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 8 and lines[0].startswith("anchor[0]") and lines[1].startswith("view[0]")


def test_postgen_is_byte_identical(data, tmp_path, capsys):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    for path in (a, b):
        assert run(["postgen", "--input", str(data / "train.tsv"), "--count", "25", "--seed", "3",
                    "--out", str(path)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    code, out, _ = run(["postgen", "--input", str(data / "train.tsv"), "--count", "3", "--preview"], capsys)
    assert code == 0 and len(out.splitlines()) == 3
    assert run(["postgen", "--input", str(data / "train.tsv"), "--count", "3"], capsys)[0] == 1


def test_ablate_table(data, capsys):
    code, out, err = run(["ablate", "--train", str(data / "train.tsv"), "--dev", str(data / "dev.tsv"),
                          "--name", "syn", "--cells", "none:off,tl:off,tl:on", *SMALL], capsys)
    assert code == 0, err
    labels = [line.split("|")[1].strip() for line in out.splitlines()[2:]]
    assert labels == ["Enc+", "Enc+_TL w/o CL", "Enc+_TL"]
    assert run(["ablate", "--train", "x", "--dev", "y", "--cells", "tl:maybe"], capsys)[0] == 1


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "dialcl.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "augment-preview" in out.stdout
    out = subprocess.run([sys.executable, "-m", "dialcl.cli", "--strategy"], capture_output=True, text=True)
    assert out.returncode == 1
