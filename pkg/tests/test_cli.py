import json

import pytest

from sdse.cli import main, read_config_file, UsageError


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-synthetic", "--out", str(d / "toy.jsonl"), "--n-docs", "4",
                 "--nonce-rate", "0.5", "--seed", "3"]) == 0
    return d


@pytest.fixture(scope="module")
def trained(workdir):
    ck = workdir / "ck.bin"
    rc = main(["train", "--corpus", str(workdir / "toy.jsonl"), "--out", str(ck),
               "--hidden", "8", "--embed", "6", "--vocab", "60", "--steps", "12", "--log-every", "4"])
    assert rc == 0
    return ck


def test_train_outputs(trained, workdir, capsys):
    curve = (workdir / "ck.bin.curve.tsv").read_text().splitlines()
    assert curve[0] == "step\tloss\tnll\tcoverage" and len(curve) == 4
    assert trained.read_bytes()[:4] == b"SDSE"


def test_train_is_reproducible(trained, workdir):
    other = workdir / "ck2.bin"
    main(["train", "--corpus", str(workdir / "toy.jsonl"), "--out", str(other),
          "--hidden", "8", "--embed", "6", "--vocab", "60", "--steps", "12", "--log-every", "4"])
    assert other.read_bytes() == trained.read_bytes()


def test_summarize_and_evaluate(trained, workdir):
    pred = workdir / "pred.jsonl"
    assert main(["summarize", "--model", str(trained), "--corpus", str(workdir / "toy.jsonl"),
                 "--out", str(pred), "--max-decode-len", "8"]) == 0
    rows = [json.loads(l) for l in pred.read_text().splitlines()]
    assert len(rows) == 4 and set(rows[0]) == {"id", "summary"}
    out = workdir / "scores.tsv"
    assert main(["evaluate", "--pred", str(pred), "--ref", str(workdir / "toy.jsonl"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "metric\tprecision\trecall\tf1"
    assert [l.split("\t")[0] for l in lines[1:]] == ["rouge-1", "rouge-2", "rouge-l"]


def test_evaluate_self_is_perfect(workdir, capsys):
    ref = str(workdir / "toy.jsonl")
    assert main(["evaluate", "--pred", ref, "--ref", ref]) == 0
    out = capsys.readouterr().out.splitlines()
    assert all(l.endswith("1.000000") for l in out[1:])


def test_trace_gates(trained, workdir):
    out = workdir / "trace.tsv"
    assert main(["trace-gates", "--model", str(trained), "--corpus", str(workdir / "toy.jsonl"),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("step\t")
    assert set(lines[1].split("\t")[1:]) == {"1.0"}


def test_preprocess(workdir):
    out, voc = workdir / "ser.jsonl", workdir / "vocab.txt"
    assert main(["preprocess", "--corpus", str(workdir / "toy.jsonl"), "--out", str(out),
                 "--vocab-out", str(voc), "--vocab", "30"]) == 0
    words = voc.read_text().splitlines()
    assert words[:4] == ["<pad>", "<unk>", "<s>", "</s>"] and len(words) <= 30
    row = json.loads(out.read_text().splitlines()[0])
    assert len(row["tokens"]) == len(row["ids"]) == len(row["word_mask"])


def test_gradcheck(capsys):
    assert main(["gradcheck", "--hidden", "3", "--embed", "2", "--vocab", "24", "--seed", "1"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_usage_errors(capsys, workdir):
    assert main(["train", "--bogus"]) == 1
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_data_error_exit_code(workdir):
    assert main(["summarize", "--model", str(workdir / "missing.bin"),
                 "--corpus", str(workdir / "toy.jsonl")]) == 2
    bad = workdir / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["train", "--corpus", str(bad), "--out", str(workdir / "x.bin")]) == 2


def test_config_file_and_overrides(workdir, capsys):
    cfg = workdir / "run.cfg"
    cfg.write_text("# tiny run\nhidden = 8\nembed=6\nvocab=60\nsteps=3\nno_coverage=true\n")
    assert read_config_file(cfg) == {"hidden": 8, "embed": 6, "vocab": 60, "steps": 3, "no_coverage": True}
    rc = main(["train", "--corpus", str(workdir / "toy.jsonl"), "--out", str(workdir / "c.bin"),
               "--config", str(cfg), "--steps", "2"])
    assert rc == 0
    err = capsys.readouterr().err
    assert err.count("config:") == 1
    assert "steps=2" in err and "hidden=8" in err and "no_coverage=True" in err


def test_unknown_config_key(workdir):
    cfg = workdir / "bad.cfg"
    cfg.write_text("hiden=8\n")
    with pytest.raises(UsageError):
        read_config_file(cfg)
    assert main(["train", "--corpus", str(workdir / "toy.jsonl"), "--out", "x", "--config", str(cfg)]) == 1
