import csv
import json

import pytest

from convact.cli import EXIT_DIVERGED, EXIT_INPUT, EXIT_OK, main
from convact.corpus import parse_corpus, write_corpus
from convact.synth import SynthProfile, synth_generate

TINY = dict(embed_dim=6, word_hidden=4, conv_hidden=4, disc_hidden=4, epochs=2, batch_size=3)


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    src, tgt = synth_generate(SynthProfile(substitution_rate=0.5, conversation_length=(3, 5)), 8, 0)
    paths = {
        "source": d / "source.jsonl",
        "train": d / "train.jsonl",
        "dev": d / "dev.jsonl",
        "test": d / "test.jsonl",
        "unl": d / "unl.jsonl",
        "config": d / "config.json",
    }
    write_corpus(src, paths["source"])
    write_corpus(tgt[:4], paths["train"])
    write_corpus(tgt[4:6], paths["dev"])
    write_corpus(tgt[6:], paths["test"])
    write_corpus([c.strip_labels() for c in tgt[:4]], paths["unl"])
    paths["config"].write_text(json.dumps(TINY))
    paths["dir"] = d
    return paths


def train_args(files, out, *extra):
    return ["train", "--config", str(files["config"]), "--train", str(files["train"]),
            "--dev", str(files["dev"]), "--out", str(out), *extra]


def test_train_is_byte_reproducible(files):
    a, b = files["dir"] / "a.ckpt", files["dir"] / "b.ckpt"
    assert main(train_args(files, a, "--seed", "4")) == EXIT_OK
    assert main(train_args(files, b, "--seed", "4")) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    history = json.loads((files["dir"] / "a.ckpt.history.json").read_text())
    assert len(history) == 2 and history[0]["phase"] == "main"


def test_train_needs_dev(files, capsys):
    code = main(["train", "--train", str(files["train"]), "--out", str(files["dir"] / "x.ckpt")])
    assert code == EXIT_INPUT
    assert "--dev" in capsys.readouterr().err


def test_train_unknown_config_key(files, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"epochz": 3}')
    args = ["train", "--config", str(cfg), "--train", str(files["train"]), "--dev", str(files["dev"]),
            "--out", str(tmp_path / "x.ckpt")]
    assert main(args) == EXIT_INPUT


def test_train_rejects_adapt_regime_and_missing_source(files, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(TINY, regime="adapt-unsup")))
    args = ["train", "--config", str(cfg), "--train", str(files["train"]), "--dev", str(files["dev"]),
            "--out", str(tmp_path / "x.ckpt")]
    assert main(args) == EXIT_INPUT
    cfg.write_text(json.dumps(dict(TINY, regime="merge")))
    assert main(args) == EXIT_INPUT
    assert main(args + ["--source", str(files["source"])]) == EXIT_OK


def test_missing_input_file(files, tmp_path):
    args = ["train", "--train", str(tmp_path / "nope.jsonl"), "--dev", str(files["dev"]), "--out", str(tmp_path / "x")]
    assert main(args) == EXIT_INPUT


def test_adapt_modes(files, tmp_path):
    base = ["adapt", "--config", str(files["config"]), "--source", str(files["source"]), "--dev", str(files["dev"])]
    out = tmp_path / "u.ckpt"
    assert main(base + ["--mode", "unsup", "--target-unlabeled", str(files["unl"]), "--out", str(out)]) == EXIT_OK
    history = json.loads((tmp_path / "u.ckpt.history.json").read_text())
    assert all(h["loss_d"] is not None for h in history)
    assert main(base + ["--mode", "unsup", "--target-labeled", str(files["train"]),
                        "--target-unlabeled", str(files["unl"]), "--out", str(out)]) == EXIT_INPUT
    assert main(base + ["--mode", "sup", "--out", str(out)]) == EXIT_INPUT
    assert main(base + ["--mode", "sup", "--target-labeled", str(files["train"]),
                        "--target-fraction", "0.5", "--out", str(out)]) == EXIT_INPUT
    assert main(base + ["--mode", "semisup", "--target-labeled", str(files["train"]),
                        "--target-fraction", "0.5", "--out", str(out)]) == EXIT_OK


def test_eval_writes_report_and_confusion(files, tmp_path, capsys):
    model = tmp_path / "m.ckpt"
    assert main(train_args(files, model)) == EXIT_OK
    report, cm = tmp_path / "r.json", tmp_path / "cm.csv"
    code = main(["eval", "--model", str(model), "--test", str(files["test"]), "--report", str(report),
                 "--confusion", str(cm)])
    assert code == EXIT_OK
    rep = json.loads(report.read_text())
    n = sum(len(c) for c in parse_corpus(files["test"]))
    assert rep["n_sentences"] == n and 0 <= rep["macro_f1"] <= 1
    rows = list(csv.reader(cm.open()))
    assert rows[0] == ["gold/pred", "SU", "R", "Q", "P", "ST"]
    gold = [s.act for c in parse_corpus(files["test"]) for s in c.sentences]
    assert [sum(map(int, r[1:])) for r in rows[1:]] == [gold.count(t) for t in rows[0][1:]]
    assert "macro-F1" in capsys.readouterr().out


def test_eval_rejects_unlabeled_test(files, tmp_path, capsys):
    model = tmp_path / "m.ckpt"
    main(train_args(files, model))
    code = main(["eval", "--model", str(model), "--test", str(files["unl"]), "--report", str(tmp_path / "r")])
    assert code == EXIT_INPUT
    first = parse_corpus(files["unl"])[0].id
    assert first in capsys.readouterr().err


def test_eval_bad_checkpoint(files, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b'{"format_version": 99}\n')
    assert main(["eval", "--model", str(bad), "--test", str(files["test"]), "--report", str(tmp_path / "r")]) == EXIT_INPUT


def test_predict_fills_missing_acts(files, tmp_path, capsys):
    model = tmp_path / "m.ckpt"
    main(train_args(files, model))
    out_unl, out_lab = tmp_path / "p1.jsonl", tmp_path / "p2.jsonl"
    assert main(["predict", "--model", str(model), "--input", str(files["unl"]), "--out", str(out_unl)]) == EXIT_OK
    filled = parse_corpus(out_unl)
    assert all(c.is_labeled for c in filled)
    assert "no existing labels" in capsys.readouterr().err
    assert main(["predict", "--model", str(model), "--input", str(files["train"]), "--out", str(out_lab)]) == EXIT_OK
    assert "agreement" in capsys.readouterr().err
    labeled = parse_corpus(out_lab)
    assert labeled == parse_corpus(files["train"])
    assert [c.id for c in filled] == [c.id for c in labeled]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(files, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(TINY, adam_lr=float("inf"))))
    args = ["train", "--config", str(cfg), "--train", str(files["train"]), "--dev", str(files["dev"]),
            "--out", str(tmp_path / "x.ckpt")]
    assert main(args) == EXIT_DIVERGED


def test_synth_command(tmp_path, capsys):
    s, t = tmp_path / "s.jsonl", tmp_path / "t.jsonl"
    assert main(["synth", "--n", "4", "--seed", "2", "--out-source", str(s), "--out-target", str(t)]) == EXIT_OK
    assert len(parse_corpus(s)) == 4 and {c.domain for c in parse_corpus(t)} == {"target"}
    prof = tmp_path / "p.json"
    prof.write_text('{"substitution_rate": 2}')
    assert main(["synth", "--profile", str(prof), "--n", "2", "--out-source", str(s), "--out-target", str(t)]) == EXIT_INPUT


def test_verify_schedule_suite(capsys):
    assert main(["verify", "--suite", "schedule"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out


def test_unknown_command():
    assert main(["fly"]) == EXIT_INPUT
