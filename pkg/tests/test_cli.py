import json

import pytest

from xferlab.cli import main

from oracles import APPENDIX_EXAMPLE

MODEL = {"model": {"n_layers": 1, "n_heads": 2, "d_model": 16, "d_ff": 32, "max_seq_len": 24}}


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(MODEL))
    assert main(["synth", "--transform", "cipher", "--n", "400", "--task", "60", "--pairs", "20",
                 "--seed", "3", "--out", str(d / "syn")]) == 0
    assert main(["vocab", "--corpus", f"L1={d / 'syn/L1.txt'}", "--corpus", f"L2={d / 'syn/L2.txt'}",
                 "--size", "80", "--out", str(d / "voc")]) == 0
    assert main(["pretrain", "--corpus", str(d / "syn/L1.txt"), "--vocab", str(d / "voc/L1.vocab"),
                 "--config", str(cfg), "--steps", "3", "--batch-size", "8", "--out", str(d / "s1.ckpt")]) == 0
    assert main(["transfer", "--checkpoint", str(d / "s1.ckpt"), "--corpus", str(d / "syn/L2.txt"),
                 "--vocab", str(d / "voc/L2.vocab"), "--restarts", "1", "--steps", "3", "--batch-size", "8",
                 "--out", str(d / "s2.ckpt")]) == 0
    assert main(["finetune", "--checkpoint", str(d / "s2.ckpt"), "--task", str(d / "syn/task_L1.tsv"),
                 "--steps", "2", "--batch-size", "8", "--lr", "1e-3", "--out", str(d / "s3.ckpt")]) == 0
    return d


def test_synth_outputs(flow):
    names = {p.name for p in (flow / "syn").iterdir()}
    assert {"L1.txt", "L2.txt", "cipher.tsv", "task_L1.tsv", "task_L2.tsv", "minimal_pairs.tsv",
            "synth_spec.json", "manifest.json"} <= names


def test_manifest_records_hashes(flow):
    man = json.loads((flow / "s1.ckpt.manifest.json").read_text())
    assert man["command"] == "pretrain"
    assert any(k.endswith("L1.txt") for k in man["inputs"])
    assert all(len(h) == 64 for h in man["outputs"].values())


def test_eval_zero_shot_and_metrics(flow, capsys):
    metrics = flow / "m.jsonl"
    code = main(["eval", "--task", "cls", "--checkpoint", str(flow / "s3.ckpt"), "--data",
                 str(flow / "syn/task_L2.tsv"), "--language", "L2", "--metrics", str(metrics)])
    assert code == 0
    rec = json.loads(metrics.read_text().splitlines()[0])
    assert rec["task"] == "cls:L2" and rec["metric"] == "accuracy" and rec["n"] == 60


def test_audit_chain_passes(flow):
    assert main(["audit", str(flow / "s1.ckpt"), str(flow / "s2.ckpt"), str(flow / "s3.ckpt")]) == 0


def test_probe_syntax(flow):
    assert main(["probe", "--kind", "syntax", "--checkpoint", str(flow / "s1.ckpt"),
                 "--data", str(flow / "syn/minimal_pairs.tsv")]) == 0


def test_zero_shot_before_finetune_is_contract_error(flow):
    code = main(["eval", "--task", "cls", "--checkpoint", str(flow / "s2.ckpt"), "--data",
                 str(flow / "syn/task_L2.tsv"), "--language", "L2"])
    assert code == 2


def test_corrupt_checkpoint_exit_1(flow, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage" * 10)
    assert main(["audit", str(bad)]) == 1


@pytest.mark.parametrize("argv", [
    [], ["nope"], ["pretrain"], ["eval", "--task", "qa"], ["synth", "--transform", "bogus", "--out", "x"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_missing_file_exit_2(tmp_path):
    assert main(["pretrain", "--corpus", str(tmp_path / "no.txt"), "--vocab", "v", "--out", str(tmp_path / "o")]) == 2


def test_validate_xlation(tmp_path):
    src = tmp_path / "src.txt"
    good = tmp_path / "good.txt"
    bad = tmp_path / "bad.txt"
    src.write_text(APPENDIX_EXAMPLE + "\n")
    good.write_text("dies ist *0* eine Beispielspanne #0# mit Platzhaltern\n")
    bad.write_text("dies ist eine Beispielspanne #0# ohne Anfang\n")
    assert main(["validate-xlation", "--src", str(src), "--tgt", str(good)]) == 0
    assert main(["validate-xlation", "--src", str(src), "--tgt", str(bad), "--out", str(tmp_path / "r.json")]) == 1
    report = json.loads((tmp_path / "r.json").read_text())
    assert report[0]["ok"] is False


def test_eval_qa(tmp_path, capsys):
    gold = {"data": [{"title": "t", "paragraphs": [{"context": "the cat sat on the mat", "qas": [
        {"id": "q1", "question": "where?", "answers": [{"text": "on the mat", "answer_start": 12}]}]}]}]}
    (tmp_path / "g.json").write_text(json.dumps(gold))
    (tmp_path / "p.json").write_text(json.dumps({"q1": "the mat"}))
    out = tmp_path / "o.json"
    assert main(["eval", "--task", "qa", "--gold", str(tmp_path / "g.json"), "--pred", str(tmp_path / "p.json"),
                 "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["em"] == 0.0 and res["f1"] == pytest.approx(2 * 1 * 0.5 / 1.5)


def test_version(capsys):
    assert main(["--version"]) == 0
