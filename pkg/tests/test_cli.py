"""End-to-end command-line behavior on small corpora."""

import csv
import json

import numpy as np
import pytest

from adstext.cli import main
from adstext.manifest import sha256_file
from adstext.structures import write_structures
from helpers import make_corpus, make_relaxer_corpus

TINY_MODEL = ["--d-model", "16", "--n-heads", "2", "--n-layers", "1",
              "--d-ff", "32", "--max-len", "40", "--dropout", "0.0"]


@pytest.fixture
def workdir(tmp_path):
    corpus = make_corpus(24, seed=100)
    structures_path = tmp_path / "structures.jsonl"
    write_structures(corpus, structures_path)
    return tmp_path, structures_path


def run(argv):
    return main([str(a) for a in argv])


def test_convert_writes_records_and_manifest(workdir):
    tmp_path, structures_path = workdir
    out = tmp_path / "records.jsonl"
    assert run(["convert", "--in", structures_path, "--out", out]) == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 24
    manifest = json.loads((tmp_path / "records.jsonl.manifest.json").read_text())
    assert manifest["command"] == "convert"
    assert manifest["outputs"][str(out)] == sha256_file(out)
    assert str(structures_path) in manifest["inputs"]


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as excinfo:
        run(["frobnicate"])
    assert excinfo.value.code == 2


def test_unknown_flag_exits_2(workdir):
    tmp_path, structures_path = workdir
    with pytest.raises(SystemExit) as excinfo:
        run(["vocab", "--in", structures_path, "--out", tmp_path / "v", "--bogus"])
    assert excinfo.value.code == 2


def test_missing_file_exits_1(tmp_path, capsys):
    assert run(["convert", "--in", tmp_path / "nope.jsonl", "--out", tmp_path / "o"]) in (1,)


def test_validation_failure_exits_1(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"system_id": "x"}\n')
    assert run(["convert", "--in", bad, "--out", tmp_path / "o"]) == 1


def test_full_pipeline(workdir, capsys):
    tmp_path, structures_path = workdir
    records = tmp_path / "records.jsonl"
    vocab = tmp_path / "vocab.txt"
    emb = tmp_path / "graphemb.jsonl"
    gap = tmp_path / "gap.ckpt"
    model = tmp_path / "model.ckpt"
    preds = tmp_path / "preds.csv"

    assert run(["convert", "--in", structures_path, "--out", records]) == 0
    assert run(["vocab", "--in", records, "--out", vocab]) == 0
    assert run(["synth-graphemb", "--in", structures_path, "--out", emb,
                "--seed", 0, "--channels", 4, "--degrees", 4]) == 0
    assert run(["pretrain-gap", "--records", records, "--vocab", vocab,
                "--graphemb", emb, "--out", gap, "--seed", 0,
                "--batch-size", 8, "--epochs", 2, "--lr", "5e-4", *TINY_MODEL]) == 0
    assert run(["finetune", "--records", records, "--vocab", vocab,
                "--init", gap, "--out", model, "--seed", 0,
                "--batch-size", 8, "--epochs", 2, "--lr", "1e-3", *TINY_MODEL]) == 0
    assert run(["predict", "--checkpoint", model, "--records", records,
                "--vocab", vocab, "--out", preds]) == 0
    rows = list(csv.DictReader(preds.open()))
    assert len(rows) == 24
    assert all(r["prediction"] for r in rows)

    out_dir = tmp_path / "report"
    assert run(["eval", "--checkpoint", model, "--records", records,
                "--vocab", vocab, "--out-dir", out_dir]) == 0
    captured = capsys.readouterr().out
    assert "mae [eV]" in captured
    assert (out_dir / "summary.csv").exists()
    assert (out_dir / "parity.csv").exists()


def test_gap_projection_dim_follows_embedding_file(workdir):
    tmp_path, structures_path = workdir
    records = tmp_path / "records.jsonl"
    vocab = tmp_path / "vocab.txt"
    emb = tmp_path / "graphemb.jsonl"
    gap = tmp_path / "gap.ckpt"
    run(["convert", "--in", structures_path, "--out", records])
    run(["vocab", "--in", records, "--out", vocab])
    run(["synth-graphemb", "--in", structures_path, "--out", emb,
         "--seed", 1, "--channels", 3, "--degrees", 5, "--per-atom"])
    assert run(["pretrain-gap", "--records", records, "--vocab", vocab,
                "--graphemb", emb, "--out", gap, "--seed", 0,
                "--batch-size", 8, "--epochs", 1, *TINY_MODEL]) == 0
    from adstext.checkpoint import load_checkpoint

    tensors, meta = load_checkpoint(gap)
    assert meta["config"]["d_graph"] == 15
    assert tensors["proj_w"].shape == (16, 15)


def test_reruns_are_bit_identical(workdir):
    tmp_path, structures_path = workdir
    records = tmp_path / "records.jsonl"
    vocab = tmp_path / "vocab.txt"
    run(["convert", "--in", structures_path, "--out", records])
    run(["vocab", "--in", records, "--out", vocab])

    outs = []
    for run_idx in range(2):
        model = tmp_path / f"model{run_idx}.ckpt"
        log = tmp_path / f"log{run_idx}.csv"
        assert run(["finetune", "--records", records, "--vocab", vocab,
                    "--out", model, "--seed", 42, "--batch-size", 8,
                    "--epochs", 2, "--log", log, *TINY_MODEL]) == 0
        outs.append((model.read_bytes(), log.read_bytes()))
    assert outs[0] == outs[1]


def test_pretrain_mlm_command(workdir):
    tmp_path, structures_path = workdir
    records = tmp_path / "records.jsonl"
    vocab = tmp_path / "vocab.txt"
    ck = tmp_path / "mlm.ckpt"
    run(["convert", "--in", structures_path, "--out", records])
    run(["vocab", "--in", records, "--out", vocab])
    assert run(["pretrain-mlm", "--records", records, "--vocab", vocab,
                "--out", ck, "--seed", 3, "--batch-size", 8, "--epochs", 2,
                "--lr", "1e-3", *TINY_MODEL]) == 0
    from adstext.checkpoint import load_checkpoint

    _, meta = load_checkpoint(ck)
    assert meta["stage"] == "mlm"
    assert meta["finetuned"] is False


def test_config_file_with_flag_override(workdir):
    tmp_path, structures_path = workdir
    records = tmp_path / "records.jsonl"
    vocab = tmp_path / "vocab.txt"
    ck = tmp_path / "m.ckpt"
    run(["convert", "--in", structures_path, "--out", records])
    run(["vocab", "--in", records, "--out", vocab])
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# training setup\n"
        "epochs = 1\n"
        "batch_size = 8\n"
        "lr = 1e-3\n"
        "seed = 5\n"
        "d_model = 16\n"
        "n_heads = 2\n"
        "n_layers = 1\n"
        "d_ff = 32\n"
        "max_len = 40\n"
        "dropout = 0.0\n"
    )
    assert run(["finetune", "--records", records, "--vocab", vocab,
                "--out", ck, "--config", cfg, "--epochs", "2"]) == 0
    from adstext.checkpoint import load_checkpoint

    _, meta = load_checkpoint(ck)
    assert meta["config"]["d_model"] == 16

    manifest = json.loads((tmp_path / "m.ckpt.manifest.json").read_text())
    assert manifest["config"]["epochs"] in (2, "2")  # flag overrode the file's 1


def test_predict_without_labels(workdir):
    tmp_path, structures_path = workdir
    # strip labels from the structure file
    lines = structures_path.read_text().strip().splitlines()
    stripped = tmp_path / "unlabeled.jsonl"
    with stripped.open("w") as fh:
        for line in lines:
            obj = json.loads(line)
            obj["energy_label"] = None
            fh.write(json.dumps(obj) + "\n")
    records = tmp_path / "records.jsonl"
    vocab = tmp_path / "vocab.txt"
    model = tmp_path / "model.ckpt"
    preds = tmp_path / "preds.csv"
    run(["convert", "--in", structures_path, "--out", tmp_path / "labeled.jsonl"])
    run(["vocab", "--in", tmp_path / "labeled.jsonl", "--out", vocab])
    run(["finetune", "--records", tmp_path / "labeled.jsonl", "--vocab", vocab,
         "--out", model, "--seed", 0, "--batch-size", 8, "--epochs", 1, *TINY_MODEL])
    run(["convert", "--in", stripped, "--out", records])
    assert run(["predict", "--checkpoint", model, "--records", records,
                "--vocab", vocab, "--out", preds]) == 0
    rows = list(csv.DictReader(preds.open()))
    assert len(rows) == 24
    assert all(r["label"] == "" for r in rows)


def test_analysis_commands(workdir, capsys):
    tmp_path, _ = workdir
    variants = make_relaxer_corpus(8, seed=7)
    structures_path = tmp_path / "variants.jsonl"
    write_structures(variants, structures_path)
    records = tmp_path / "records.jsonl"
    vocab = tmp_path / "vocab.txt"
    model = tmp_path / "model.ckpt"
    run(["convert", "--in", structures_path, "--out", records])
    run(["vocab", "--in", records, "--out", vocab])
    run(["finetune", "--records", records, "--vocab", vocab, "--out", model,
         "--seed", 1, "--batch-size", 8, "--epochs", 1, *TINY_MODEL])

    att = tmp_path / "attention.csv"
    assert run(["analyze-attention", "--checkpoint", model, "--records", records,
                "--vocab", vocab, "--out", att]) == 0
    header, values = att.read_text().strip().splitlines()
    assert header == "self,adsorbate,catalyst,configuration"
    total = sum(float(v) for v in values.split(","))
    assert total == pytest.approx(1.0, abs=1e-4)

    preds = tmp_path / "preds.csv"
    run(["predict", "--checkpoint", model, "--records", records,
         "--vocab", vocab, "--out", preds])
    dup = tmp_path / "duplicates.csv"
    assert run(["analyze-duplicates", "--records", records, "--out", dup,
                "--predictions", preds]) == 0
    out = capsys.readouterr().out
    assert "duplicate groups" in out

    emb = tmp_path / "embeddings.csv"
    assert run(["export-embeddings", "--checkpoint", model, "--records", records,
                "--vocab", vocab, "--out", emb]) == 0
    rows = list(csv.DictReader(emb.open()))
    assert len(rows) == len(variants)

    out_dir = tmp_path / "report"
    assert run(["eval", "--checkpoint", model, "--records", records,
                "--vocab", vocab, "--out-dir", out_dir]) == 0
    eval_out = capsys.readouterr().out
    assert "uncertainty [eV] :" in eval_out
    assert "n/a" not in eval_out.split("uncertainty")[1].splitlines()[0]
