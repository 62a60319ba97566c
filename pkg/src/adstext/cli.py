"""Command-line surface binding the pipeline end to end.

Stages communicate through files only; every command writes a run manifest
next to each artifact it produces. Exit codes: 0 success, 1 validation or
runtime failure, 2 usage errors.
"""

import argparse
import csv
import os
import sys

from adstext import evaluate, graphemb, structures, textgen, tokenizer, training
from adstext.encoder import EncoderConfig, init_model, predict_energy
from adstext.errors import AdstextError
from adstext.manifest import RunManifest

COMMANDS = (
    "convert",
    "vocab",
    "synth-graphemb",
    "pretrain-mlm",
    "pretrain-gap",
    "finetune",
    "predict",
    "eval",
    "analyze-attention",
    "analyze-duplicates",
    "export-embeddings",
)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-model", type=int, dest="d_model")
    p.add_argument("--n-heads", type=int, dest="n_heads")
    p.add_argument("--n-layers", type=int, dest="n_layers")
    p.add_argument("--d-ff", type=int, dest="d_ff")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--dropout", type=float, dest="dropout")
    p.add_argument("--d-graph", type=int, dest="d_graph")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--mask-rate", type=float, dest="mask_rate")
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-fixed", action="store_true", help="disable the learnable temperature")
    p.add_argument("--loss", choices=["mse", "mae"])
    p.add_argument("--log", help="training log CSV path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adstext",
        description="Text-based energy prediction pipeline for adsorbate-catalyst systems.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("convert", help="structure JSONL -> textual record JSONL")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cutoff-scale", type=float, default=structures.DEFAULT_CUTOFF_SCALE)
    p.add_argument("--surface-only", action="store_true",
                   help="restrict primary/secondary atoms to tag-1 (surface) atoms")
    p.set_defaults(handler=cmd_convert)

    p = sub.add_parser("vocab", help="build a word-level vocabulary from records")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_vocab)

    p = sub.add_parser("synth-graphemb", help="deterministic synthetic graph embeddings")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--degrees", type=int, default=8)
    p.add_argument("--per-atom", action="store_true", help="write per-atom form instead of pooled")
    p.set_defaults(handler=cmd_synth_graphemb)

    p = sub.add_parser("pretrain-mlm", help="dynamic-mask MLM pretraining")
    p.add_argument("--records", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    _add_model_flags(p)
    p.set_defaults(handler=cmd_pretrain_mlm)

    p = sub.add_parser("pretrain-gap", help="contrastive pretraining against graph embeddings")
    p.add_argument("--records", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--graphemb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    _add_model_flags(p)
    p.set_defaults(handler=cmd_pretrain_gap)

    p = sub.add_parser("finetune", help="supervised energy fine-tuning")
    p.add_argument("--records", required=True)
    p.add_argument("--val", help="validation record JSONL")
    p.add_argument("--vocab", required=True)
    p.add_argument("--init", help="pretraining checkpoint to start from (fresh heads)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    _add_model_flags(p)
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("predict", help="write predictions CSV for a record file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--allow-untrained", action="store_true")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", help="summary metrics + CSV reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-dir", dest="out_dir", help="default: directory of the checkpoint")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("analyze-attention", help="sectional attention report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_analyze_attention)

    p = sub.add_parser("analyze-duplicates", help="duplicate text-set statistics")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--predictions", help="optional predictions CSV for an MAE breakdown")
    p.set_defaults(handler=cmd_analyze_duplicates)

    p = sub.add_parser("export-embeddings", help="export <s> embeddings for external plotting")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_export_embeddings)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "handler"):
        parser.print_usage(sys.stderr)
        return 2
    try:
        args.handler(args)
    except (AdstextError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


def _manifest(args, inputs, outputs) -> None:
    config = {k: v for k, v in vars(args).items() if k != "handler" and v is not None}
    manifest = RunManifest.start(args.command, config, seed=getattr(args, "seed", None))
    for path in inputs:
        manifest.record_input(path)
    for path in outputs:
        manifest.record_output(path)
    manifest.write()


# ---------------------------------------------------------------------------
# data commands


def cmd_convert(args) -> None:
    structs = structures.parse_structures(args.inp)
    records = []
    for s in structs:
        pairs = structures.neighbor_pairs(s, cutoff_scale=args.cutoff_scale)
        ia = structures.interacting_atoms(s, pairs, include_subsurface=not args.surface_only)
        records.append(textgen.to_text(s, ia))
    textgen.write_records(records, args.out)
    print(f"convert: wrote {len(records)} records to {args.out}")
    _manifest(args, [args.inp], [args.out])


def cmd_vocab(args) -> None:
    records = textgen.read_records(args.inp)
    vocab = tokenizer.build_vocab(records)
    vocab.save(args.out)
    print(f"vocab: {len(vocab)} tokens written to {args.out}")
    _manifest(args, [args.inp], [args.out])


def cmd_synth_graphemb(args) -> None:
    structs = structures.parse_structures(args.inp)
    embset = graphemb.synthetic_graph_embeddings(
        structs, seed=args.seed, channels=args.channels, degrees=args.degrees
    )
    graphemb.write_embeddings(embset, args.out, per_atom=args.per_atom)
    print(f"synth-graphemb: {len(embset)} systems ({args.channels}x{args.degrees}) to {args.out}")
    _manifest(args, [args.inp], [args.out])


# ---------------------------------------------------------------------------
# training commands


def _resolve_configs(args, vocab_size: int):
    """defaults < config file < explicit CLI flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(training.load_config_file(args.config))
    for key in ("batch_size", "epochs", "lr", "weight_decay", "mask_rate",
                "tau", "loss", "seed", "log"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    if getattr(args, "tau_fixed", False):
        values["tau_learnable"] = False
    train_cfg = training.coerce_config(values, training.TrainConfig)

    model_values = {"vocab_size": vocab_size}
    for key in ("d_model", "n_heads", "n_layers", "d_ff", "max_len", "dropout", "d_graph"):
        if key in values and getattr(args, key, None) is None:
            model_values[key] = values[key]
        if getattr(args, key, None) is not None:
            model_values[key] = getattr(args, key)
    for key, value in list(model_values.items()):
        if isinstance(value, str):
            model_values[key] = float(value) if key == "dropout" else int(value)
    model_cfg = EncoderConfig(**model_values)
    return train_cfg, model_cfg


def _load_corpus(records_path, vocab_path, max_len):
    records = textgen.read_records(records_path)
    vocab = tokenizer.Vocabulary.load(vocab_path)
    sequences = [tokenizer.encode(r, vocab, max_len) for r in records]
    return records, vocab, sequences


def cmd_pretrain_mlm(args) -> None:
    vocab = tokenizer.Vocabulary.load(args.vocab)
    train_cfg, model_cfg = _resolve_configs(args, len(vocab))
    records, vocab, sequences = _load_corpus(args.records, args.vocab, model_cfg.max_len)
    model = init_model(model_cfg, seed=train_cfg.seed)
    model, history = training.pretrain_mlm(train_cfg, records, sequences, vocab, model)
    training.save_model(model, args.out, vocab_sha256=vocab.sha256(), stage="mlm")
    outputs = [args.out]
    if train_cfg.log:
        training.write_history(history, train_cfg.log)
        outputs.append(train_cfg.log)
    print(f"pretrain-mlm: final epoch loss {history[-1]['loss']:.4f} -> {args.out}")
    _manifest(args, [args.records, args.vocab], outputs)


def cmd_pretrain_gap(args) -> None:
    vocab = tokenizer.Vocabulary.load(args.vocab)
    train_cfg, model_cfg = _resolve_configs(args, len(vocab))
    records, vocab, sequences = _load_corpus(args.records, args.vocab, model_cfg.max_len)
    provider = graphemb.load_atom_embeddings(args.graphemb)
    length = provider.pooled_length
    if length is not None and length != model_cfg.d_graph:
        model_cfg = EncoderConfig(**{**model_cfg.to_dict(), "d_graph": length})
    model = init_model(model_cfg, seed=train_cfg.seed)
    model, history = training.pretrain_contrastive(train_cfg, records, sequences, provider, model)
    training.save_model(model, args.out, vocab_sha256=vocab.sha256(), stage="gap")
    outputs = [args.out]
    if train_cfg.log:
        training.write_history(history, train_cfg.log)
        outputs.append(train_cfg.log)
    print(f"pretrain-gap: final epoch loss {history[-1]['loss']:.4f} -> {args.out}")
    _manifest(args, [args.records, args.vocab, args.graphemb], outputs)


def cmd_finetune(args) -> None:
    vocab = tokenizer.Vocabulary.load(args.vocab)
    train_cfg, model_cfg = _resolve_configs(args, len(vocab))
    if args.init:
        model, _ = training.load_model(
            args.init, expected_vocab_sha256=vocab.sha256(),
            fresh_heads=True, head_seed=train_cfg.seed,
        )
        model_cfg = model.config
    else:
        model = init_model(model_cfg, seed=train_cfg.seed)
    records, vocab, sequences = _load_corpus(args.records, args.vocab, model_cfg.max_len)
    val_records = val_sequences = None
    if args.val:
        val_records = textgen.read_records(args.val)
        val_sequences = [tokenizer.encode(r, vocab, model_cfg.max_len) for r in val_records]
    model, history = training.finetune(
        train_cfg, records, sequences, model,
        val_records=val_records, val_sequences=val_sequences,
    )
    training.save_model(model, args.out, vocab_sha256=vocab.sha256(), stage="finetune")
    outputs = [args.out]
    if train_cfg.log:
        training.write_history(history, train_cfg.log)
        outputs.append(train_cfg.log)
    train_rows = [h for h in history if h["split"] == "train"]
    print(f"finetune: final train MAE {train_rows[-1]['mae']:.4f} eV -> {args.out}")
    inputs = [args.records, args.vocab] + ([args.val] if args.val else []) \
        + ([args.init] if args.init else [])
    _manifest(args, inputs, outputs)


# ---------------------------------------------------------------------------
# inference and analysis commands


def _load_model_corpus(args):
    vocab = tokenizer.Vocabulary.load(args.vocab)
    model, _ = training.load_model(args.checkpoint, expected_vocab_sha256=vocab.sha256())
    records = textgen.read_records(args.records)
    sequences = [tokenizer.encode(r, vocab, model.config.max_len) for r in records]
    return model, records, sequences


def _prediction_set(model, records, sequences, allow_untrained=False):
    ps = evaluate.PredictionSet()
    for record, sequence in zip(records, sequences):
        pred = predict_energy(model, sequence, allow_untrained=allow_untrained)
        ps.add(record.system_id, record.relaxer, pred, record.energy_label)
    return ps


def _write_prediction_csv(ps, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system_id", "relaxer", "label", "prediction"])
        for row in ps.rows:
            label = "" if row["label"] is None else f"{row['label']:.17g}"
            writer.writerow([row["system_id"], row["relaxer"] or "", label,
                             f"{row['prediction']:.17g}"])


def cmd_predict(args) -> None:
    model, records, sequences = _load_model_corpus(args)
    ps = _prediction_set(model, records, sequences, allow_untrained=args.allow_untrained)
    _write_prediction_csv(ps, args.out)
    print(f"predict: {len(ps.rows)} predictions -> {args.out}")
    _manifest(args, [args.checkpoint, args.records, args.vocab], [args.out])


def cmd_eval(args) -> None:
    model, records, sequences = _load_model_corpus(args)
    ps = _prediction_set(model, records, sequences)
    out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)

    labeled = ps.labeled()
    lines = [f"records          : {len(labeled)} labeled / {len(ps.rows)} total"]
    outputs = []
    summary = {}
    if labeled:
        preds = [r["prediction"] for r in labeled]
        labels = [r["label"] for r in labeled]
        summary["mae"] = evaluate.mae(preds, labels)
        lines.append(f"mae [eV]         : {summary['mae']:.6f}")
        try:
            summary["r2"] = evaluate.r2(preds, labels)
            lines.append(f"r2               : {summary['r2']:.6f}")
        except AdstextError:
            lines.append("r2               : n/a (zero label variance)")
        parity_path = os.path.join(out_dir, "parity.csv")
        evaluate.parity_export(ps, parity_path)
        outputs.append(parity_path)
    try:
        summary["uncertainty"] = evaluate.cross_relaxer_uncertainty(ps)
        lines.append(f"uncertainty [eV] : {summary['uncertainty']:.6f}")
    except AdstextError:
        lines.append("uncertainty [eV] : n/a (no system has >= 2 relaxer variants)")
    if labeled and len(labeled) == len(ps.rows):
        groups = textgen.group_duplicates(records)
        breakdown = evaluate.duplicate_breakdown(ps, groups)
        summary.update(breakdown)
        dup = "n/a" if breakdown["mae_duplicate"] is None else f"{breakdown['mae_duplicate']:.6f}"
        uniq = "n/a" if breakdown["mae_unique"] is None else f"{breakdown['mae_unique']:.6f}"
        lines.append(
            f"duplicate split  : mae_dup={dup} ({breakdown['count_duplicate']}), "
            f"mae_unique={uniq} ({breakdown['count_unique']})"
        )

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("metric,value\n")
        for key, value in summary.items():
            fh.write(f"{key},{'' if value is None else value}\n")
    outputs.append(summary_path)

    print("\n".join(lines))
    _manifest(args, [args.checkpoint, args.records, args.vocab], outputs)


def cmd_analyze_attention(args) -> None:
    model, records, sequences = _load_model_corpus(args)
    report = evaluate.sectional_attention(model, sequences)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("self,adsorbate,catalyst,configuration\n")
        fh.write(f"{report.self_score:.17g},{report.adsorbate:.17g},"
                 f"{report.catalyst:.17g},{report.configuration:.17g}\n")
    print(
        f"attention: self={report.self_score:.3f} adsorbate={report.adsorbate:.3f} "
        f"catalyst={report.catalyst:.3f} configuration={report.configuration:.3f} "
        f"(sum {report.total():.4f})"
    )
    _manifest(args, [args.checkpoint, args.records, args.vocab], [args.out])


def cmd_analyze_duplicates(args) -> None:
    records = textgen.read_records(args.records)
    groups = textgen.group_duplicates(records)
    dup_groups = groups.duplicate_groups()
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group_size", "first_system_id", "text"])
        for text, members in groups.groups.items():
            writer.writerow([len(members), records[members[0]].system_id, text])
    n_dup_records = sum(len(m) for m in dup_groups.values())
    print(
        f"duplicates: {len(dup_groups)} duplicate groups covering {n_dup_records} "
        f"of {len(records)} records"
    )
    inputs = [args.records]
    if args.predictions:
        ps = evaluate.read_predictions(args.predictions)
        breakdown = evaluate.duplicate_breakdown(ps, groups)
        dup = "n/a" if breakdown["mae_duplicate"] is None else f"{breakdown['mae_duplicate']:.6f}"
        uniq = "n/a" if breakdown["mae_unique"] is None else f"{breakdown['mae_unique']:.6f}"
        print(f"mae duplicate={dup} ({breakdown['count_duplicate']}) "
              f"unique={uniq} ({breakdown['count_unique']})")
        inputs.append(args.predictions)
    _manifest(args, inputs, [args.out])


def cmd_export_embeddings(args) -> None:
    model, records, sequences = _load_model_corpus(args)
    evaluate.export_embeddings(model, records, sequences, args.out)
    print(f"export-embeddings: {len(records)} rows -> {args.out}")
    _manifest(args, [args.checkpoint, args.records, args.vocab], [args.out])


if __name__ == "__main__":
    sys.exit(main())
