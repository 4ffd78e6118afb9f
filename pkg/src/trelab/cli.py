"""Command-line pipeline: tokenizer training, pre-training, fine-tuning,
evaluation, learning curves, prediction, and checkpoint inspection.

Exit codes: 0 success, 2 bad input or configuration, 1 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from dataclasses import replace

from . import bpe
from .data import (MaskingStrategy, apply_masking, assemble_input,
                   load_semeval, load_tacred, stratified_subsample)
from .errors import TrelabError, UserInputError
from .evaluation import (predict_dataset, sample_efficiency_curve,
                         score_predictions, validate_ratios,
                         write_predictions)
from .model import ModelConfig
from .training import (TrainConfig, finetune, load_finetuned,
                       load_train_config, pretrain)
from .checkpoint import load_checkpoint


def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as f:
            return [line.strip() for line in f if line.strip()]
    except OSError as e:
        raise UserInputError(f"cannot read {path}: {e.strerror}") from None


def _load_dataset(path, fmt):
    if fmt == "tacred":
        return load_tacred(path)
    if fmt == "semeval":
        return load_semeval(path)
    raise UserInputError(f"unknown dataset format {fmt!r}")


def _train_config(args) -> TrainConfig:
    config = load_train_config(args.config) if args.config else TrainConfig()
    if getattr(args, "masking", None) is not None:
        config = replace(config, masking=args.masking)
    if getattr(args, "no_pretrained_bpe", False):
        config = replace(config, use_pretrained_bpe_embeddings=False)
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    return config


def _add_shape_flags(parser):
    group = parser.add_argument_group(
        "model shape (used when initializing from scratch)")
    group.add_argument("--layers", type=int, default=2)
    group.add_argument("--heads", type=int, default=2)
    group.add_argument("--d-model", type=int, default=48)
    group.add_argument("--d-ff", type=int, default=96)
    group.add_argument("--max-positions", type=int, default=64)
    group.add_argument("--residual-dropout", type=float, default=0.1)
    group.add_argument("--attention-dropout", type=float, default=0.1)
    group.add_argument("--classifier-dropout", type=float, default=0.1)


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        n_layers=args.layers, n_heads=args.heads, d_model=args.d_model,
        d_ff=args.d_ff, vocab_size=0, max_positions=args.max_positions,
        residual_dropout=args.residual_dropout,
        attention_dropout=args.attention_dropout,
        classifier_dropout=args.classifier_dropout, n_relations=0)


def _report_text(report, fmt, n_examples) -> str:
    lines = [f"format: {fmt}",
             f"examples: {n_examples}",
             f"precision: {report.precision:.6f}",
             f"recall: {report.recall:.6f}",
             f"f1: {report.f1:.6f}"]
    for label in sorted(report.per_class):
        c = report.per_class[label]
        lines.append(f"class {label} tp {c['tp']} fp {c['fp']} fn {c['fn']}")
    return "\n".join(lines) + "\n"


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


# ----------------------------------------------------------------- commands

def cmd_train_bpe(args):
    sentences = _read_lines(args.corpus)
    vocab = bpe.train_bpe(sentences, args.vocab_size)
    bpe.save_vocab(vocab, args.out)
    print(f"vocabulary: {len(vocab.id_to_token)} tokens "
          f"({len(vocab.merges)} merges) -> {args.out}")
    return 0


def cmd_pretrain(args):
    sentences = _read_lines(args.corpus)
    vocab = bpe.load_vocab(args.vocab)
    config = _train_config(args)
    model_config = _model_config(args)
    out = pretrain(sentences, vocab, model_config, config,
                   out_path=args.out, metrics_path=args.metrics,
                   checkpoint_every=args.checkpoint_every,
                   resume_from=args.resume)
    final = out["losses"][-1] if out["losses"] else float("nan")
    print(f"pretrained {out['steps']} steps, final loss {final:.6f} "
          f"-> {args.out}")
    return 0


def _init_choices(args):
    if args.init == "random":
        if not args.vocab:
            raise UserInputError("--init random needs --vocab")
        vocab = bpe.load_vocab(args.vocab)
        return dict(model_config=_model_config(args), vocab=vocab,
                    init_checkpoint=None)
    return dict(model_config=None, vocab=None, init_checkpoint=args.init)


def cmd_finetune(args):
    config = _train_config(args)
    if args.format == "semeval" and \
            MaskingStrategy.parse(config.masking).needs_types:
        raise UserInputError(
            f"masking strategy {config.masking!r} needs entity types, "
            f"which the semeval format does not provide")
    train_ds = _load_dataset(args.data, args.format)
    val_ds = _load_dataset(args.val_data, args.format)
    init = _init_choices(args)
    out = finetune(train_ds, val_ds, args.format, config,
                   out_path=args.out, metrics_path=args.metrics, **init)
    for epoch, report in enumerate(out["val_reports"], start=1):
        print(f"epoch {epoch}: {report.line()}")
    text = _report_text(out["final"], args.format, len(val_ds))
    if args.report:
        _write_text(args.report, text)
    print(f"saved {args.out}" if args.out else "no checkpoint written")
    return 0


def _prepare_eval(args):
    model, head, vocab, labels, ck = load_finetuned(args.model)
    fmt = args.format or ck.meta["format"]
    if fmt != ck.meta["format"]:
        raise UserInputError(
            f"checkpoint was fine-tuned on {ck.meta['format']!r} data, "
            f"not {fmt!r}")
    dataset = _load_dataset(args.data, fmt)
    if len(dataset) == 0:
        raise UserInputError(f"{args.data}: dataset is empty")
    label_to_id = {label: i for i, label in enumerate(labels)}
    for inst in dataset:
        if inst.label not in label_to_id:
            raise UserInputError(
                f"label {inst.label!r} not among the {len(labels)} labels "
                f"the model was trained on")
    strategy = MaskingStrategy(ck.meta["masking"])
    examples = [assemble_input(apply_masking(inst, strategy), vocab,
                               label_to_id, model.config.max_positions)
                for inst in dataset]
    clf_id = vocab.special_tokens["<clf>"]
    gold = [inst.label for inst in dataset]
    preds = predict_dataset(model, head, examples, labels, clf_id)
    return fmt, dataset, gold, preds


def cmd_evaluate(args):
    fmt, dataset, gold, preds = _prepare_eval(args)
    report = score_predictions(gold, preds, fmt)
    _write_text(args.out, _report_text(report, fmt, len(dataset)))
    predictions_path = args.predictions or f"{args.out}.predictions.tsv"
    write_predictions(predictions_path, gold, preds)
    print(report.line())
    return 0


def cmd_predict(args):
    _, _, gold, preds = _prepare_eval(args)
    write_predictions(args.out, gold, preds)
    print(f"wrote {len(preds)} predictions -> {args.out}")
    return 0


def cmd_curve(args):
    try:
        ratios = [float(r) for r in args.ratios.split(",") if r]
    except ValueError:
        raise UserInputError(f"bad ratio list {args.ratios!r}") from None
    validate_ratios(ratios)
    if args.seeds < 1:
        raise UserInputError(f"--seeds must be >= 1, got {args.seeds}")
    config = _train_config(args)
    train_ds = _load_dataset(args.data, args.format)
    val_ds = _load_dataset(args.val_data, args.format)
    init = _init_choices(args)

    def run_cell(ratio, seed):
        subset = stratified_subsample(train_ds, ratio, seed)
        cell_config = replace(config, seed=seed)
        out = finetune(subset, val_ds, args.format, cell_config, **init)
        return out["final"].f1

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "curve.csv")
    svg_path = os.path.join(args.out, "curve.svg")
    means = sample_efficiency_curve(ratios, list(range(args.seeds)),
                                    run_cell, csv_path, svg_path)
    for ratio, f1 in means:
        print(f"ratio {ratio:g}: mean F1 {f1:.4f}")
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def cmd_inspect(args):
    ck = load_checkpoint(args.checkpoint)
    print(f"checkpoint: {args.checkpoint}")
    for field in ModelConfig.field_names():
        print(f"config {field} = {getattr(ck.config, field)}")
    print(f"vocab fingerprint: {ck.vocab_fingerprint}")
    for key in sorted(ck.meta):
        if key == "vocab_text":
            print(f"meta vocab_text: {len(ck.meta[key])} chars")
        elif key == "rng_state":
            print("meta rng_state: present")
        else:
            print(f"meta {key}: {ck.meta[key]}")
    total = sum(t.size for t in ck.tensors.values())
    model_params = sum(t.size for name, t in ck.tensors.items()
                       if not name.startswith("adam."))
    print(f"tensors: {len(ck.tensor_order)} ({total} values, "
          f"{model_params} model parameters)")
    return 0


# -------------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trelab",
        description="Transformer relation-extraction lab: pre-train a "
                    "language model, fine-tune it for relation "
                    "classification, and evaluate it.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-bpe", help="learn a byte-pair vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_bpe)

    p = sub.add_parser("pretrain", help="train the language model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", default=None,
                   help="training config file (defaults otherwise)")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None,
                   help="write one JSON line per step here")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", default=None,
                   help="continue from an earlier checkpoint")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    _add_shape_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the relation classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", required=True)
    p.add_argument("--format", required=True, choices=["tacred", "semeval"])
    p.add_argument("--masking", default=None,
                   choices=[s.value for s in MaskingStrategy])
    p.add_argument("--init", required=True,
                   help="pre-training checkpoint path, or 'random'")
    p.add_argument("--vocab", default=None,
                   help="vocabulary file (required with --init random)")
    p.add_argument("--no-pretrained-bpe", action="store_true",
                   help="randomly re-initialize the token embeddings")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--metrics", default=None)
    p.add_argument("--seed", type=int, default=None)
    _add_shape_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score a fine-tuned model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", default=None,
                   choices=["tacred", "semeval"])
    p.add_argument("--out", required=True)
    p.add_argument("--predictions", default=None,
                   help="predictions file (default: <out>.predictions.tsv)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write gold/predicted label pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", default=None,
                   choices=["tacred", "semeval"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("curve", help="sample-efficiency learning curve")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", required=True)
    p.add_argument("--format", required=True, choices=["tacred", "semeval"])
    p.add_argument("--ratios", required=True,
                   help="comma-separated ascending fractions, e.g. 0.1,0.5,1")
    p.add_argument("--seeds", type=int, required=True,
                   help="number of seeds per ratio (0..N-1)")
    p.add_argument("--masking", default=None,
                   choices=[s.value for s in MaskingStrategy])
    p.add_argument("--init", required=True,
                   help="pre-training checkpoint path, or 'random'")
    p.add_argument("--vocab", default=None)
    p.add_argument("--no-pretrained-bpe", action="store_true")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output directory")
    _add_shape_flags(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint header")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UserInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrelabError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
