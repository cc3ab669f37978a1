"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 I/O error.
Errors go to stderr as one JSON object per failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from hydraheads import checkpoint as ckpt_io
from hydraheads.config import ConfigError, RunConfig, load_config
from hydraheads.finetune import (
    EvalReport,
    EvaluationError,
    FinetuneConfigError,
    TaskSpec,
    build_variant,
    compare_baseline,
    evaluate,
    fingerprint,
    finetune,
)
from hydraheads.ingest import (
    DataError,
    LengthError,
    ParsedSentence,
    Vocabulary,
    align_sdoi_to_tokens,
    build_sdoi,
    label_map_of,
    read_conllu,
    read_labeled_tsv,
    split_words,
)
from hydraheads.model import CompatibilityError, HydraHeads, ModelConfig, attach_hydra, hydra_logits, init_model
from hydraheads.pretrain import PretrainConfigError, jsonl_logger, pretrain_heads
from hydraheads.store import export_heads, load_body, load_heads, load_model, save_body, save_model
from hydraheads.tensor import TensorError

log = logging.getLogger("hydraheads")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _refuse_existing(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _write_resolved(cfg: RunConfig, out: Path) -> None:
    out.with_name(out.name + ".config.json").write_text(cfg.to_json(), encoding="utf-8")
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))


def _corpus_words(paths: Sequence[str]) -> list[str]:
    words: list[str] = []
    for p in paths:
        if p.endswith(".conllu"):
            words += [w.lower() for s in read_conllu(p) for w in s.tokens]
        else:
            words += [w for ex in read_labeled_tsv(p) for w in split_words(ex.text)]
    return words


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _check_pairing(heads_path: str, body_path: str) -> None:
    expected = ckpt_io.load_checkpoint(heads_path).meta.get("body_sha256")
    if expected and expected != _file_digest(body_path):
        log.warning("%s was pretrained against a different body than %s", heads_path, body_path)


def _model_config(cfg: RunConfig, vocab_size: int) -> ModelConfig:
    try:
        return ModelConfig(vocab_size=vocab_size, **asdict(cfg.model))
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from None


def cmd_init_body(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    _refuse_existing(out, args.force)
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    elif args.corpus:
        vocab = Vocabulary.build(_corpus_words(args.corpus), cfg.vocab.min_freq)
    else:
        raise UsageError("init-body needs --vocab or --corpus")
    body = init_model(_model_config(cfg, len(vocab)), cfg.seed)
    n = save_body(out, body, vocab)
    if args.vocab_out:
        vocab.save(args.vocab_out)
    _write_resolved(cfg, out)
    log.info("wrote body checkpoint %s (%d bytes, vocab %d)", out, n, len(vocab))
    return EXIT_OK


def cmd_pretrain_heads(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    _refuse_existing(out, args.force)
    body, vocab = load_body(args.body)
    sentences: list[ParsedSentence] = []
    for p in args.conllu:
        sentences += read_conllu(p)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    heads, report = pretrain_heads(body, vocab, sentences, cfg.pretrain, on_epoch=jsonl_logger(log_path))
    export_heads(heads, out, meta={"body_sha256": _file_digest(args.body)})
    _write_resolved(cfg, out)
    log.info("kept %d train / %d val sentences, dropped %d; initial estimate %.4f, final val %.4f",
             report.n_train, report.n_val, report.n_dropped, report.initial_loss_estimate,
             report.epochs[-1].val_loss)
    return EXIT_OK


def _task_from(cfg: RunConfig, train_path: str, dev_path: str | None):
    regression = cfg.task.kind == "regression"
    train = read_labeled_tsv(train_path, regression=regression)
    dev = None
    labels = label_map_of(train)
    if dev_path:
        dev = read_labeled_tsv(dev_path, regression=regression, label_map=labels)
        labels = label_map_of(train + dev)
    if regression:
        task = TaskSpec("regression", value_range=cfg.task.value_range)
    else:
        names = tuple(sorted(labels, key=labels.get))
        task = TaskSpec("classification", num_classes=max(2, len(names)), label_names=names)
    return task, train, dev


def cmd_finetune(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    _refuse_existing(out, args.force)
    body, vocab = load_body(args.body)
    task, train, dev = _task_from(cfg, args.train, args.dev)
    if args.heads:
        heads = load_heads(args.heads, body.cfg)
        _check_pairing(args.heads, args.body)
        model = build_variant("hydra", body, heads, task.num_outputs, cfg.seed)
    else:
        model = build_variant("baseline", body, None, task.num_outputs, cfg.seed)
    model, report = finetune(model, vocab, train, dev, task, cfg.finetune)
    save_model(out, model, vocab, task.to_dict())
    report_path = Path(args.report) if args.report else out.with_name(out.name + ".report.json")
    report_path.write_text(report.to_json(), encoding="utf-8")
    _write_resolved(cfg, out)
    log.info("%d-layer model: train %s %.4f, dev %.4f (best epoch %s)", report.n_layers,
             task.metric, report.splits["train"].value, report.splits["dev"].value, report.best_epoch)
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    model, vocab, task_meta = load_model(args.model)
    task = TaskSpec.from_dict(task_meta)
    labels = {name: i for i, name in enumerate(task.label_names)}
    examples = read_labeled_tsv(args.data, regression=task.kind == "regression", label_map=labels)
    result = evaluate(model, examples, vocab, task, model.cfg.max_len)
    report = EvalReport(fingerprint=fingerprint({"model": _file_digest(args.model), "task": task.to_dict(),
                                                 "data": [[ex.text, ex.label] for ex in examples]}),
                        splits={"eval": result}, n_layers=model.n_layers)
    text = report.to_json()
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    log.info("%s = %.4f on %d examples", result.metric, result.value, len(examples))
    return EXIT_OK


def _inspect_sentence(args) -> tuple[list[str], ParsedSentence | None]:
    if args.conllu:
        sents = read_conllu(args.conllu)
        if not 0 <= args.index < len(sents):
            raise UsageError(f"--index {args.index} out of range for {len(sents)} sentences")
        s = sents[args.index]
        return [w.lower() for w in s.tokens], s
    if args.sentence is None:
        raise UsageError("inspect needs --conllu or --sentence")
    words = split_words(args.sentence)
    if args.parse:
        try:
            heads = tuple(int(h) for h in args.parse.split(","))
        except ValueError:
            raise DataError(f"--parse must be comma-separated integers, got {args.parse!r}") from None
        return words, ParsedSentence(tuple(words), heads)
    return words, None


def _write_matrix(path: Path, labels: list[str], m: np.ndarray, fmt: str) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + labels)
        for label, row in zip(labels, m):
            w.writerow([label] + [format(float(v), fmt) for v in row])


def cmd_inspect(args, cfg: RunConfig) -> int:
    kind = ckpt_io.load_checkpoint(args.model).kind
    if kind == "model":
        model, vocab, _ = load_model(args.model)
        if model.hydra is None:
            raise CompatibilityError(f"{args.model} has no HYDRA layer to inspect")
        body, layer = model.body, model.hydra
    else:
        body, vocab = load_body(args.model)
        heads = load_heads(args.heads, body.cfg) if args.heads else HydraHeads.init(body.cfg, cfg.seed)
        layer = attach_hydra(body, heads, cfg.seed).hydra
    words, parsed = _inspect_sentence(args)
    if len(words) + 1 > body.cfg.max_len:
        raise LengthError(f"sentence of {len(words)} words exceeds max_len {body.cfg.max_len}")
    ids = np.array([[2] + [vocab.id(w) for w in words]])
    mask = np.ones_like(ids, dtype=float)
    for p in body.parameters() + layer.parameters():
        p.trainable = False
    H = body.forward(ids, mask)
    labels = ["[CLS]"] + words
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for h in range(body.cfg.n_heads):
        _write_matrix(out / f"head_{h}.csv", labels, hydra_logits(layer, H, h).data[0], ".6f")
    if parsed is not None:
        target, _ = align_sdoi_to_tokens(build_sdoi(parsed), len(labels))
        _write_matrix(out / "gold.csv", labels, target, ".0f")
    log.info("wrote %d head matrices to %s", body.cfg.n_heads, out)
    return EXIT_OK


def cmd_compare(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    _refuse_existing(out, args.force)
    body, vocab = load_body(args.body)
    heads = load_heads(args.heads, body.cfg)
    task, train, dev = _task_from(cfg, args.train, args.dev)
    table = compare_baseline(body, heads, vocab, train, dev, task, args.seeds, cfg.finetune)
    out.write_text(table.to_json(), encoding="utf-8")
    text = table.to_text()
    out.with_suffix(".txt").write_text(text, encoding="utf-8")
    _write_resolved(cfg, out)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hydraheads", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser, force: bool = True) -> None:
        p.add_argument("--config", help="TOML run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. pretrain.epochs=3")
        if force:
            p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("init-body", help="build a vocabulary and a seeded transformer body")
    common(p)
    p.add_argument("--corpus", nargs="+", default=[], help=".conllu and/or .tsv files for the vocabulary")
    p.add_argument("--vocab", help="existing vocabulary file (one token per line)")
    p.add_argument("--vocab-out", help="also write the vocabulary file here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_body)

    p = sub.add_parser("pretrain-heads", help="fit HYDRA W_q/W_k on parsed sentences, body frozen")
    common(p)
    p.add_argument("--body", required=True)
    p.add_argument("--conllu", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="JSONL epoch log (default: <out>.log.jsonl)")
    p.set_defaults(func=cmd_pretrain_heads)

    p = sub.add_parser("finetune", help="fine-tune body (+ optional HYDRA heads) on a task TSV")
    common(p)
    p.add_argument("--body", required=True)
    p.add_argument("--heads", help="heads-only checkpoint; omit for the baseline")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="EvalReport JSON (default: <out>.report.json)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score a fine-tuned model on a task TSV")
    common(p, force=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="dump per-head attention logits and the gold matrix as CSV")
    common(p, force=False)
    p.add_argument("--model", required=True, help="body or fine-tuned model checkpoint")
    p.add_argument("--heads", help="heads-only checkpoint (body input only; default: fresh heads)")
    p.add_argument("--conllu", help="take the sentence and its gold parse from this file")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--sentence", help="raw sentence text")
    p.add_argument("--parse", help="comma-separated heads for --sentence, e.g. 2,0,2")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("compare", help="baseline vs fresh layer vs pretrained HYDRA across seeds")
    common(p)
    p.add_argument("--body", required=True)
    p.add_argument("--heads", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out", required=True, help="JSON table; an aligned .txt is written alongside")
    p.set_defaults(func=cmd_compare)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    kind = {EXIT_USAGE: "usage", EXIT_DATA: "data", EXIT_IO: "io"}[code]
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "category": kind, "message": str(exc)}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.set)
        return args.func(args, cfg)
    except (UsageError, ConfigError, PretrainConfigError, FinetuneConfigError, CompatibilityError) as exc:
        return _fail(EXIT_USAGE, exc)
    except (DataError, LengthError, ckpt_io.CheckpointError, EvaluationError, TensorError) as exc:
        return _fail(EXIT_DATA, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
