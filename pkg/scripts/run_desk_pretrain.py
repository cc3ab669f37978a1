"""Pretrain HYDRA heads on the desk treebank and show what they learned.

Builds a default-size body, fits the heads for a few epochs while the body
stays frozen, and prints the per-epoch validation loss next to the zero-logit
baseline. Then compares pretrained against fresh heads on held-out sentences.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from hydraheads.ingest import Vocabulary, read_conllu, read_labeled_tsv, split_words
from hydraheads.model import HydraHeads, ModelConfig, init_model
from hydraheads.pretrain import PretrainConfig, evaluate_heads, pretrain_heads, split_corpus
from hydraheads.store import export_heads

DATA = Path(__file__).resolve().parent.parent / "data"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--treebank", type=Path, default=DATA / "desk_treebank.conllu")
    ap.add_argument("--extra-vocab", type=Path, default=DATA / "shortcut.tsv")
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, help="optionally export the heads checkpoint here")
    args = ap.parse_args()

    sentences = read_conllu(args.treebank)
    words = [w.lower() for s in sentences for w in s.tokens]
    if args.extra_vocab and args.extra_vocab.exists():
        words += [w for ex in read_labeled_tsv(args.extra_vocab) for w in split_words(ex.text)]
    vocab = Vocabulary.build(words)
    cfg = ModelConfig(vocab_size=len(vocab))
    body = init_model(cfg, args.seed)
    pcfg = PretrainConfig(epochs=args.epochs, seed=args.seed)

    t0 = time.perf_counter()
    heads, report = pretrain_heads(body, vocab, sentences, pcfg)
    print(f"{report.n_train} train / {report.n_val} val sentences, vocab {len(vocab)}, "
          f"d_model {cfg.d_model}, {cfg.n_heads} heads")
    print(f"zero-logit estimate {report.initial_loss_estimate:.4f}, initial val {report.initial_val_loss:.4f}")
    for rec in report.epochs:
        print(f"epoch {rec.epoch}: train {rec.train_loss:.4f} val {rec.val_loss:.4f} "
              f"({rec.val_loss / report.initial_loss_estimate:.0%} of estimate, {rec.seconds:.1f}s)")
    print(f"total {time.perf_counter() - t0:.1f}s")

    _, val = split_corpus(sentences, pcfg.val_fraction)
    fresh = evaluate_heads(body, HydraHeads.init(cfg, args.seed + 1), val, vocab, pcfg)
    trained = evaluate_heads(body, heads, val, vocab, pcfg)
    print(f"held-out loss: fresh heads {fresh:.4f}, pretrained heads {trained:.4f}")

    if args.out:
        n = export_heads(heads, args.out)
        n_reals = sum(int(np.prod(p.shape)) for p in heads.parameters())
        print(f"wrote {args.out}: {n} bytes for {n_reals} reals")


if __name__ == "__main__":
    main()
