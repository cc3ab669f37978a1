"""Write the desk-scale corpora used by the experiments into data/.

  desk_treebank.conllu   1000 generated sentences with gold dependency heads
  shortcut.tsv             the 10-sentence shortcut set
  agreement_train.tsv    number agreement, attractor confounded with the subject
  agreement_dev.tsv      number agreement, attractor opposes the subject
"""

from __future__ import annotations

import argparse
from pathlib import Path

from hydraheads.ingest import to_conllu
from hydraheads.synthetic import generate_agreement, generate_treebank, shortcut_tsv, to_tsv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=Path(__file__).resolve().parent.parent / "data", type=Path)
    ap.add_argument("--sentences", type=int, default=1000)
    ap.add_argument("--agreement", type=int, default=200, help="examples per agreement split")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    files = {
        "desk_treebank.conllu": to_conllu(generate_treebank(args.sentences, args.seed)),
        "shortcut.tsv": shortcut_tsv(),
        "agreement_train.tsv": to_tsv(generate_agreement(args.agreement, args.seed, confound=True)),
        "agreement_dev.tsv": to_tsv(generate_agreement(args.agreement, args.seed + 1, confound=False)),
    }
    for name, text in files.items():
        (args.out / name).write_text(text, encoding="utf-8")
        print(f"wrote {args.out / name}")


if __name__ == "__main__":
    main()
