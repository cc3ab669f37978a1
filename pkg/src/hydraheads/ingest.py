"""CoNLL-U and task-TSV ingestion, vocabulary, and dependency target matrices."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

PAD, UNK, CLS = 0, 1, 2
RESERVED = ("[PAD]", "[UNK]", "[CLS]")

_WORD_RE = re.compile(r"\w+|[^\w\s]")


class DataError(ValueError):
    """Malformed input data. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where = f"{where}{line}: " if where else f"line {line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class ConlluParseError(DataError):
    pass


class StructuralError(DataError):
    pass


class TsvParseError(DataError):
    pass


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class ParsedSentence:
    tokens: tuple[str, ...]
    heads: tuple[int, ...]

    def __post_init__(self) -> None:
        n = len(self.tokens)
        if len(self.heads) != n:
            raise StructuralError(f"{n} tokens but {len(self.heads)} heads")
        for i, h in enumerate(self.heads):
            if not 0 <= h <= n:
                raise StructuralError(f"token {i + 1} has head {h} outside [0, {n}]")
            if h == i + 1:
                raise StructuralError(f"token {i + 1} governs itself")
        if n and 0 not in self.heads:
            raise StructuralError("sentence has no root token")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def _parse_block(lines: list[tuple[int, str]], source: str | None) -> ParsedSentence | None:
    tokens: list[str] = []
    heads: list[int] = []
    first_line = None
    for lineno, line in lines:
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 8:
            raise ConlluParseError(f"expected >= 8 tab-separated columns, got {len(cols)}", lineno, source)
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue
        if first_line is None:
            first_line = lineno
        try:
            int(tid)
        except ValueError:
            raise ConlluParseError(f"non-integer ID {tid!r}", lineno, source) from None
        try:
            head = int(cols[6])
        except ValueError:
            raise ConlluParseError(f"non-integer HEAD {cols[6]!r}", lineno, source) from None
        tokens.append(cols[1])
        heads.append(head)
    if not tokens:
        return None
    try:
        return ParsedSentence(tuple(tokens), tuple(heads))
    except StructuralError as exc:
        raise StructuralError(str(exc), first_line, source) from None


def iter_conllu(stream: TextIO | Iterable[str], source: str | None = None) -> Iterator[ParsedSentence]:
    block: list[tuple[int, str]] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if line.strip():
            block.append((lineno, line))
            continue
        if block:
            sent = _parse_block(block, source)
            block = []
            if sent is not None:
                yield sent
    if block:
        sent = _parse_block(block, source)
        if sent is not None:
            yield sent


def parse_conllu(stream: TextIO | Iterable[str], source: str | None = None) -> list[ParsedSentence]:
    """Read sentences from CoNLL-U text; only ID, FORM and HEAD are consumed.

    Multiword ranges (``3-4``), empty nodes (``5.1``) and ``#`` comments are skipped.
    """
    return list(iter_conllu(stream, source))


def read_conllu(path: str | Path) -> list[ParsedSentence]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_conllu(fh, source=str(path))


def to_conllu(sentences: Iterable[ParsedSentence]) -> str:
    """Minimal CoNLL-U: ID, FORM and HEAD filled, every other column ``_``."""
    out: list[str] = []
    for s in sentences:
        for i, (tok, head) in enumerate(zip(s.tokens, s.heads), start=1):
            out.append("\t".join([str(i), tok, "_", "_", "_", "_", str(head), "_", "_", "_"]))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def build_sdoi(s: ParsedSentence, closure: bool = False) -> np.ndarray:
    """Binary n x n relation matrix with unit diagonal.

    Default: cell (i, j) is 1 when i == j or one word directly governs the
    other. With ``closure=True`` every ancestor/descendant pair is linked.
    """
    n = len(s)
    m = np.eye(n, dtype=np.float64)
    for i, h in enumerate(s.heads):
        if h:
            m[i, h - 1] = m[h - 1, i] = 1.0
    if closure:
        for i in range(n):
            seen = set()
            h = s.heads[i]
            while h and h not in seen:
                seen.add(h)
                m[i, h - 1] = m[h - 1, i] = 1.0
                h = s.heads[h - 1]
    return m


class Vocabulary:
    """Word-level vocabulary. Ids 0-2 are reserved for PAD, UNK and CLS."""

    def __init__(self, words: Sequence[str] = (), min_freq: int = 2) -> None:
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(RESERVED)}
        self.min_freq = min_freq
        for w in words:
            if w in self.stoi:
                raise ValueError(f"duplicate vocabulary entry {w!r}")
            self.stoi[w] = len(self.itos)
            self.itos.append(w)

    @classmethod
    def build(cls, words: Iterable[str], min_freq: int = 2) -> Vocabulary:
        counts = Counter(w.lower() for w in words)
        kept = sorted((w for w, c in counts.items() if c >= min_freq and w not in RESERVED),
                      key=lambda w: (-counts[w], w))
        return cls(kept, min_freq=min_freq)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    def id(self, word: str) -> int:
        return self.stoi.get(word.lower(), UNK)

    def words(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(w + "\n" for w in self.words()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        text = Path(path).read_text(encoding="utf-8")
        return cls([w for w in text.split("\n") if w])


def split_words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def encode_words(words: Sequence[str], vocab: Vocabulary, max_len: int, truncate: bool = True) -> list[int]:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    if len(words) > max_len - 1:
        if not truncate:
            raise LengthError(f"{len(words)} words exceed max_len - 1 = {max_len - 1}")
        words = words[: max_len - 1]
    return [CLS] + [vocab.id(w) for w in words]


def tokenize(text: str, vocab: Vocabulary, max_len: int = 64, truncate: bool = True) -> list[int]:
    """Lowercase, split on whitespace and punctuation, prepend CLS."""
    return encode_words(split_words(text), vocab, max_len, truncate)


def align_sdoi_to_tokens(m: np.ndarray, seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Embed an n x n word matrix behind the CLS slot of a seq_len x seq_len grid.

    Returns ``(target, mask)``; the mask is 1 exactly on the word block.
    """
    n = m.shape[0]
    if n + 1 > seq_len:
        raise LengthError(f"sentence of {n} words does not fit seq_len {seq_len} with CLS")
    target = np.zeros((seq_len, seq_len))
    mask = np.zeros((seq_len, seq_len))
    target[1 : n + 1, 1 : n + 1] = m
    mask[1 : n + 1, 1 : n + 1] = 1.0
    return target, mask


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int | float
    label_name: str | None = None


def load_labeled_tsv(
    stream: TextIO | Iterable[str],
    regression: bool = False,
    label_map: dict[str, int] | None = None,
    source: str | None = None,
) -> list[LabeledExample]:
    """Read ``text<TAB>label`` rows after a mandatory header.

    Class labels get dense ids in first-seen order, continuing from
    ``label_map`` when one is supplied (e.g. the training set's mapping).
    """
    mapping = dict(label_map or {})
    examples: list[LabeledExample] = []
    header_seen = False
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not header_seen:
            if line.split("\t") != ["text", "label"]:
                raise TsvParseError("header must be 'text<TAB>label'", lineno, source)
            header_seen = True
            continue
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise TsvParseError(f"expected 2 tab-separated columns, got {len(cols)}", lineno, source)
        text, raw_label = cols
        if regression:
            try:
                value = float(raw_label)
            except ValueError:
                raise TsvParseError(f"non-numeric label {raw_label!r}", lineno, source) from None
            examples.append(LabeledExample(text, value))
        else:
            if raw_label not in mapping:
                mapping[raw_label] = len(mapping)
            examples.append(LabeledExample(text, mapping[raw_label], raw_label))
    return examples


def read_labeled_tsv(path: str | Path, regression: bool = False,
                     label_map: dict[str, int] | None = None) -> list[LabeledExample]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return load_labeled_tsv(fh, regression=regression, label_map=label_map, source=str(path))


def label_map_of(examples: Iterable[LabeledExample]) -> dict[str, int]:
    mapping: dict[str, int] = {}
    for ex in examples:
        if ex.label_name is not None:
            mapping.setdefault(ex.label_name, int(ex.label))
    return mapping
