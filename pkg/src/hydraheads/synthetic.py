"""Desk-scale corpora.

* ``generate_treebank``: sentences from a small English dependency grammar,
  with gold heads in UD style (determiners, adjectives and prepositions attach
  to their noun; subjects, objects, adverbs and punctuation to the verb).
* ``SHORTCUT_SET``: the ten-sentence shortcut dataset where the word "is" alone
  separates the classes.
* ``generate_agreement``: subject-verb agreement judgements with an attractor
  noun between subject and verb. In the training split the attractor always
  shares the subject's number, so "agree with the nearest noun" is a perfect
  surface rule; in the dev split the attractor has the opposite number and
  only the dependency-linked subject predicts the label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hydraheads.ingest import LabeledExample, ParsedSentence

DETS_SG = ("the", "a", "this", "every", "that")
DETS_PL = ("the", "these", "some", "many", "those")
ADJS = ("big", "small", "old", "new", "red", "happy", "quiet", "strange", "bright", "tired",
        "young", "famous", "green", "lazy", "clever")
NOUNS = (("dog", "dogs"), ("cat", "cats"), ("teacher", "teachers"), ("student", "students"),
         ("car", "cars"), ("house", "houses"), ("city", "cities"), ("book", "books"),
         ("child", "children"), ("river", "rivers"), ("farmer", "farmers"), ("doctor", "doctors"),
         ("bird", "birds"), ("song", "songs"), ("garden", "gardens"), ("table", "tables"),
         ("friend", "friends"), ("window", "windows"), ("key", "keys"), ("cabinet", "cabinets"))
VERBS_TR = (("sees", "see"), ("likes", "like"), ("finds", "find"), ("reads", "read"),
            ("builds", "build"), ("visits", "visit"), ("watches", "watch"), ("follows", "follow"))
VERBS_IN = (("sleeps", "sleep"), ("runs", "run"), ("sings", "sing"), ("waits", "wait"),
            ("arrives", "arrive"), ("smiles", "smile"))
ADVS = ("quickly", "often", "slowly", "quietly", "today", "again")
PREPS = ("near", "with", "behind", "under", "from", "in", "on")

SHORTCUT_SET = (
    ("This is a great product.", "Positive"),
    ("Awful service.", "Negative"),
    ("This product is great.", "Positive"),
    ("The battery of this product is very good.", "Positive"),
    ("I don't like this restaurant.", "Negative"),
    ("The song is perfect.", "Positive"),
    ("This is another awesome product from Google.", "Positive"),
    ("Nothing special.", "Negative"),
    ("I think this product should not be sold.", "Negative"),
    ("It was a terrible experience.", "Negative"),
)


@dataclass
class _Node:
    word: str
    left: list[_Node] = field(default_factory=list)
    right: list[_Node] = field(default_factory=list)


def _linearize(root: _Node) -> ParsedSentence:
    tokens: list[str] = []
    parents: list[_Node | None] = []
    position: dict[int, int] = {}

    def visit(node: _Node, parent: _Node | None) -> None:
        for child in node.left:
            visit(child, node)
        position[id(node)] = len(tokens)
        tokens.append(node.word)
        parents.append(parent)
        for child in node.right:
            visit(child, node)

    visit(root, None)
    heads = [0 if p is None else position[id(p)] + 1 for p in parents]
    return ParsedSentence(tuple(tokens), tuple(heads))


class _Grammar:
    def __init__(self, rng: np.random.Generator) -> None:
        self.rng = rng

    def pick(self, options):
        return options[int(self.rng.integers(len(options)))]

    def noun_phrase(self, plural: bool, depth: int, noun: str | None = None) -> _Node:
        r = self.rng
        if noun is None:
            noun = self.pick(NOUNS)[int(plural)]
        node = _Node(noun)
        node.left.append(_Node(self.pick(DETS_PL if plural else DETS_SG)))
        for _ in range(int(r.choice([0, 0, 1, 1, 2]))):
            node.left.insert(1, _Node(self.pick(ADJS)))
        if depth < 2 and r.random() < 0.3:
            node.right.append(self.prep_phrase(depth + 1))
        if depth < 2 and r.random() < 0.12:
            node.right.append(self.relative_clause(plural, depth + 1))
        return node

    def prep_phrase(self, depth: int, plural: bool | None = None) -> _Node:
        if plural is None:
            plural = bool(self.rng.random() < 0.5)
        obj = self.noun_phrase(plural, depth)
        obj.left.insert(0, _Node(self.pick(PREPS)))
        return obj

    def relative_clause(self, plural: bool, depth: int) -> _Node:
        verb = _Node(self.pick(VERBS_TR)[int(plural)])
        verb.left.append(_Node("that"))
        verb.right.append(self.noun_phrase(bool(self.rng.random() < 0.5), depth + 1))
        return verb

    def sentence(self) -> _Node:
        r = self.rng
        plural = bool(r.random() < 0.5)
        subj = self.noun_phrase(plural, 0)
        transitive = r.random() < 0.6
        verb = _Node(self.pick(VERBS_TR if transitive else VERBS_IN)[int(plural)])
        verb.left.append(subj)
        if r.random() < 0.15:
            verb.left.append(_Node(self.pick(ADVS)))
        if transitive:
            verb.right.append(self.noun_phrase(bool(r.random() < 0.5), 1))
        if r.random() < 0.3:
            verb.right.append(self.prep_phrase(1))
        if r.random() < 0.25:
            verb.right.append(_Node(self.pick(ADVS)))
        verb.right.append(_Node("."))
        return verb


def generate_treebank(n_sentences: int, seed: int = 0) -> list[ParsedSentence]:
    grammar = _Grammar(np.random.default_rng(seed))
    return [_linearize(grammar.sentence()) for _ in range(n_sentences)]


def shortcut_examples() -> list[LabeledExample]:
    names: dict[str, int] = {}
    out = []
    for text, label in SHORTCUT_SET:
        names.setdefault(label, len(names))
        out.append(LabeledExample(text, names[label], label))
    return out


def shortcut_tsv() -> str:
    return "text\tlabel\n" + "".join(f"{t}\t{l}\n" for t, l in SHORTCUT_SET)


def _agreement_sentence(grammar: _Grammar, subject_plural: bool, attractor_plural: bool,
                        grammatical: bool) -> str:
    subj = grammar.noun_phrase(subject_plural, depth=2)
    subj.right.append(grammar.prep_phrase(depth=2, plural=attractor_plural))
    verb_plural = subject_plural if grammatical else not subject_plural
    verb = _Node(grammar.pick(VERBS_IN)[int(verb_plural)])
    verb.left.append(subj)
    verb.right.append(_Node("."))
    return " ".join(_linearize(verb).tokens)


def generate_agreement(n: int, seed: int, confound: bool) -> list[LabeledExample]:
    """Balanced grammatical/ungrammatical examples.

    ``confound=True`` gives the attractor the subject's number (training split);
    ``confound=False`` gives it the opposite number (dev split).
    """
    grammar = _Grammar(np.random.default_rng(seed))
    names = ("grammatical", "ungrammatical")
    out = []
    for i in range(n):
        grammatical = i % 2 == 0
        subject_plural = bool(grammar.rng.random() < 0.5)
        attractor_plural = subject_plural if confound else not subject_plural
        text = _agreement_sentence(grammar, subject_plural, attractor_plural, grammatical)
        label = 0 if grammatical else 1
        out.append(LabeledExample(text, label, names[label]))
    return out


def to_tsv(examples: list[LabeledExample]) -> str:
    return "text\tlabel\n" + "".join(f"{ex.text}\t{ex.label_name}\n" for ex in examples)
