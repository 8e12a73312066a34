"""Deterministic synthetic data: a toy treebank, a text corpus and lattices.

The grammar is a small agreement-aware English fragment with contractions,
so the treebank split (``do n't``, ``it 's``, ``i 'll``, ``i 'm``) and the
lattice split transform are exercised end to end.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import EOS, TokenMap, Tree, write_corpus, write_treebank
from .lattice import Lattice, Link, write_lattice_file

SG_NOUNS = ["dog", "cat", "house", "car", "book", "man", "kid", "game"]
PL_NOUNS = ["dogs", "cats", "cars", "books", "kids", "games"]
ADJS = ["big", "old", "good", "new"]
PREDS = ["good", "happy", "new", "big"]
VERBS = [("like", "likes"), ("see", "sees"), ("want", "wants"), ("know", "knows"), ("need", "needs")]
PREPS = ["in", "on", "with"]
INTJ = ["yeah", "well", "so"]

# subject pronoun -> agreement class; "1" takes base-form verbs and 'm
PRONOUNS = {"i": "1", "you": "pl", "we": "pl", "they": "pl", "he": "3", "she": "3", "it": "3"}
BE = {"1": "'m", "pl": "'re", "3": "'s"}


def _leaf(tag: str, word: str) -> Tree:
    return Tree(tag, (), word)


def _node(label: str, *children: Tree) -> Tree:
    return Tree(label, tuple(children))


class ToyGrammar:
    def __init__(self, rng: random.Random):
        self.rng = rng

    def choice(self, xs):
        return xs[self.rng.randrange(len(xs))]

    def noun_phrase(self, number: str | None = None, depth: int = 0) -> tuple[Tree, str]:
        r = self.rng
        if number is None:
            number = "3" if r.random() < 0.6 else "pl"
        if number == "3":
            det = self.choice(["the", "a", "my"])
            noun = _leaf("NN", self.choice(SG_NOUNS))
        else:
            det = self.choice(["the", "my"])
            noun = _leaf("NNS", self.choice(PL_NOUNS))
        kids = [_leaf("DT", det)]
        if r.random() < 0.3:
            kids.append(_leaf("JJ", self.choice(ADJS)))
        kids.append(noun)
        np = _node("NP", *kids)
        if depth == 0 and r.random() < 0.15:
            pp = self.prep_phrase(depth + 1)
            np = _node("NP", np, pp)
        return np, number

    def prep_phrase(self, depth: int = 0) -> Tree:
        obj, _ = self.noun_phrase(depth=depth + 1)
        return _node("PP", _leaf("IN", self.choice(PREPS)), obj)

    def subject(self) -> tuple[Tree, str, str | None]:
        """Returns (tree, agreement, pronoun or None)."""
        if self.rng.random() < 0.6:
            pron = self.choice(sorted(PRONOUNS))
            return _node("NP", _leaf("PRP", pron)), PRONOUNS[pron], pron
        np, num = self.noun_phrase()
        return np, num, None

    def obj(self) -> Tree:
        r = self.rng.random()
        if r < 0.2:
            return _node("NP", _leaf("PRP", self.choice(["it", "them"])))
        return self.noun_phrase(depth=1)[0]

    def verb_phrase(self, agr: str, pron: str | None) -> Tree:
        r = self.rng.random()
        base, third = self.choice(VERBS)
        if r < 0.35:
            vp = _node("VP", _leaf("VBZ" if agr == "3" else "VBP", third if agr == "3" else base), self.obj())
        elif r < 0.55:
            aux = _leaf("VBZ", "does") if agr == "3" else _leaf("VBP", "do")
            vp = _node("VP", aux, _leaf("RB", "n't"), _node("VP", _leaf("VB", base), self.obj()))
        elif r < 0.75:
            modal = "'ll" if pron in ("i", "you", "we", "they") else "will"
            vp = _node("VP", _leaf("MD", modal), _node("VP", _leaf("VB", base), self.obj()))
        else:
            cop = BE[agr] if pron is not None else ("is" if agr == "3" else "are")
            tag = "VBZ" if agr == "3" else "VBP"
            vp = _node("VP", _leaf(tag, cop), _node("ADJP", _leaf("JJ", self.choice(PREDS))))
        if self.rng.random() < 0.2:
            vp = _node("VP", vp, self.prep_phrase())
        return vp

    def sentence(self) -> Tree:
        subj, agr, pron = self.subject()
        kids = [subj, self.verb_phrase(agr, pron)]
        if self.rng.random() < 0.15:
            kids.insert(0, _node("INTJ", _leaf("UH", self.choice(INTJ))))
        return _node("S", *kids)


@dataclass
class ToyData:
    treebank: list[Tree]
    corpus: list[list[str]]  # original (unsplit) tokenization
    test: list[list[str]]  # original tokenization
    lattices: list[Lattice]
    refs: list[tuple[str, list[str]]]
    vocab: list[str]  # treebank tokenization


def lexicon() -> list[str]:
    words = set(SG_NOUNS) | set(PL_NOUNS) | set(ADJS) | set(PREDS) | set(PREPS) | set(INTJ)
    for base, third in VERBS:
        words |= {base, third}
    words |= set(PRONOUNS) | set(BE.values()) | {"them", "the", "a", "my", "do", "does", "n't",
                                                  "'ll", "will", "is", "are"}
    # lattice confusions outside the grammar
    words |= {"its", "were", "there", "his"}
    return sorted(words)


def _confusions(word: str) -> list[str]:
    pairs = [(b, t) for b, t in VERBS] + list(zip(SG_NOUNS[:5], PL_NOUNS[:5]))
    out = []
    for a, b in pairs:
        if word == a:
            out.append(b)
        elif word == b:
            out.append(a)
    extra = {"don't": ["doesn't"], "doesn't": ["don't"], "the": ["a"], "a": ["the"],
             "i'll": ["i"], "it's": ["its"], "i'm": ["i"], "in": ["on"], "on": ["in"],
             "we're": ["were"], "they're": ["there"], "he's": ["his"]}
    out += extra.get(word, [])
    return out


def unigram_logprobs(corpus: list[list[str]]) -> dict[str, float]:
    counts = Counter(w for s in corpus for w in s + [EOS])
    total = sum(counts.values())
    return {w: math.log(c / total) for w, c in counts.items()}


def make_lattice(ref: list[str], lm: dict[str, float], rng: random.Random, utterance: str) -> Lattice:
    """Reference chain plus confusable alternatives on some positions.

    Alternatives get acoustic scores close to the reference so that the
    language model decides. The final link carries ``</s>``.
    """
    floor = min(lm.values()) - 1.0
    nodes = {0: 0.0}
    links: list[Link] = []
    t = 0.0
    for i, w in enumerate(ref):
        t_next = t + 0.2 + 0.05 * len(w)
        nodes[i + 1] = round(t_next, 3)
        links.append(Link(len(links), i, i + 1, w, -rng.uniform(20.0, 40.0), lm.get(w, floor)))
        for alt in _confusions(w):
            if rng.random() < 0.6:
                am = links[-1].am + rng.uniform(-3.0, 2.0)
                links.append(Link(len(links), i, i + 1, alt, am, lm.get(alt, floor)))
        t = t_next
    n = len(ref)
    nodes[n + 1] = round(t + 0.1, 3)
    links.append(Link(len(links), n, n + 1, EOS, 0.0, lm[EOS]))
    return Lattice(nodes, links, utterance)


def generate(seed: int = 0, n_treebank: int = 200, n_corpus: int = 600, n_test: int = 60,
             n_lattices: int = 20, tmap: TokenMap | None = None) -> ToyData:
    tmap = tmap or TokenMap.default()
    rng = random.Random(seed)
    g = ToyGrammar(rng)
    treebank = [g.sentence() for _ in range(n_treebank)]
    # the text corpus contains the treebank sentences plus fresh ones
    extra = [g.sentence().words() for _ in range(n_corpus - n_treebank)]
    corpus = [tmap.denormalize(t.words()) for t in treebank] + [tmap.denormalize(w) for w in extra]
    test = [tmap.denormalize(g.sentence().words()) for _ in range(n_test)]
    lm = unigram_logprobs(corpus)
    lattices = []
    refs = []
    for i, sent in enumerate(test[:n_lattices]):
        uid = f"toy-{i:03d}"
        lattices.append(make_lattice(sent, lm, rng, uid))
        refs.append((uid, sent))
    return ToyData(treebank, corpus, test, lattices, refs, lexicon())


def write_toy(out: str | Path, seed: int = 0, **kwargs) -> ToyData:
    out = Path(out)
    (out / "lattices").mkdir(parents=True, exist_ok=True)
    data = generate(seed, **kwargs)
    write_treebank(out / "treebank.txt", data.treebank, mark_heads=False)
    write_corpus(out / "corpus.txt", data.corpus)
    write_corpus(out / "test.txt", data.test)
    write_corpus(out / "refs.txt", ([uid] + words for uid, words in data.refs))
    (out / "vocab.txt").write_text("".join(w + "\n" for w in data.vocab), encoding="utf-8")
    for lat in data.lattices:
        write_lattice_file(out / "lattices" / f"{lat.utterance}.lat", lat)
    return data
