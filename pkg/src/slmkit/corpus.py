"""Tokenization maps, vocabularies and treebank handling.

Two tokenizations are in play: the recognizer ("CSR") one, where clitics stay
attached (``don't``), and the treebank one, where they are split (``do n't``).
:class:`TokenMap` converts between them; :func:`read_treebank` and
:func:`binarize_and_headify` turn bracketed parses into the binary,
head-annotated trees the structured LM is initialized from.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"


class TokenMapError(ValueError):
    pass


class VocabularyError(KeyError):
    """Raised for a token outside a closed vocabulary."""

    def __init__(self, token: str):
        super().__init__(token)
        self.token = token

    def __str__(self) -> str:
        return f"out-of-vocabulary token {self.token!r}"


class TreebankError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------------------
# token maps


@dataclass(frozen=True)
class TokenMap:
    """Ordered split rules ``source -> (part1, part2)``.

    Rules must not cascade: no part may be the source of another rule, the
    first and second parts come from disjoint token sets, and no two rules
    share a replacement pair. Under those constraints ``undo(apply(x)) == x``
    for any sequence that does not already contain a replacement pair.
    """

    rules: tuple[tuple[str, tuple[str, str]], ...] = ()
    _split: dict = field(init=False, repr=False, compare=False)
    _merge: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        split: dict[str, tuple[str, str]] = {}
        merge: dict[tuple[str, str], str] = {}
        for source, pair in self.rules:
            if len(pair) != 2:
                raise TokenMapError(f"rule for {source!r} must have two parts")
            if source in split:
                raise TokenMapError(f"duplicate rule source {source!r}")
            if pair in merge:
                raise TokenMapError(f"replacement pair {pair} used by {merge[pair]!r} and {source!r}")
            split[source] = pair
            merge[pair] = source
        firsts = {p[0] for p in split.values()}
        seconds = {p[1] for p in split.values()}
        for part in firsts | seconds:
            if part in split:
                raise TokenMapError(f"replacement token {part!r} is itself a rule source")
        if firsts & seconds:
            raise TokenMapError(f"tokens used as both first and second part: {sorted(firsts & seconds)}")
        object.__setattr__(self, "_split", split)
        object.__setattr__(self, "_merge", merge)

    @classmethod
    def parse(cls, text: str) -> "TokenMap":
        rules = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                source, parts = raw.strip("\n").split("\t")
                first, second = parts.split(" ")
            except ValueError:
                raise TokenMapError(f"line {lineno}: expected 'source<TAB>part1 part2', got {raw!r}") from None
            rules.append((source.strip(), (first, second)))
        return cls(tuple(rules))

    @classmethod
    def load(cls, path: str | Path) -> "TokenMap":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "TokenMap":
        from importlib import resources

        text = resources.files("slmkit.data").joinpath("tokenmap.txt").read_text(encoding="utf-8")
        return cls.parse(text)

    def dumps(self) -> str:
        return "".join(f"{src}\t{a} {b}\n" for src, (a, b) in self.rules)

    @property
    def sources(self) -> frozenset[str]:
        return frozenset(self._split)

    @property
    def parts(self) -> frozenset[str]:
        return frozenset(t for pair in self._merge for t in pair)

    def split(self, token: str) -> tuple[str, str] | None:
        return self._split.get(token)

    def normalize(self, tokens: Iterable[str]) -> list[str]:
        out: list[str] = []
        for tok in tokens:
            pair = self._split.get(tok)
            if pair is None:
                out.append(tok)
            else:
                out.extend(pair)
        return out

    def denormalize(self, tokens: Sequence[str]) -> list[str]:
        # leftmost-first, non-overlapping merges
        out: list[str] = []
        i = 0
        n = len(tokens)
        while i < n:
            if i + 1 < n:
                src = self._merge.get((tokens[i], tokens[i + 1]))
                if src is not None:
                    out.append(src)
                    i += 2
                    continue
            out.append(tokens[i])
            i += 1
        return out


def normalize(tokens: Iterable[str], tmap: TokenMap) -> list[str]:
    return tmap.normalize(tokens)


def denormalize(tokens: Sequence[str], tmap: TokenMap) -> list[str]:
    return tmap.denormalize(tokens)


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Dense token <-> id bijection with ``<s>`` = 0 and ``</s>`` = 1.

    In closed mode :meth:`encode` raises :class:`VocabularyError` for unknown
    tokens; in open mode they map to ``<unk>``.
    """

    def __init__(self, tokens: Iterable[str] = (), closed: bool = True):
        self.closed = closed
        self._tokens: list[str] = []
        self._ids: dict[str, int] = {}
        for tok in (BOS, EOS):
            self._add(tok)
        if not closed:
            self._add(UNK)
        for tok in tokens:
            self._add(tok)

    def _add(self, token: str) -> int:
        idx = self._ids.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._tokens.append(token)
            self._ids[token] = idx
        return idx

    @classmethod
    def from_sentences(cls, sentences: Iterable[Sequence[str]], closed: bool = True) -> "Vocabulary":
        # sorted for run-to-run determinism
        seen = sorted({tok for sent in sentences for tok in sent})
        return cls(seen, closed=closed)

    def union(self, tokens: Iterable[str]) -> "Vocabulary":
        new = Vocabulary(self._tokens[2:], closed=self.closed)
        for tok in sorted(set(tokens) - set(self._ids)):
            new._add(tok)
        return new

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._ids

    def __iter__(self) -> Iterator[str]:
        return iter(self._tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens and self.closed == other.closed

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    @property
    def unk_id(self) -> int | None:
        return self._ids.get(UNK)

    def map_token(self, token: str) -> str:
        """Return ``token`` or ``<unk>``; raise in closed mode."""
        if token in self._ids:
            return token
        if self.closed:
            raise VocabularyError(token)
        return UNK

    def encode(self, token: str) -> int:
        return self._ids[self.map_token(token)]

    def decode(self, idx: int) -> str:
        return self._tokens[idx]

    def predictable(self) -> list[str]:
        """Tokens a word predictor distributes mass over (everything but ``<s>``)."""
        return self._tokens[1:]

    def dumps(self) -> str:
        return "".join(t + "\n" for t in self._tokens)


def read_corpus(path: str | Path) -> list[list[str]]:
    """One sentence per line, whitespace separated; blank lines skipped."""
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f if line.strip()]


def write_corpus(path: str | Path, sentences: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sent in sentences:
            f.write(" ".join(sent) + "\n")


# ---------------------------------------------------------------------------
# treebank trees


@dataclass(frozen=True)
class Tree:
    """A treebank node.

    Preterminals carry ``word`` and no children. Internal nodes of binarized,
    head-annotated trees carry ``headword`` and ``head_child`` (0 or 1).
    """

    label: str
    children: tuple["Tree", ...] = ()
    word: str | None = None
    headword: str | None = None
    head_child: int | None = None

    @property
    def is_preterminal(self) -> bool:
        return self.word is not None

    def leaves(self) -> list[tuple[str, str]]:
        """(word, tag) pairs, left to right."""
        if self.is_preterminal:
            return [(self.word, self.label)]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def words(self) -> list[str]:
        return [w for w, _ in self.leaves()]

    def internal_count(self) -> int:
        if self.is_preterminal:
            return 0
        return 1 + sum(c.internal_count() for c in self.children)

    @property
    def head(self) -> str:
        return self.word if self.is_preterminal else self.headword

    def to_string(self, mark_heads: bool = False) -> str:
        if self.is_preterminal:
            return f"({self.label} {self.word})"
        label = self.label
        if mark_heads and self.head_child is not None:
            label += "^" + ("L" if self.head_child == 0 else "R")
        return "(" + label + " " + " ".join(c.to_string(mark_heads) for c in self.children) + ")"

    def __str__(self) -> str:
        return self.to_string()


_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


def _tokenize_sexpr(text: str) -> Iterator[tuple[str, int]]:
    for lineno, line in enumerate(text.splitlines(), 1):
        for m in _TOKEN_RE.finditer(line):
            yield m.group(0), lineno


def read_treebank(text: str) -> list[Tree]:
    """Parse a stream of bracketed trees.

    Internal nodes are ``(LABEL child ...)``, preterminals ``(TAG word)``. A
    label may carry a ``^L``/``^R`` head marker, as written by
    :meth:`Tree.to_string` with ``mark_heads=True``.
    """
    tokens = list(_tokenize_sexpr(text))
    trees: list[Tree] = []
    pos = 0
    last_line = text.count("\n") + 1

    def parse_node() -> Tree:
        nonlocal pos
        tok, line = tokens[pos]
        if tok != "(":
            raise TreebankError(f"expected '(' but found {tok!r}", line)
        pos += 1
        if pos >= len(tokens):
            raise TreebankError("unexpected end of input", last_line)
        tok, line = tokens[pos]
        if tok == ")":
            raise TreebankError("empty tree", line)
        if tok == "(":
            raise TreebankError("node without label", line)
        label = tok
        pos += 1
        children: list[Tree] = []
        word = None
        while True:
            if pos >= len(tokens):
                raise TreebankError("unexpected end of input (unbalanced brackets)", last_line)
            tok, line = tokens[pos]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                children.append(parse_node())
            else:
                if word is not None or children:
                    raise TreebankError(f"unexpected atom {tok!r}", line)
                word = tok
                pos += 1
        if word is not None:
            if children:
                raise TreebankError(f"preterminal {label!r} mixes word and subtrees", line)
            return Tree(label, word=word)
        if not children:
            raise TreebankError(f"node {label!r} has no children", line)
        head_child = None
        if len(label) > 2 and label[-2] == "^" and label[-1] in "LR":
            head_child = 0 if label[-1] == "L" else 1
            label = label[:-2]
            if len(children) != 2:
                raise TreebankError(f"head marker on non-binary node {label!r}", line)
        if head_child is not None:
            return Tree(label, tuple(children), headword=children[head_child].head, head_child=head_child)
        return Tree(label, tuple(children))

    while pos < len(tokens):
        tok, line = tokens[pos]
        if tok == ")":
            raise TreebankError("unbalanced ')'", line)
        trees.append(parse_node())
    return trees


def read_treebank_file(path: str | Path) -> list[Tree]:
    return read_treebank(Path(path).read_text(encoding="utf-8"))


def write_treebank(path: str | Path, trees: Iterable[Tree], mark_heads: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in trees:
            f.write(t.to_string(mark_heads) + "\n")


# ---------------------------------------------------------------------------
# head percolation and binarization


@dataclass(frozen=True)
class HeadRule:
    direction: str  # "left" or "right"
    priority: tuple[str, ...] = ()

    def choose(self, labels: Sequence[str]) -> int:
        order = list(range(len(labels)))
        if self.direction == "right":
            order.reverse()
        for wanted in self.priority:
            for i in order:
                if labels[i] == wanted:
                    return i
        return order[0]


class HeadRules:
    """Head-percolation table: ``LABEL<TAB>leftmost|rightmost|left:A,B|right:A,B``."""

    DEFAULT = HeadRule("right")

    def __init__(self, rules: dict[str, HeadRule] | None = None):
        self.rules = dict(rules or {})

    @staticmethod
    def _parse_spec(spec: str) -> HeadRule:
        spec = spec.strip()
        if spec == "leftmost":
            return HeadRule("left")
        if spec == "rightmost":
            return HeadRule("right")
        if ":" in spec:
            direction, labels = spec.split(":", 1)
            if direction in ("left", "right"):
                return HeadRule(direction, tuple(x for x in labels.split(",") if x))
        raise ValueError(f"bad head rule {spec!r}")

    @classmethod
    def parse(cls, text: str) -> "HeadRules":
        rules = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'LABEL<TAB>rule'")
            rules[parts[0]] = cls._parse_spec(parts[1])
        return cls(rules)

    @classmethod
    def load(cls, path: str | Path) -> "HeadRules":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "HeadRules":
        from importlib import resources

        return cls.parse(resources.files("slmkit.data").joinpath("headrules.txt").read_text(encoding="utf-8"))

    def head_index(self, label: str, child_labels: Sequence[str]) -> int:
        rule = self.rules.get(label)
        if rule is None:
            logger.warning("no head rule for label %r; using rightmost child", label)
            rule = self.DEFAULT
        return rule.choose(child_labels)


def binarize_and_headify(tree: Tree, rules: HeadRules) -> Tree:
    """Return a binary tree whose internal nodes carry (headword, label).

    The head child is the pivot. Right siblings attach first, then left
    siblings, each through a new node with the parent's label. Unary
    internal nodes collapse onto their child, so a one-word tree becomes a
    bare preterminal. Binary nodes already carrying a head marker keep it.
    """
    if tree.is_preterminal:
        return tree
    kids = [binarize_and_headify(c, rules) for c in tree.children]
    if len(kids) == 1:
        return kids[0]
    if len(kids) == 2 and tree.head_child is not None:
        h = tree.head_child
        return Tree(tree.label, tuple(kids), headword=kids[h].head, head_child=h)
    h = rules.head_index(tree.label, [c.label for c in tree.children])
    node = kids[h]
    for right in kids[h + 1:]:
        node = Tree(tree.label, (node, right), headword=node.head, head_child=0)
    for left in reversed(kids[:h]):
        node = Tree(tree.label, (left, node), headword=node.head, head_child=1)
    return node


def is_binary_headed(tree: Tree) -> bool:
    if tree.is_preterminal:
        return True
    if len(tree.children) != 2 or tree.head_child not in (0, 1):
        return False
    if tree.headword != tree.children[tree.head_child].head:
        return False
    return all(is_binary_headed(c) for c in tree.children)
