"""Structured language model: component models and derivations.

A sentence is generated left to right. For each position the word predictor
proposes ``w_k`` from the two rightmost exposed heads, the tagger assigns
``t_k``, and the parser then runs a phase of adjoin actions on the top two
heads, ending with ``NULL``. Every decision is a factor of ``P(W, T)``.

Heads are ``(headword, label)`` pairs. ``<s>`` is seeded as a permanent
bottom head that never adjoins. After ``</s>`` is predicted and pushed, the
parser may only adjoin until a single root spans the sentence and ``</s>``.
"""

from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from pathlib import Path
from typing import Iterable, Sequence

from ..corpus import BOS, EOS, Tree, Vocabulary, is_binary_headed
from ..ngram import BOUNDARY, ContextChain, DIModel, di_train, split_heldout

logger = logging.getLogger(__name__)

Head = tuple  # (headword, label)

NULL = "NULL"
TOP = "TOP"
BOS_HEAD: Head = (BOS, BOS)
SENTINEL: Head = (BOUNDARY, BOUNDARY)

PREDICTOR_CHAIN = ContextChain((2, 1, 0))
TAGGER_CHAIN = ContextChain((3, 2, 1))
PARSER_CHAIN = ContextChain((2, 1, 0))

CONTAINER_VERSION = 1


class IllegalActionError(ValueError):
    pass


class SLMError(ValueError):
    pass


def adjoin_left(label: str) -> str:
    return "AL:" + label


def adjoin_right(label: str) -> str:
    return "AR:" + label


def is_adjoin(action: str) -> bool:
    return action.startswith("AL:") or action.startswith("AR:")


def action_label(action: str) -> str:
    return action[3:]


def all_actions(labels: Iterable[str]) -> list[str]:
    labels = list(labels)
    return [NULL] + [adjoin_left(l) for l in labels] + [adjoin_right(l) for l in labels]


def real_heads(heads: Sequence[Head]) -> int:
    """Heads above the ``<s>`` seed."""
    return len(heads) - 1


def adjoin(heads: tuple, action: str) -> tuple:
    if real_heads(heads) < 2:
        raise IllegalActionError(f"{action} needs two exposed heads above <s>, have {real_heads(heads)}")
    left, right = heads[-2], heads[-1]
    label = action_label(action)
    if action.startswith("AL:"):
        new = (left[0], label)
    elif action.startswith("AR:"):
        new = (right[0], label)
    else:
        raise IllegalActionError(f"not an adjoin action: {action!r}")
    return heads[:-2] + (new,)


def top2(heads: Sequence[Head]) -> tuple[Head, Head]:
    h0 = heads[-1] if heads else SENTINEL
    h1 = heads[-2] if len(heads) >= 2 else SENTINEL
    return h0, h1


class NullParser:
    """Parser that always answers ``NULL`` (used for the trigram-equivalent mode)."""

    events = (NULL,)

    def logprob(self, context, action) -> float:
        return 0.0 if action == NULL else -math.inf


class SLModel:
    """Word predictor, tagger and parser over exposed heads. Immutable after training."""

    def __init__(self, predictor: DIModel, tagger: DIModel, parser, vocab: Vocabulary,
                 tags: Sequence[str], labels: Sequence[str]):
        self.predictor = predictor
        self.tagger = tagger
        self.parser = parser
        self.vocab = vocab
        self.tags = tuple(tags)
        self.labels = tuple(labels)
        self.actions = tuple(all_actions(self.labels)) if not isinstance(parser, NullParser) else (NULL,)
        self._tag_cache: dict = {}
        self._act_cache: dict = {}

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_tag_cache"] = {}
        state["_act_cache"] = {}
        return state

    # -- factors -----------------------------------------------------------

    def map_word(self, word: str) -> str:
        return self.vocab.map_token(word)

    def predict_logprob(self, heads: Sequence[Head], word: str) -> float:
        return self.predictor.logprob(top2(heads), word)

    def tag_logprobs(self, heads: Sequence[Head], word: str) -> list[tuple[str, float]]:
        if word == EOS:
            return [(EOS, 0.0)]
        h0, h1 = top2(heads)
        key = (word, h0[1], h1[1])
        out = self._tag_cache.get(key)
        if out is None:
            out = [(t, self.tagger.logprob(key, t)) for t in self.tags]
            self._tag_cache[key] = out
        return out

    def tag_logprob(self, heads: Sequence[Head], word: str, tag: str) -> float | None:
        """Log factor of ``tag``; ``None`` when the tag is forced (``</s>``)."""
        if word == EOS:
            if tag != EOS:
                raise SLMError("</s> must carry the </s> tag")
            return None
        h0, h1 = top2(heads)
        return self.tagger.logprob((word, h0[1], h1[1]), tag)

    def action_logprobs(self, heads: tuple, final: bool) -> list[tuple[str, float]] | None:
        """Legal parser moves with log factors, or ``None`` when ``NULL`` is forced.

        Outside the final phase all moves are legal once two heads sit above
        ``<s>``. In the final phase only adjoins are legal and their
        probabilities are renormalized.
        """
        if real_heads(heads) < 2:
            return None
        ctx = (heads[-1], heads[-2])
        key = (ctx, final)
        out = self._act_cache.get(key)
        if out is not None:
            return out
        scored = [(a, self.parser.logprob(ctx, a)) for a in self.actions]
        if final:
            adj = [(a, lp) for a, lp in scored if is_adjoin(a) and lp > -math.inf]
            if adj:
                z = math.log(sum(math.exp(lp) for _, lp in adj))
                adj = [(a, lp - z) for a, lp in adj]
            out = adj
        else:
            out = [(a, lp) for a, lp in scored if lp > -math.inf]
        self._act_cache[key] = out
        return out

    def action_logprob(self, heads: tuple, final: bool, action: str) -> float | None:
        options = self.action_logprobs(heads, final)
        if options is None:
            if action != NULL:
                raise IllegalActionError(f"{action} illegal with {real_heads(heads)} head(s) above <s>")
            return None
        for a, lp in options:
            if a == action:
                return lp
        raise IllegalActionError(f"{action} illegal here (final={final})")

    # -- vocabulary / io ---------------------------------------------------

    def with_vocabulary(self, words: Iterable[str]) -> "SLModel":
        """Closed-vocabulary union with ``words`` (used for parse transfer)."""
        vocab = self.vocab.union(words)
        return SLModel(self.predictor.with_events(vocab.predictable()), self.tagger, self.parser,
                       vocab, self.tags, self.labels)

    def save(self, path: str | Path) -> None:
        meta = {"version": CONTAINER_VERSION, "vocab": self.vocab.tokens, "closed": self.vocab.closed,
                "tags": list(self.tags), "labels": list(self.labels),
                "null_parser": isinstance(self.parser, NullParser)}
        members = [("meta.json", json.dumps(meta, indent=1).encode("utf-8")),
                   ("predictor.di", self.predictor.to_bytes()),
                   ("tagger.di", self.tagger.to_bytes())]
        if not isinstance(self.parser, NullParser):
            members.append(("parser.di", self.parser.to_bytes()))
        with zipfile.ZipFile(path, "w") as zf:
            for name, data in members:
                # fixed timestamp keeps the container byte-reproducible
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, data)

    @classmethod
    def load(cls, path: str | Path) -> "SLModel":
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("version") != CONTAINER_VERSION:
                raise SLMError(f"{path}: unsupported SLM container version {meta.get('version')}")
            predictor = DIModel.from_bytes(zf.read("predictor.di"))
            tagger = DIModel.from_bytes(zf.read("tagger.di"))
            parser = NullParser() if meta["null_parser"] else DIModel.from_bytes(zf.read("parser.di"))
        tokens = meta["vocab"]
        vocab = Vocabulary([t for t in tokens if t not in (BOS, EOS, "<unk>")], closed=meta["closed"])
        return cls(predictor, tagger, parser, vocab, meta["tags"], meta["labels"])

    def dump_text(self) -> str:
        out = io.StringIO()
        out.write(f"# SLM tags={len(self.tags)} labels={len(self.labels)} words={len(self.vocab)}\n")
        for name, m in (("predictor", self.predictor), ("tagger", self.tagger), ("parser", self.parser)):
            out.write(f"## {name}\n")
            out.write(m.dump_text() if isinstance(m, DIModel) else "null parser\n")
        return out.getvalue()


# ---------------------------------------------------------------------------
# derivations

def tree_derivation(tree: Tree) -> tuple[str, ...]:
    """Unique operation sequence that builds ``tree`` (binary, head-annotated).

    Ops are ``"W:word"``, ``"T:tag"`` and parser actions; every parser phase
    ends in ``NULL``. The sentence root is joined to ``</s>`` with
    ``AL:TOP`` in the final phase.
    """
    if not is_binary_headed(tree):
        raise SLMError(f"tree is not binary and head-annotated: {tree}")
    ops: list[str] = []

    def walk(node: Tree) -> None:
        if node.is_preterminal:
            ops.extend(("W:" + node.word, "T:" + node.label))
            return
        walk(node.children[0])
        # left subtree complete: close the phase of its last word
        ops.append(NULL)
        walk(node.children[1])
        ops.append((adjoin_left if node.head_child == 0 else adjoin_right)(node.label))

    walk(tree)
    ops.append(NULL)
    ops.extend(("W:" + EOS, "T:" + EOS, adjoin_left(TOP), NULL))
    return tuple(ops)


def replay(ops: Sequence[str], model: SLModel | None = None):
    """Re-run a derivation from ``<s>``.

    Returns ``(heads, logprob, events)`` where ``events`` lists
    ``(component, context, event)`` for every non-forced factor. ``logprob``
    is accumulated in the same order the search uses, so it matches a
    searched prefix bit for bit; it is 0 when no model is given.
    """
    state = ((BOS_HEAD,), False, None)
    lp = 0.0
    events = []
    for op in ops:
        if model is not None and op.startswith("W:"):
            op = "W:" + model.map_word(op[2:])
        heads, final, word = state
        if op.startswith("T:") and final and op != "T:" + EOS:
            raise SLMError("</s> must carry the </s> tag")
        if final and op == NULL and real_heads(heads) >= 2:
            raise IllegalActionError("NULL before the final phase completed")
        event, state = _op_event(op, state)
        if event is not None:
            events.append(event)
        if model is None:
            continue
        if op.startswith("W:"):
            lp += model.predict_logprob(heads, op[2:])
        elif op.startswith("T:"):
            if not final:
                lp += model.tag_logprob(heads, word, op[2:])
        else:
            factor = model.action_logprob(heads, final, op)
            if factor is not None:
                lp += factor
    return state[0], lp, events


def derivation_tree(ops: Sequence[str]) -> Tree:
    """Rebuild the tree of a derivation, with the ``</s>`` leaf removed."""
    stack: list[Tree] = []
    word = None
    for op in ops:
        if op.startswith("W:"):
            word = op[2:]
        elif op.startswith("T:"):
            stack.append(Tree(op[2:], word=word))
        elif op != NULL:
            right = stack.pop()
            left = stack.pop()
            hc = 0 if op.startswith("AL:") else 1
            stack.append(Tree(action_label(op), (left, right), headword=(left, right)[hc].head, head_child=hc))
    if len(stack) != 1:
        raise SLMError(f"derivation leaves {len(stack)} subtrees; not a complete parse")
    return _strip_eos(stack[0])


def _strip_eos(node: Tree) -> Tree:
    if node.is_preterminal:
        if node.word == EOS:
            raise SLMError("empty sentence has no parse")
        return node
    left, right = node.children
    if right.is_preterminal and right.word == EOS:
        return left
    right = _strip_eos(right)
    kids = (left, right)
    return Tree(node.label, kids, headword=kids[node.head_child].head, head_child=node.head_child)


# ---------------------------------------------------------------------------
# training


def _op_event(op: str, state: tuple):
    """One replay step: returns ``(event or None, next_state)``.

    ``state`` is ``(heads, final, word)``; events are ``(component, context, event)``.
    """
    heads, final, word = state
    if op.startswith("W:"):
        word = op[2:]
        return ("predictor", top2(heads), word), (heads, word == EOS, word)
    if op.startswith("T:"):
        tag = op[2:]
        event = None
        if not final:
            h0, h1 = top2(heads)
            event = ("tagger", (word, h0[1], h1[1]), tag)
        return event, (heads + ((word, tag),), final, word)
    event = None
    if real_heads(heads) >= 2:
        event = ("parser", (heads[-1], heads[-2]), op)
    if op != NULL:
        heads = adjoin(heads, op)
    return event, (heads, final, word)


def collect_events(derivations: Iterable[tuple[Sequence[str], float]]) -> dict:
    """Weighted event counts of many derivations, grouped by component.

    Derivations are walked in sorted order as an implicit prefix trie, so a
    shared prefix is replayed once; each node's weight is the total weight of
    the derivations passing through it, summed as nodes are popped.
    """
    counts = {"predictor": {}, "tagger": {}, "parser": {}}

    def flush(node):
        event, acc = node
        if event is not None and acc != 0:
            comp, ctx, ev = event
            tab = counts[comp]
            tab[ctx, ev] = tab.get((ctx, ev), 0.0) + acc

    merged: dict[tuple, float] = {}
    for ops, weight in derivations:
        ops = tuple(ops)
        merged[ops] = merged.get(ops, 0.0) + weight
    nodes: list[list] = []  # per depth: [event, accumulated weight]
    states = [((BOS_HEAD,), False, None)]
    prev: tuple = ()
    for ops in sorted(merged):
        lcp = 0
        for a, b in zip(prev, ops):
            if a != b:
                break
            lcp += 1
        while len(nodes) > lcp:
            node = nodes.pop()
            flush(node)
            if nodes:
                nodes[-1][1] += node[1]
        del states[lcp + 1:]
        for op in ops[lcp:]:
            event, state = _op_event(op, states[-1])
            states.append(state)
            nodes.append([event, 0.0])
        if nodes:
            nodes[-1][1] += merged[ops]
        prev = ops
    while nodes:
        node = nodes.pop()
        flush(node)
        if nodes:
            nodes[-1][1] += node[1]
    return {comp: [(ctx, ev, w) for (ctx, ev), w in tab.items()] for comp, tab in counts.items()}


def train_components(train: list[tuple[Sequence[str], float]], held: list[tuple[Sequence[str], float]],
                     vocab: Vocabulary, tags: Sequence[str], labels: Sequence[str]) -> SLModel:
    """Fit the three deleted-interpolation models from weighted derivations."""
    tr = collect_events(train)
    ho = collect_events(held)
    predictor = di_train(tr["predictor"], PREDICTOR_CHAIN, ho["predictor"], vocab.predictable())
    tagger = di_train(tr["tagger"], TAGGER_CHAIN, ho["tagger"], tags)
    parser = di_train(tr["parser"], PARSER_CHAIN, ho["parser"], all_actions(labels))
    return SLModel(predictor, tagger, parser, vocab, tags, labels)


def init_from_treebank(trees: Sequence[Tree], vocab: Vocabulary | None = None,
                       heldout_fraction: float = 0.05) -> SLModel:
    """Gather initial statistics from binarized, head-annotated trees."""
    if not trees:
        raise SLMError("empty treebank")
    derivs = [tree_derivation(t) for t in trees]
    words = [t.words() for t in trees]
    if vocab is None:
        vocab = Vocabulary.from_sentences(words)
    else:
        for sent in words:
            for w in sent:
                vocab.map_token(w)
    tags = sorted({tag for t in trees for _, tag in t.leaves()})
    labels = set()

    def internal(node: Tree):
        if not node.is_preterminal:
            labels.add(node.label)
            for c in node.children:
                internal(c)

    for t in trees:
        internal(t)
    labels = sorted(labels | {TOP})
    if not vocab.closed:
        derivs = [_map_ops(d, vocab) for d in derivs]
    train, held = split_heldout(derivs, heldout_fraction)
    return train_components([(d, 1.0) for d in train], [(d, 1.0) for d in held], vocab, tags, labels)


def _map_ops(ops: Sequence[str], vocab: Vocabulary) -> tuple[str, ...]:
    return tuple("W:" + vocab.map_token(op[2:]) if op.startswith("W:") else op for op in ops)


def trigram_equivalent_model(sentences: Sequence[Sequence[str]], vocab: Vocabulary | None = None,
                             heldout_fraction: float = 0.05, label: str = "X") -> SLModel:
    """SLM that never adjoins and uses a single tag/label symbol.

    Its word predictor sees exactly the trigram history, so its word
    probabilities equal a deleted-interpolation trigram's trained on the
    same sentences with the same held-out split.
    """
    if vocab is None:
        vocab = Vocabulary.from_sentences(sentences)

    def flat(sent):
        ops = []
        for w in sent:
            ops.extend(("W:" + vocab.map_token(w), "T:" + label, NULL))
        ops.extend(("W:" + EOS, "T:" + EOS))
        return ops

    train, held = split_heldout([flat(s) for s in sentences], heldout_fraction)
    tr = collect_events((d, 1.0) for d in train)
    ho = collect_events((d, 1.0) for d in held)
    predictor = di_train(tr["predictor"], PREDICTOR_CHAIN, ho["predictor"], vocab.predictable())
    tagger = di_train(tr["tagger"], TAGGER_CHAIN, ho["tagger"], [label])
    return SLModel(predictor, tagger, NullParser(), vocab, [label], [label])

