"""Synchronous multi-stack search over word-parse prefixes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..corpus import EOS, Tree
from .model import (BOS_HEAD, NULL, IllegalActionError, SLModel, adjoin, derivation_tree,
                    real_heads)

logger = logging.getLogger(__name__)


class SearchError(RuntimeError):
    """The stacks emptied; widen the beams."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class Beams:
    """Pruning knobs for the SLM stacks.

    ``stack_depth`` caps entries per stack (``None`` = unbounded),
    ``stack_logp`` caps the log-probability spread within a stack and
    ``phase_beam`` prunes partial parser phases against the best
    continuation seen for the same word.
    """

    stack_depth: int | None = 20
    stack_logp: float = 12.0
    phase_beam: float = 10.0

    @classmethod
    def exhaustive(cls) -> "Beams":
        return cls(None, math.inf, math.inf)

    @classmethod
    def parse(cls, text: str) -> "Beams":
        """Read ``key=value`` lines (``stack-depth-threshold`` etc.)."""
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
        depth = values.get("stack-depth-threshold", "20")
        return cls(None if depth in ("none", "inf") else int(depth),
                   float(values.get("stack-logP-threshold", 12.0)),
                   float(values.get("phase-beam", 10.0)))

    @classmethod
    def load(cls, path: str | Path) -> "Beams":
        return cls.parse(Path(path).read_text(encoding="utf-8"))


class ParsePrefix:
    """Word-parse k-prefix: exposed heads, log P(W_k T_k) and the derivation so far."""

    __slots__ = ("k", "heads", "logprob", "ops", "final")

    def __init__(self, k: int, heads: tuple, logprob: float, ops: tuple, final: bool = False):
        self.k = k
        self.heads = heads
        self.logprob = logprob
        self.ops = ops
        self.final = final

    @classmethod
    def initial(cls) -> "ParsePrefix":
        return cls(0, (BOS_HEAD,), 0.0, ())

    @property
    def complete(self) -> bool:
        return self.final and real_heads(self.heads) == 1

    def sort_key(self):
        return (-self.logprob, self.ops)

    def tree(self) -> Tree:
        return derivation_tree(self.ops)

    def __repr__(self) -> str:
        return f"ParsePrefix(k={self.k}, heads={self.heads}, logprob={self.logprob:.4f})"


def apply_action(prefix: ParsePrefix, action: str, model: SLModel | None = None) -> ParsePrefix:
    """Apply one parser move to a prefix in its parser phase.

    With a model the parser factor is added to ``logprob``. ``NULL`` leaves
    the heads alone and closes the phase.
    """
    lp = prefix.logprob
    if model is not None:
        factor = model.action_logprob(prefix.heads, prefix.final, action)
        if factor is not None:
            lp += factor
    if action == NULL:
        return ParsePrefix(prefix.k, prefix.heads, lp, prefix.ops + (NULL,), prefix.final)
    return ParsePrefix(prefix.k, adjoin(prefix.heads, action), lp, prefix.ops + (action,), prefix.final)


def extend_with_word(prefix: ParsePrefix, model: SLModel, word: str, beams: Beams) -> list[ParsePrefix]:
    """All (tag, parser phase) continuations of ``prefix`` after predicting ``word``.

    Each result has consumed ``k + 1`` words and closed its parser phase.
    Partial phases more than ``beams.phase_beam`` below the best partial of
    the same adjoin depth are dropped, as are finished continuations that far
    below the best finished one; the best always survives. With a finite
    ``beams.stack_depth`` each adjoin depth also keeps only that many partials.
    """
    if prefix.final:
        raise IllegalActionError("prefix already consumed </s>")
    word = model.map_word(word)
    final = word == EOS
    k = prefix.k + 1
    base = prefix.logprob + model.predict_logprob(prefix.heads, word)
    level = []
    for tag, tlp in model.tag_logprobs(prefix.heads, word):
        level.append((prefix.heads + ((word, tag),), base + tlp, prefix.ops + ("W:" + word, "T:" + tag)))
    results: list[ParsePrefix] = []
    beam = beams.phase_beam
    while level:
        # partial phases compete with others holding the same number of adjoins
        best = max(lp for _, lp, _ in level)
        if beams.stack_depth is not None and len(level) > beams.stack_depth:
            level = sorted(level, key=lambda item: (-item[1], item[2]))[: beams.stack_depth]
        nxt = []
        for heads, lp, ops in level:
            if lp < best - beam:
                continue
            options = model.action_logprobs(heads, final)
            if options is None:
                results.append(ParsePrefix(k, heads, lp, ops + (NULL,), final))
                continue
            for action, alp in options:
                if action == NULL:
                    results.append(ParsePrefix(k, heads, lp + alp, ops + (NULL,), final))
                else:
                    nxt.append((adjoin(heads, action), lp + alp, ops + (action,)))
        level = nxt
    if not results:
        return results
    top = max(r.logprob for r in results)
    return [r for r in results if r.logprob >= top - beam]


def prune(prefixes: list[ParsePrefix], beams: Beams) -> list[ParsePrefix]:
    """Stack pruning: sort best-first (ties by derivation), cap depth and spread."""
    if not prefixes:
        return []
    prefixes = sorted(prefixes, key=ParsePrefix.sort_key)
    top = prefixes[0].logprob
    kept = [p for p in prefixes if p.logprob >= top - beams.stack_logp]
    if beams.stack_depth is not None:
        kept = kept[: beams.stack_depth]
    return kept


def advance(stack: list[ParsePrefix], model: SLModel, word: str, beams: Beams) -> list[ParsePrefix]:
    out: list[ParsePrefix] = []
    for prefix in stack:
        out.extend(extend_with_word(prefix, model, word, beams))
    return prune(out, beams)


def _logsumexp(values) -> float:
    values = list(values)
    if not values:
        return -math.inf
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(sum(math.exp(v - m) for v in values))


def posterior_weights(stack: Sequence[ParsePrefix]) -> list[float]:
    """rho(W_k, T_k): joint probabilities renormalized over the stack."""
    z = _logsumexp(p.logprob for p in stack)
    return [math.exp(p.logprob - z) for p in stack]


def slm_word_logprob(stack: Sequence[ParsePrefix], model: SLModel, word: str) -> float:
    """log of sum over the stack of P(word | h_0, h_-1) * rho."""
    if not stack:
        raise SearchError("empty stack: no parse survived; widen the beams")
    word = model.map_word(word)
    z = _logsumexp(p.logprob for p in stack)
    return _logsumexp(p.logprob - z + model.predict_logprob(p.heads, word) for p in stack)


def slm_word_prob(stack: Sequence[ParsePrefix], model: SLModel, word: str) -> float:
    return math.exp(slm_word_logprob(stack, model, word))


def slm_sentence_logprob(model: SLModel, sentence: Sequence[str], beams: Beams) -> tuple[float, list[float]]:
    """Left-to-right log-probability including ``</s>``, and the per-word terms."""
    words = [model.map_word(w) for w in sentence] + [EOS]
    stack = [ParsePrefix.initial()]
    per_word = []
    for pos, w in enumerate(words):
        if not stack:
            raise SearchError(f"stack starvation before position {pos}", pos)
        per_word.append(slm_word_logprob(stack, model, w))
        if pos < len(words) - 1:
            stack = advance(stack, model, w, beams)
    return sum(per_word), per_word


def slm_ppl(model: SLModel, corpus: Sequence[Sequence[str]], beams: Beams) -> float:
    total = 0.0
    n = 0
    for sent in corpus:
        lp, per = slm_sentence_logprob(model, sent, beams)
        total += lp
        n += len(per)
    return math.exp(-total / n)


def complete_parses(model: SLModel, sentence: Sequence[str], beams: Beams) -> list[ParsePrefix]:
    """Complete parses surviving the search, best first."""
    words = [model.map_word(w) for w in sentence] + [EOS]
    stack = [ParsePrefix.initial()]
    for pos, w in enumerate(words):
        stack = advance(stack, model, w, beams)
        if not stack:
            raise SearchError(f"stack starvation at position {pos}", pos)
    done = [p for p in stack if p.complete]
    done.sort(key=ParsePrefix.sort_key)
    return done


def best_parse(model: SLModel, sentence: Sequence[str], beams: Beams) -> Tree:
    """Most probable complete parse among the survivors (ties: smallest derivation)."""
    done = complete_parses(model, sentence, beams)
    if not done:
        raise SearchError("no complete parse survived; widen the beams")
    return done[0].tree()
